#include <gtest/gtest.h>

#include "support.hpp"

using namespace partlab;
using testing_support::box_assembly;

namespace {

// Four separated equal cubes.
Assembly four_cubes() {
    return box_assembly({{"a", {0.05, 0.05, 0.05}, {0.3, 0.3, 0.3}, 1},
                         {"b", {0.55, 0.05, 0.05}, {0.8, 0.3, 0.3}, 1},
                         {"c", {0.05, 0.55, 0.05}, {0.3, 0.8, 0.3}, 2},
                         {"d", {0.55, 0.55, 0.05}, {0.8, 0.8, 0.3}, 2}},
                        {"x", "y", "z"});
}

VoxelGrid dense(const Assembly& a, const std::vector<int>& x, int label, int R) {
    VoxelGrid g(R, unit_frame());
    for (std::size_t c = 0; c < x.size(); ++c)
        if (x[c] == label) g |= voxelize(a.components[c], unit_frame(), R);
    return g;
}

std::vector<Assembly> synthetic_set(const std::string& family, int count, std::uint64_t seed) {
    GeneratorConfig g;
    g.families = {family};
    g.count = count;
    g.min_pieces = 2;
    g.max_pieces = 3;
    return synthesize_dataset(g, seed);
}

} // namespace

TEST(LabelingIou, PerfectAndWrong) {
    const auto a = four_cubes();
    VoxelIndex idx(a, 200);
    const std::vector<int> truth{1, 1, 2, 2};
    EXPECT_DOUBLE_EQ(labeling_iou(idx, truth, truth).avg_iou, 1.0);

    const auto r = labeling_iou(idx, std::vector<int>{3, 3, 3, 3}, truth);
    EXPECT_EQ(r.per_label.at(3).iou(), 0.0);
    EXPECT_FALSE(r.per_label.at(3).in_truth);
    EXPECT_DOUBLE_EQ(r.avg_iou, 0.0);
    EXPECT_THROW(labeling_iou(idx, std::vector<int>{1, 1, 2}, truth), ValidationError);
    EXPECT_THROW(labeling_iou(idx, std::vector<int>{1, 0, 2, 2}, truth), ValidationError);
}

TEST(LabelingIou, HalfSwappedIsOneThird) {
    const auto a = four_cubes();
    VoxelIndex idx(a, 200);
    const std::vector<int> truth{1, 1, 2, 2}, pred{1, 2, 1, 2};
    const auto r = labeling_iou(idx, pred, truth);
    for (int l : {1, 2}) {
        const auto p = dense(a, pred, l, 200), t = dense(a, truth, l, 200);
        const double oracle = static_cast<double>(p.and_count(t)) / static_cast<double>(p.or_count(t));
        EXPECT_DOUBLE_EQ(r.per_label.at(l).iou(), oracle);
        EXPECT_NEAR(r.per_label.at(l).iou(), 1.0 / 3.0, 0.01);
    }
}

TEST(LabelingIou, SymmetricOverSharedLabelSets) {
    const auto shapes = synthetic_set("chair", 2, 4);
    Rng rng(12);
    for (const auto& a : shapes) {
        VoxelIndex idx(a, 200);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<int> p(a.size()), t(a.size());
            for (auto& v : p) v = static_cast<int>(rng.uniform_int(1, 3));
            for (auto& v : t) v = static_cast<int>(rng.uniform_int(1, 3));
            for (int l = 1; l <= 3; ++l) p[l - 1] = t[l + 2] = l;
            const auto x = labeling_iou(idx, p, t), y = labeling_iou(idx, t, p);
            EXPECT_DOUBLE_EQ(x.avg_iou, y.avg_iou);
            for (const auto& [l, o] : x.per_label) EXPECT_DOUBLE_EQ(o.iou(), y.per_label.at(l).iou());
        }
    }
}

TEST(Aggregate, MeanAndPooled) {
    EvalReport r1, r2;
    r1.per_label[1] = {10, 20, true};
    r1.per_label[2] = {5, 5, true};
    r1.avg_iou = (0.5 + 1.0) / 2;
    r2.per_label[1] = {30, 40, true};
    r2.per_label[3] = {0, 10, false};
    r2.avg_iou = 0.75;
    const auto d = aggregate({r1, r2});
    EXPECT_DOUBLE_EQ(d.mean_avg_iou, (0.75 + 0.75) / 2);
    EXPECT_DOUBLE_EQ(d.pooled_per_label.at(1), 40.0 / 60.0);
    EXPECT_DOUBLE_EQ(d.pooled_per_label.at(3), 0.0);
    EXPECT_DOUBLE_EQ(d.pooled_avg_iou, (40.0 / 60.0 + 1.0) / 2);
    const auto j = to_json(d);
    EXPECT_TRUE(j.contains("avg_iou"));
    EXPECT_EQ(j["per_shape"].size(), 2u);
}

TEST(Recall, Examples) {
    const auto a = four_cubes();
    VoxelIndex idx(a, 200);
    const std::vector<std::vector<int>> parts{{0, 1}, {2, 3}};
    const std::vector<double> ts{0.1, 0.5, 0.9, 1.0};
    const auto all = hypothesis_recall(idx, parts, parts, ts);
    for (double v : all.recall) EXPECT_EQ(v, 1.0);

    const std::vector<std::vector<int>> none{};
    for (double v : hypothesis_recall(idx, none, parts, ts).recall) EXPECT_EQ(v, 0.0);

    const std::vector<double> best{0.6, 0.0}, t2{0.5, 0.7};
    const auto c = recall_curve(best, t2);
    EXPECT_EQ(c.recall, (std::vector<double>{0.5, 0.0}));

    // one cube of a two-cube part overlaps it at about one half
    const std::vector<std::vector<int>> half{{0}};
    const auto h = hypothesis_recall(idx, half, parts, std::vector<double>{0.45, 0.55});
    EXPECT_EQ(h.recall, (std::vector<double>{0.5, 0.0}));

    EXPECT_THROW(recall_curve(best, std::vector<double>{0.7, 0.5}), ValidationError);
    EXPECT_THROW(recall_curve(best, std::vector<double>{0.0}), ValidationError);
    EXPECT_THROW(recall_curve(std::vector<double>{}, t2), ValidationError);
    EXPECT_EQ(recall_csv(c), "threshold,recall\n0.5000,0.500000\n0.7000,0.000000\n");
}

TEST(Recall, MonotoneInThreshold) {
    Rng rng(31);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> best(static_cast<std::size_t>(rng.uniform_int(1, 20)));
        for (auto& v : best) v = rng.uniform();
        std::vector<double> ts(static_cast<std::size_t>(rng.uniform_int(1, 10)));
        for (auto& v : ts) v = rng.uniform_open();
        std::sort(ts.begin(), ts.end());
        const auto c = recall_curve(best, ts);
        for (std::size_t k = 1; k < c.recall.size(); ++k) EXPECT_LE(c.recall[k], c.recall[k - 1]);
    }
}

TEST(Sweep, RowsAndMonotoneRecall) {
    const auto shapes = synthetic_set("table", 3, 9);
    RunConfig cfg;
    const std::vector<int> budgets{10, 1000};
    const auto rows = sweep_budget(shapes, budgets, cfg);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_LE(rows[0].recall_at_05, rows[1].recall_at_05);
    for (const auto& r : rows) {
        EXPECT_GE(r.avg_iou, 0.0);
        EXPECT_LE(r.avg_iou, 1.0);
    }

    const std::vector<int> one{50};
    EXPECT_EQ(sweep_budget(shapes, one, cfg).size(), 1u);

    // both budgets exceed every node count, so selection is exhaustive
    const std::vector<int> sat{3000, 6000};
    const auto s = sweep_budget(shapes, sat, cfg);
    EXPECT_EQ(s[0].recall_at_05, s[1].recall_at_05);
    EXPECT_EQ(s[0].avg_iou, s[1].avg_iou);
    EXPECT_EQ(sweep_csv(s).substr(0, sweep_csv(s).find('\n')), "budget,recall_at_0.5,avg_iou");

    const std::vector<int> bad{100, 10};
    EXPECT_THROW(sweep_budget(shapes, bad, cfg), ValidationError);
}
