#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "support.hpp"

using namespace partlab;
using testing_support::box_assembly;
using testing_support::BoxSpec;

namespace {

std::vector<int> ids(std::initializer_list<int> l) { return std::vector<int>(l); }

Assembly synth_one(const std::string& family, std::uint64_t seed, int min_pieces = 2, int max_pieces = 3) {
    GeneratorConfig g;
    g.families = {family};
    g.count = 1;
    g.min_pieces = min_pieces;
    g.max_pieces = max_pieces;
    return synthesize_dataset(g, seed).at(0);
}

// Row of ten thin boxes labeled 1, with five wider boxes labeled 2 resting on top.
Assembly two_rows() {
    std::vector<BoxSpec> b;
    for (int i = 0; i < 10; ++i) b.push_back({"a" + std::to_string(i), {0.08 * i, 0, 0}, {0.08 * (i + 1), 0.08, 0.1}, 1});
    for (int i = 0; i < 5; ++i) b.push_back({"b" + std::to_string(i), {0.16 * i, 0.08, 0}, {0.16 * (i + 1), 0.16, 0.1}, 2});
    return box_assembly(b, {"lower", "upper"});
}

} // namespace

TEST(Rng, SplitMix64ReferenceOutputs) {
    SplitMix64 sm(0);
    EXPECT_EQ(sm.next(), 0xe220a8397b1dcdafULL);
    EXPECT_EQ(sm.next(), 0x6e789e6aa1b965f4ULL);
    EXPECT_EQ(sm.next(), 0x06c45d188009454fULL);
}

TEST(Rng, XoshiroMatchesReferenceStream) {
    Rng r(42);
    EXPECT_EQ(r.next(), 0x15780b2e0c2ec716ULL);
    EXPECT_EQ(r.next(), 0x6104d9866d113a7eULL);
    EXPECT_EQ(r.next(), 0xae17533239e499a1ULL);
}

TEST(Rng, UniformRangesAndShuffle) {
    Rng r(5);
    for (int i = 0; i < 2000; ++i) {
        const double u = r.uniform_open();
        EXPECT_GT(u, 0.0);
        EXPECT_LT(u, 1.0);
        const auto k = r.uniform_int(-3, 4);
        EXPECT_GE(k, -3);
        EXPECT_LE(k, 4);
    }
    std::vector<int> v(20);
    std::iota(v.begin(), v.end(), 0);
    auto w = v;
    shuffle(w, r);
    EXPECT_TRUE(std::is_permutation(v.begin(), v.end(), w.begin()));
}

TEST(Criteria, CenterDistanceExamples) {
    const auto a = box_assembly({{"l", {0.1, 0.4, 0.4}, {0.3, 0.6, 0.6}}, {"r", {0.7, 0.4, 0.4}, {0.9, 0.6, 0.6}},
                                 {"o", {0.0, 0.0, 0.0}, {0.2, 0.2, 0.2}}, {"p", {0.2, 0.3, -0.1}, {0.4, 0.5, 0.1}}});
    EXPECT_NEAR(center_distance(a, ids({0}), ids({1})), 0.6, 1e-9);
    EXPECT_NEAR(center_distance(a, ids({0}), ids({0})), 0.0, 1e-12);
    // centroids (0.1,0.1,0.1) and (0.3,0.4,0.0) are 0.2/0.3/-0.1 apart
    EXPECT_NEAR(center_distance(a, ids({2}), ids({3})), std::sqrt(0.04 + 0.09 + 0.01), 1e-9);
    const auto b = box_assembly({{"o", {-0.1, -0.1, -0.1}, {0.1, 0.1, 0.1}}, {"q", {0.2, 0.3, -0.1}, {0.4, 0.5, 0.1}}});
    EXPECT_NEAR(center_distance(b, ids({0}), ids({1})), 0.5, 1e-9);
}

TEST(Criteria, ContactRatioExamples) {
    EXPECT_DOUBLE_EQ(contact_ratio(10, 40, 5), 0.5);
    EXPECT_DOUBLE_EQ(contact_ratio(10, 40, 0), 0.0);
    EXPECT_DOUBLE_EQ(contact_ratio(10, 40, 10), 1.0);
    EXPECT_DOUBLE_EQ(contact_ratio(10, 40, 25), 1.0);
    EXPECT_THROW(contact_ratio(0, 40, 0), ValidationError);

    const auto far = box_assembly({{"a", {0, 0, 0}, {0.2, 0.2, 0.2}}, {"b", {0.7, 0.7, 0.7}, {0.9, 0.9, 0.9}}});
    GroupingContext ctx(far);
    EXPECT_DOUBLE_EQ(ctx.contact_ratio(ids({0}), ids({1})), 0.0);
}

TEST(Criteria, GroupSizeExamples) {
    const auto a = box_assembly({{"a", {0, 0, 0}, {0.5, 0.5, 0.5}}, {"b", {0.5, 0, 0}, {1, 0.3, 0.2}},
                                 {"c", {0.1, 0.6, 0.1}, {0.2, 0.9, 0.2}}});
    GroupingContext ctx(a);
    EXPECT_DOUBLE_EQ(ctx.group_size(ids({0, 1}), ids({2})), 1.0);

    VoxelGrid shape(64, unit_frame()), pair(64, unit_frame());
    for (const auto& c : a.components) shape |= voxelize(c, unit_frame(), 64);
    pair |= voxelize(a.components[0], unit_frame(), 64);
    pair |= voxelize(a.components[2], unit_frame(), 64);
    EXPECT_DOUBLE_EQ(ctx.group_size(ids({0}), ids({2})),
                     static_cast<double>(pair.count()) / static_cast<double>(shape.count()));

    const double single = static_cast<double>(voxelize(a.components[1], unit_frame(), 64).count()) / shape.count();
    EXPECT_DOUBLE_EQ(ctx.group_size(ids({1}), ids({1})), single);
}

TEST(Criteria, SymmetricInOperands) {
    const auto a = synth_one("chair", 3);
    GroupingContext ctx(a);
    const int n = static_cast<int>(a.components.size());
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const auto x = ids({i}), y = ids({j});
            EXPECT_DOUBLE_EQ(center_distance(a, x, y), center_distance(a, y, x));
            EXPECT_DOUBLE_EQ(ctx.contact_ratio(x, y), ctx.contact_ratio(y, x));
            EXPECT_DOUBLE_EQ(ctx.group_size(x, y), ctx.group_size(y, x));
            EXPECT_EQ(ctx.contact(i, j), ctx.contact(j, i));
        }
}

TEST(Hierarchy, CollinearBoxesMergeByLowestId) {
    const auto a = box_assembly({{"0", {0.0, 0.4, 0.4}, {0.3, 0.6, 0.6}},
                                 {"1", {0.3, 0.4, 0.4}, {0.6, 0.6, 0.6}},
                                 {"2", {0.6, 0.4, 0.4}, {0.9, 0.6, 0.6}}});
    GroupingContext ctx(a);
    const auto h = build_hierarchy(ctx, Criterion::CenterDistance);
    ASSERT_EQ(h.nodes.size(), 5u);
    EXPECT_EQ(h.nodes[3].members, ids({0, 1}));
    EXPECT_EQ(h.nodes[3].merge_order, 1);
    EXPECT_EQ(h.nodes[4].members, ids({0, 1, 2}));
    EXPECT_EQ(h.nodes[4].left + h.nodes[4].right, 3 + 2);
}

TEST(Hierarchy, SingleAndTwoComponents) {
    const auto one = box_assembly({{"a", {0.2, 0.2, 0.2}, {0.6, 0.6, 0.6}}});
    GroupingContext c1(one);
    for (auto c : kAllCriteria) {
        const auto h = build_hierarchy(c1, c);
        EXPECT_EQ(h.nodes.size(), 1u);
        EXPECT_EQ(h.num_merges(), 0u);
    }
    const auto two = box_assembly({{"a", {0, 0, 0}, {0.2, 0.2, 0.2}}, {"b", {0.7, 0.7, 0.7}, {0.9, 0.9, 0.9}}});
    GroupingContext c2(two);
    for (auto c : kAllCriteria) {
        const auto h = build_hierarchy(c2, c);
        EXPECT_EQ(h.num_merges(), 1u);
        EXPECT_EQ(h.nodes[2].members, ids({0, 1}));
    }
}

TEST(Hierarchy, CompleteNestedBinaryTrees) {
    for (const std::string fam : {"table", "chair", "cart"}) {
        const auto a = synth_one(fam, 17);
        GroupingContext ctx(a);
        const int n = a.size();
        for (auto crit : kAllCriteria) {
            SCOPED_TRACE(fam + "/" + to_string(crit));
            const auto h = build_hierarchy(ctx, crit);
            ASSERT_EQ(static_cast<int>(h.nodes.size()), 2 * n - 1);
            for (int i = 0; i < n; ++i) {
                EXPECT_EQ(h.nodes[i].members, ids({i}));
                EXPECT_EQ(h.nodes[i].merge_order, 0);
            }
            std::vector<int> all(n);
            std::iota(all.begin(), all.end(), 0);
            EXPECT_EQ(h.nodes[h.root()].members, all);
            EXPECT_EQ(h.nodes[h.root()].parent, -1);
            int prev = 0;
            for (int k = n; k < static_cast<int>(h.nodes.size()); ++k) {
                const auto& nd = h.nodes[k];
                EXPECT_GT(nd.merge_order, prev);
                prev = nd.merge_order;
                std::vector<int> u;
                const auto& l = h.nodes[nd.left].members;
                const auto& r = h.nodes[nd.right].members;
                std::set_union(l.begin(), l.end(), r.begin(), r.end(), std::back_inserter(u));
                EXPECT_EQ(u.size(), l.size() + r.size());
                EXPECT_EQ(nd.members, u);
                EXPECT_EQ(h.nodes[nd.left].parent, k);
                EXPECT_EQ(h.nodes[nd.right].parent, k);
            }
            // every leaf reaches the root through strictly growing sets
            for (int i = 0; i < n; ++i) {
                std::size_t sz = 0;
                for (int x = i; x != -1; x = h.nodes[x].parent) {
                    EXPECT_GT(h.nodes[x].members.size(), sz);
                    EXPECT_TRUE(std::binary_search(h.nodes[x].members.begin(), h.nodes[x].members.end(), i));
                    sz = h.nodes[x].members.size();
                }
                EXPECT_EQ(sz, static_cast<std::size_t>(n));
            }
        }
    }
}

TEST(Selection, DeterministicPerSeed) {
    const auto a = synth_one("table", 4);
    GroupingContext ctx(a);
    const auto x = generate_hypotheses(ctx, 12, 99), y = generate_hypotheses(ctx, 12, 99);
    EXPECT_EQ(hypotheses_to_jsonl(x), hypotheses_to_jsonl(y));
    EXPECT_LE(x.size(), 12u);
}

TEST(Selection, ExhaustiveBudgetReturnsAllMergeNodes) {
    const auto a = synth_one("chair", 8);
    GroupingContext ctx(a);
    std::vector<GroupingHierarchy> hs;
    std::set<std::vector<int>> expect;
    for (auto c : kAllCriteria) {
        hs.push_back(build_hierarchy(ctx, c));
        for (int k = hs.back().num_leaves; k < static_cast<int>(hs.back().nodes.size()); ++k)
            expect.insert(hs.back().nodes[k].members);
    }
    const int budget = 3 * static_cast<int>(hs[0].nodes.size());
    const auto sel = select_hypotheses(hs, budget, 1);
    std::set<std::vector<int>> got;
    for (const auto& h : sel) {
        EXPECT_TRUE(got.insert(h.members).second) << "duplicate member set";
        EXPECT_GE(h.members.size(), 2u);
    }
    EXPECT_EQ(got, expect);
    for (std::size_t i = 0; i < sel.size(); ++i) EXPECT_EQ(sel[i].id, static_cast<int>(i));
}

TEST(Selection, CapsHonoredAndMembersValid) {
    const auto a = synth_one("cart", 21, 6, 10);
    GroupingContext ctx(a);
    for (int cap : {1000, 200, 10, 3}) {
        const auto sel = generate_hypotheses(ctx, cap, 5);
        EXPECT_LE(static_cast<int>(sel.size()), cap);
        EXPECT_FALSE(sel.empty());
        for (const auto& h : sel) {
            ASSERT_FALSE(h.members.empty());
            EXPECT_TRUE(std::is_sorted(h.members.begin(), h.members.end()));
            EXPECT_GE(h.members.front(), 0);
            EXPECT_LT(h.members.back(), a.size());
        }
    }
}

TEST(Selection, RejectsTinyBudget) {
    const auto a = synth_one("table", 1);
    GroupingContext ctx(a);
    EXPECT_THROW(generate_hypotheses(ctx, 2, 0), ValidationError);
}

TEST(Selection, JsonlRoundTrip) {
    const auto a = synth_one("table", 2);
    GroupingContext ctx(a);
    const auto sel = generate_hypotheses(ctx, 30, 7);
    const auto text = hypotheses_to_jsonl(sel);
    EXPECT_EQ(hypotheses_to_jsonl(hypotheses_from_jsonl(text)), text);

    try {
        hypotheses_from_jsonl(text + "{\"id\": 5, \"members\": [1]\n");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), sel.size() + 1);
    }
    const std::string rec = R"({"id":0,"members":[0,1],"source":")" + to_string(Criterion::GroupSize) +
                            R"(","hierarchy_rank":1,"selection_rank":1})";
    EXPECT_EQ(hypotheses_from_jsonl(rec).size(), 1u);
    EXPECT_THROW(hypotheses_from_jsonl(rec + "\n" + rec), ValidationError);
}

TEST(GroundTruth, SeventyPercentRule) {
    // Two separated cubes; their surface voxel counts decide the split.
    auto check = [](double big, double small, bool expect_label) {
        const auto a = box_assembly({{"w", {0.05, 0.05, 0.05}, {0.05 + big, 0.05 + big, 0.05 + big}, 1},
                                     {"f", {0.6, 0.6, 0.6}, {0.6 + small, 0.6 + small, 0.6 + small}, 2}},
                                    {"wheel", "frame"});
        const double vw = static_cast<double>(voxelize(a.components[0], unit_frame(), 200).count());
        const double vf = static_cast<double>(voxelize(a.components[1], unit_frame(), 200).count());
        const double frac = vw / (vw + vf);
        GroupingContext ctx(a);
        GroundTruthOracle oracle(a, ground_truth_parts(ctx), 200);
        const auto gt = oracle.assign(ids({0, 1}));
        EXPECT_EQ(gt.label, frac > 0.7 ? 1 : 0);
        EXPECT_EQ(frac > 0.7, expect_label) << "fixture split " << frac;
        EXPECT_GE(gt.confidence, 0.0);
        EXPECT_LE(gt.confidence, 1.0);
        EXPECT_NEAR(gt.confidence, vw / (vw + vf), 1e-12);
    };
    check(0.4, 0.2, true);    // about 80/20
    check(0.4, 0.33, false);  // about 60/40
}

TEST(GroundTruth, ExactPartHasConfidenceOne) {
    const auto a = two_rows();
    GroupingContext ctx(a);
    const auto parts = ground_truth_parts(ctx);
    ASSERT_EQ(parts.parts.size(), 2u);
    EXPECT_EQ(parts.parts[0].size(), 10u);
    GroundTruthOracle oracle(a, parts, 200);
    const auto gt = oracle.assign(parts.parts[1]);
    EXPECT_EQ(gt.label, 2);
    EXPECT_DOUBLE_EQ(gt.confidence, 1.0);

    PartHypothesis h;
    h.members = parts.parts[0];
    const auto g2 = assign_ground_truth(h, a);
    EXPECT_EQ(g2.label, 1);
    EXPECT_DOUBLE_EQ(g2.confidence, 1.0);
}

TEST(GroundTruth, SameLabelSeparatedGroupsAreDistinctParts) {
    const auto a = box_assembly({{"l", {0, 0, 0}, {0.1, 0.1, 0.1}, 1}, {"r", {0.8, 0.8, 0.8}, {0.9, 0.9, 0.9}, 1}},
                                {"wheel"});
    GroupingContext ctx(a);
    EXPECT_EQ(ground_truth_parts(ctx).parts.size(), 2u);
}

TEST(Augment, DeleteAndInsertSizes) {
    const auto a = two_rows();
    GroupingContext ctx(a);
    const auto parts = ground_truth_parts(ctx);
    const auto& part = parts.parts[0];
    std::set<std::size_t> del_sizes, ins_sizes;
    for (std::uint64_t s = 0; s < 60; ++s) {
        const auto d = augment(ctx, parts, part, AugmentMode::Delete, s);
        EXPECT_TRUE(std::includes(part.begin(), part.end(), d.begin(), d.end()));
        del_sizes.insert(d.size());
        const auto i = augment(ctx, parts, part, AugmentMode::Insert, s);
        EXPECT_TRUE(std::includes(i.begin(), i.end(), part.begin(), part.end()));
        for (int c : i) EXPECT_TRUE(c < 10 || a.labels.at(c) == 2);
        ins_sizes.insert(i.size());
        EXPECT_EQ(augment(ctx, parts, part, AugmentMode::Insert, s), i);
    }
    for (auto s : del_sizes) EXPECT_TRUE(s >= 7 && s <= 9) << s;
    for (auto s : ins_sizes) EXPECT_TRUE(s >= 11 && s <= 13) << s;
    EXPECT_EQ(del_sizes.size(), 3u);
    EXPECT_EQ(ins_sizes.size(), 3u);
}

TEST(Augment, DegenerateCases) {
    const auto a = box_assembly({{"a", {0, 0, 0}, {0.2, 0.2, 0.2}, 1}, {"b", {0.2, 0, 0}, {0.4, 0.2, 0.2}, 1}},
                                {"only"});
    GroupingContext ctx(a);
    const auto parts = ground_truth_parts(ctx);
    ASSERT_EQ(parts.parts.size(), 1u);
    EXPECT_EQ(augment(ctx, parts, parts.parts[0], AugmentMode::Delete, 3), ids({0, 1}));
    EXPECT_THROW(augment(ctx, parts, parts.parts[0], AugmentMode::Insert, 3), ValidationError);
    EXPECT_THROW(augment(ctx, parts, std::vector<int>{}, AugmentMode::Delete, 3), ValidationError);
}
