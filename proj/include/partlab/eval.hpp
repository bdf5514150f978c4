#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "partlab/assembly.hpp"
#include "partlab/hypothesis.hpp"
#include "partlab/pipeline.hpp"
#include "partlab/scoring.hpp"
#include "partlab/voxel.hpp"

namespace partlab {

struct LabelOverlap {
    std::size_t intersection = 0;
    std::size_t union_size = 0;
    bool in_truth = false;
    double iou() const { return union_size ? static_cast<double>(intersection) / static_cast<double>(union_size) : 0.0; }
};

struct EvalReport {
    std::string shape_id;
    std::map<int, LabelOverlap> per_label;  // every label used by either labeling
    double avg_iou = 0;                     // mean over labels present in the truth

    std::map<int, double> per_label_iou() const {
        std::map<int, double> m;
        for (const auto& [l, o] : per_label) m[l] = o.iou();
        return m;
    }
};

/// Per-label voxel IoU between two full labelings of one assembly.
inline EvalReport labeling_iou(const VoxelIndex& index, std::span<const int> predicted, std::span<const int> truth) {
    const std::size_t n = index.num_components();
    if (predicted.size() != n || truth.size() != n) throw ValidationError("labeling does not cover every component");
    std::map<int, std::vector<int>> pred_sets, true_sets;
    for (std::size_t c = 0; c < n; ++c) {
        if (predicted[c] < 1 || truth[c] < 1) throw ValidationError("missing label for component " + std::to_string(c));
        pred_sets[predicted[c]].push_back(static_cast<int>(c));
        true_sets[truth[c]].push_back(static_cast<int>(c));
    }
    EvalReport r;
    std::set<int> labels;
    for (const auto& [l, v] : pred_sets) labels.insert(l);
    for (const auto& [l, v] : true_sets) labels.insert(l);
    static const std::vector<int> none;
    double sum = 0;
    int present = 0;
    for (int l : labels) {
        const auto& pc = pred_sets.count(l) ? pred_sets[l] : none;
        const auto& tc = true_sets.count(l) ? true_sets[l] : none;
        const auto ps = index.slots(pc), ts = index.slots(tc);
        std::vector<std::uint32_t> inter;
        std::set_intersection(ps.begin(), ps.end(), ts.begin(), ts.end(), std::back_inserter(inter));
        LabelOverlap o{inter.size(), ps.size() + ts.size() - inter.size(), !tc.empty()};
        r.per_label[l] = o;
        if (o.in_truth) sum += o.iou(), ++present;
    }
    r.avg_iou = present ? sum / present : 0.0;
    return r;
}

inline EvalReport labeling_iou(const VoxelIndex& index, const LabelMap& predicted, const LabelMap& truth) {
    std::vector<int> p(index.num_components(), 0), t(index.num_components(), 0);
    for (const auto& [c, l] : predicted)
        if (c >= 0 && static_cast<std::size_t>(c) < p.size()) p[static_cast<std::size_t>(c)] = l;
    for (const auto& [c, l] : truth)
        if (c >= 0 && static_cast<std::size_t>(c) < t.size()) t[static_cast<std::size_t>(c)] = l;
    return labeling_iou(index, p, t);
}

/// Dataset summary: mean of per-shape averages and the voxel-pooled variant.
struct DatasetReport {
    std::vector<EvalReport> shapes;
    double mean_avg_iou = 0;
    double pooled_avg_iou = 0;
    std::map<int, double> pooled_per_label;
};

inline DatasetReport aggregate(std::vector<EvalReport> shapes) {
    DatasetReport d;
    std::map<int, LabelOverlap> pooled;
    for (const auto& s : shapes) {
        d.mean_avg_iou += s.avg_iou / static_cast<double>(shapes.size());
        for (const auto& [l, o] : s.per_label) {
            auto& p = pooled[l];
            p.intersection += o.intersection;
            p.union_size += o.union_size;
            p.in_truth = p.in_truth || o.in_truth;
        }
    }
    int present = 0;
    for (const auto& [l, o] : pooled) {
        d.pooled_per_label[l] = o.iou();
        if (o.in_truth) d.pooled_avg_iou += o.iou(), ++present;
    }
    if (present) d.pooled_avg_iou /= present;
    d.shapes = std::move(shapes);
    return d;
}

inline nlohmann::ordered_json to_json(const EvalReport& r, const LabelSet* names = nullptr) {
    nlohmann::ordered_json j;
    if (!r.shape_id.empty()) j["shape"] = r.shape_id;
    j["avg_iou"] = r.avg_iou;
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (const auto& [l, o] : r.per_label) per[names ? names->name(l) : std::to_string(l)] = o.iou();
    j["per_label_iou"] = per;
    return j;
}

inline nlohmann::ordered_json to_json(const DatasetReport& d, const LabelSet* names = nullptr) {
    nlohmann::ordered_json j;
    j["avg_iou"] = d.mean_avg_iou;
    j["pooled_avg_iou"] = d.pooled_avg_iou;
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (const auto& [l, v] : d.pooled_per_label) per[names ? names->name(l) : std::to_string(l)] = v;
    j["per_label_iou"] = per;
    auto shapes = nlohmann::ordered_json::array();
    for (const auto& s : d.shapes) shapes.push_back(to_json(s, names));
    j["per_shape"] = shapes;
    return j;
}

struct RecallCurve {
    std::vector<double> thresholds;
    std::vector<double> recall;
};

/// Best IoU of each part against any hypothesis.
inline std::vector<double> best_part_ious(const VoxelIndex& index, std::span<const std::vector<int>> hypotheses,
                                          std::span<const std::vector<int>> parts) {
    if (parts.empty()) throw ValidationError("hypothesis_recall: no ground-truth parts");
    std::vector<int> group(index.num_components(), -1);
    for (std::size_t p = 0; p < parts.size(); ++p)
        for (int c : parts[p]) group.at(static_cast<std::size_t>(c)) = static_cast<int>(p);
    GroupOverlap overlap(index, group, static_cast<int>(parts.size()));
    std::vector<double> best(parts.size(), 0.0);
    for (const auto& h : hypotheses) {
        const auto ious = overlap.ious(index.slots(h));
        for (std::size_t p = 0; p < best.size(); ++p) best[p] = std::max(best[p], ious[p]);
    }
    return best;
}

inline RecallCurve recall_curve(std::span<const double> best_ious, std::span<const double> thresholds) {
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (!(thresholds[i] > 0 && thresholds[i] <= 1)) throw ValidationError("thresholds must lie in (0,1]");
        if (i && thresholds[i] < thresholds[i - 1]) throw ValidationError("thresholds must be ascending");
    }
    if (best_ious.empty()) throw ValidationError("hypothesis_recall: no ground-truth parts");
    RecallCurve c;
    for (double t : thresholds) {
        const auto hit = std::count_if(best_ious.begin(), best_ious.end(), [&](double v) { return v >= t; });
        c.thresholds.push_back(t);
        c.recall.push_back(static_cast<double>(hit) / static_cast<double>(best_ious.size()));
    }
    return c;
}

/// Fraction of ground-truth parts matched by some hypothesis at IoU >= t, per threshold.
inline RecallCurve hypothesis_recall(const VoxelIndex& index, std::span<const std::vector<int>> hypotheses,
                                     std::span<const std::vector<int>> parts, std::span<const double> thresholds) {
    const auto best = best_part_ious(index, hypotheses, parts);
    return recall_curve(best, thresholds);
}

inline std::string recall_csv(const RecallCurve& c) {
    std::string out = "threshold,recall\n";
    char buf[64];
    for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.4f,%.6f\n", c.thresholds[i], c.recall[i]);
        out += buf;
    }
    return out;
}

struct SweepRow {
    int budget = 0;
    double recall_at_05 = 0;
    double avg_iou = 0;
};

/// Per-shape state reused across budgets: hierarchies do not depend on the budget.
struct PreparedShape {
    const Assembly* assembly;
    GroupingContext ctx;
    PartTable parts;
    GroundTruthOracle oracle;
    std::vector<GroupingHierarchy> hierarchies;

    PreparedShape(const Assembly& a, const RunConfig& cfg)
        : assembly(&a), ctx(a, cfg.grouping_resolution), parts(ground_truth_parts(ctx)),
          oracle(a, parts, cfg.eval_resolution) {
        for (auto c : kAllCriteria) hierarchies.push_back(build_hierarchy(ctx, c));
    }

    std::vector<int> truth() const {
        std::vector<int> t;
        for (const auto& c : assembly->components) t.push_back(assembly->labels.at(c.id));
        return t;
    }
};

/// Runs hypothesis selection plus labeling per budget, scoring with `model` or, when null, the oracle.
inline std::vector<SweepRow> sweep_budget(std::span<const Assembly> shapes, std::span<const int> budgets,
                                          const RunConfig& cfg, const BuiltinModel* model = nullptr) {
    for (std::size_t i = 1; i < budgets.size(); ++i)
        if (budgets[i] < budgets[i - 1]) throw ValidationError("budgets must be ascending");
    std::vector<std::unique_ptr<PreparedShape>> prepared;
    for (const auto& a : shapes) prepared.push_back(std::make_unique<PreparedShape>(a, cfg));
    std::vector<SweepRow> rows;
    for (int budget : budgets) {
        SweepRow row{budget, 0, 0};
        std::vector<double> best_all;
        for (auto& ps : prepared) {
            const auto hyps = select_hypotheses(ps->hierarchies, budget, cfg.seed);
            std::vector<std::vector<int>> members;
            for (const auto& h : hyps) members.push_back(h.members);
            const auto best = best_part_ious(ps->oracle.index(), members, ps->parts.parts);
            best_all.insert(best_all.end(), best.begin(), best.end());

            const int K = ps->assembly->label_set->size();
            std::unique_ptr<Scorer> scorer;
            if (model) scorer = std::make_unique<BuiltinScorer>(*model);
            else scorer = std::make_unique<OracleScorer>(ps->oracle, K);
            const auto scores = score_hypotheses(*scorer, ps->ctx, hyps);
            const auto outcome = label_components(ps->ctx, hyps, scores, K, cfg);
            row.avg_iou += labeling_iou(ps->oracle.index(), outcome.assignment(), ps->truth()).avg_iou /
                           static_cast<double>(prepared.size());
        }
        const double t = 0.5;
        row.recall_at_05 = recall_curve(best_all, std::span(&t, 1)).recall[0];
        rows.push_back(row);
    }
    return rows;
}

inline std::string sweep_csv(std::span<const SweepRow> rows) {
    std::string out = "budget,recall_at_0.5,avg_iou\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f\n", r.budget, r.recall_at_05, r.avg_iou);
        out += buf;
    }
    return out;
}

} // namespace partlab
