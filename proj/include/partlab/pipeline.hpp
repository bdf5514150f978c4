#pragma once

#include <map>
#include <span>
#include <vector>

#include "partlab/assembly.hpp"
#include "partlab/crf.hpp"
#include "partlab/hypothesis.hpp"
#include "partlab/scoring.hpp"

namespace partlab {

/// Everything that determines a run besides the input files.
struct RunConfig {
    std::uint64_t seed = 0;
    int budget = 1000;
    CrfConfig crf;
    int grouping_resolution = kGroupingResolution;
    int eval_resolution = kEvaluationResolution;
    int max_sweeps = 20;

    void validate() const {
        crf.validate();
        if (budget < 3) throw ConfigError("budget must be >= 3");
        if (grouping_resolution < 2 || eval_resolution < 2) throw ConfigError("resolutions must be >= 2");
        if (max_sweeps < 1) throw ConfigError("max_sweeps must be >= 1");
    }
};

struct LabelOutcome {
    CrfProblem problem;
    SolveResult result;

    const std::vector<int>& assignment() const { return result.labeling.assignment; }
    LabelMap label_map() const {
        LabelMap m;
        for (std::size_t c = 0; c < assignment().size(); ++c) m[static_cast<int>(c)] = assignment()[c];
        return m;
    }
};

/// Pairs hypotheses with their scores (by id) and attaches voxel volumes.
inline std::vector<ScoredGroup> scored_groups(const GroupingContext& ctx, std::span<const PartHypothesis> hyps,
                                              std::span<const ScoreRecord> scores) {
    std::map<int, const ScoreRecord*> by_id;
    for (const auto& s : scores)
        if (!by_id.emplace(s.hypothesis_id, &s).second)
            throw ValidationError("duplicate score for hypothesis " + std::to_string(s.hypothesis_id));
    std::set<int> hyp_ids;
    std::vector<ScoredGroup> out;
    for (const auto& h : hyps) {
        hyp_ids.insert(h.id);
        for (int m : h.members)
            if (m < 0 || m >= static_cast<int>(ctx.size()))
                throw ValidationError("hypothesis " + std::to_string(h.id) + " references missing component " + std::to_string(m));
        auto it = by_id.find(h.id);
        if (it == by_id.end()) throw ValidationError("no score for hypothesis " + std::to_string(h.id));
        out.push_back({h.members, it->second->probs, it->second->confidence,
                       static_cast<double>(ctx.grid(h.members).count())});
    }
    for (const auto& [id, s] : by_id)
        if (!hyp_ids.count(id)) throw ValidationError("score for unknown hypothesis " + std::to_string(id));
    return out;
}

inline LabelOutcome label_components(const GroupingContext& ctx, std::span<const PartHypothesis> hyps,
                                     std::span<const ScoreRecord> scores, int K, const RunConfig& cfg) {
    cfg.validate();
    std::vector<ScoreRecord> checked(scores.begin(), scores.end());
    for (auto& r : checked) validate_record(r, K);
    const auto groups = scored_groups(ctx, hyps, checked);
    std::vector<double> volumes;
    for (std::size_t c = 0; c < ctx.size(); ++c) volumes.push_back(static_cast<double>(ctx.grid(static_cast<int>(c)).count()));
    LabelOutcome out;
    out.problem = build_problem(static_cast<int>(ctx.size()), K, groups, volumes, cfg.crf);
    out.result = solve(out.problem, {cfg.max_sweeps});
    return out;
}

} // namespace partlab
