#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "partlab/error.hpp"
#include "partlab/maxflow.hpp"

namespace partlab {

struct CrfConfig {
    double lambda = 0.1;
    double eta_fraction = 0.2;
    std::optional<int> top_k;  // nullopt: use every covering hypothesis
    double null_drop = 0.9;    // hypotheses with more null mass are ignored

    void validate() const {
        if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
        if (!(eta_fraction > 0 && eta_fraction < 1)) throw ConfigError("eta fraction must lie in (0,1)");
        if (top_k && *top_k < 1) throw ConfigError("top_k must be >= 1");
    }
};

/// A hypothesis as a CRF clique. `probs` holds p(l_k|h) for k = 1..K, renormalized without the null label.
struct Clique {
    std::vector<int> members;
    std::vector<double> probs;
    double gamma_max = 1.0;
    double eta = 1.0;
};

struct CrfProblem {
    int num_components = 0;
    int K = 0;
    double lambda = 0.1;
    std::vector<Clique> cliques;
    std::vector<std::vector<double>> unaries;  // [component][k-1] = phi(x_c = l_k)
    std::vector<int> uncovered;                // components without a covering hypothesis
};

/// A full assignment (labels 1..K) and its energy.
struct Labeling {
    std::vector<int> assignment;
    double energy = 0;
};

/// Entropy of a label distribution with 0 log 0 = 0.
inline double label_entropy(std::span<const double> p) {
    double g = 0;
    for (double v : p)
        if (v > 0) g -= v * std::log(v);
    return g;
}

/// exp(-G(h) / C^h).
inline double gamma_max(std::span<const double> probs, std::size_t clique_size) {
    return std::exp(-label_entropy(probs) / static_cast<double>(clique_size));
}

/// Truncated linear consistency cost: N = C - max_k n_k disagreeing members cost
/// N * gamma_max / eta up to eta, and gamma_max beyond.
inline double consistency_potential(double gamma, double eta, std::size_t clique_size, std::size_t max_count) {
    const double n = static_cast<double>(clique_size - max_count);
    if (eta <= 0) return n > 0 ? gamma : 0.0;
    return n <= eta ? n * gamma / eta : gamma;
}

inline double consistency_potential(const Clique& c, std::span<const int> labels, int K) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(K + 1), 0);
    for (int m : c.members) ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(m)])];
    return consistency_potential(c.gamma_max, c.eta, c.members.size(), *std::max_element(counts.begin(), counts.end()));
}

/// One covering hypothesis as seen from a component.
struct UnaryTerm {
    double weight;      // vol(c) / vol(h)
    double confidence;  // s
    std::span<const double> probs;  // K entries, null removed
};

/// Label distribution of a component from its top-k covering hypotheses (by
/// confidence): P(l_k) is proportional to sum_i exp(w_i s_i p(l_k|h_i)).
inline std::vector<double> label_probabilities(std::vector<UnaryTerm> terms, int K, std::optional<int> top_k) {
    std::vector<double> P(static_cast<std::size_t>(K), 1.0 / K);
    if (terms.empty()) return P;
    std::stable_sort(terms.begin(), terms.end(),
                     [](const UnaryTerm& a, const UnaryTerm& b) { return a.confidence > b.confidence; });
    if (top_k && static_cast<std::size_t>(*top_k) < terms.size()) terms.resize(static_cast<std::size_t>(*top_k));
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& t : terms)
        for (int k = 0; k < K; ++k) hi = std::max(hi, t.weight * t.confidence * t.probs[static_cast<std::size_t>(k)]);
    double total = 0;
    for (int k = 0; k < K; ++k) {
        double s = 0;
        for (const auto& t : terms) s += std::exp(t.weight * t.confidence * t.probs[static_cast<std::size_t>(k)] - hi);
        P[static_cast<std::size_t>(k)] = s;
        total += s;
    }
    for (auto& p : P) p /= total;
    return P;
}

/// phi(x_c = l_k) = -log P(x_c = l_k).
inline std::vector<double> unary_potential(std::vector<UnaryTerm> terms, int K, std::optional<int> top_k) {
    auto P = label_probabilities(std::move(terms), K, top_k);
    for (auto& p : P) p = -std::log(p);
    return P;
}

/// A scored hypothesis ready for problem construction.
struct ScoredGroup {
    std::vector<int> members;
    std::vector<double> probs;  // K+1 entries, index 0 = null
    double confidence = 0;
    double volume = 0;          // voxel count of the union
};

/// Assembles unaries and cliques. Hypotheses whose null probability exceeds
/// config.null_drop are dropped; the rest are renormalized over labels 1..K.
inline CrfProblem build_problem(int num_components, int K, std::span<const ScoredGroup> groups,
                                std::span<const double> component_volumes, const CrfConfig& config) {
    config.validate();
    if (K < 1) throw ValidationError("CRF needs at least one label");
    if (static_cast<int>(component_volumes.size()) != num_components)
        throw ValidationError("component volume count mismatch");
    CrfProblem p;
    p.num_components = num_components;
    p.K = K;
    p.lambda = config.lambda;

    std::vector<std::vector<std::size_t>> covering(static_cast<std::size_t>(num_components));
    for (const auto& g : groups) {
        if (static_cast<int>(g.probs.size()) != K + 1) throw ValidationError("hypothesis probability length != K+1");
        if (g.probs[0] > config.null_drop) continue;
        const double mass = 1.0 - g.probs[0];
        Clique c;
        c.members = g.members;
        for (int k = 1; k <= K; ++k) c.probs.push_back(g.probs[static_cast<std::size_t>(k)] / mass);
        c.gamma_max = gamma_max(c.probs, c.members.size());
        c.eta = config.eta_fraction * static_cast<double>(c.members.size());
        for (int m : c.members) {
            if (m < 0 || m >= num_components) throw ValidationError("hypothesis member out of range");
            covering[static_cast<std::size_t>(m)].push_back(p.cliques.size());
        }
        p.cliques.push_back(std::move(c));
    }
    std::vector<double> conf, vol;
    for (const auto& g : groups)
        if (g.probs[0] <= config.null_drop) conf.push_back(g.confidence), vol.push_back(g.volume);

    for (int c = 0; c < num_components; ++c) {
        std::vector<UnaryTerm> terms;
        for (auto h : covering[static_cast<std::size_t>(c)]) {
            const double w = vol[h] > 0 ? std::min(1.0, component_volumes[static_cast<std::size_t>(c)] / vol[h]) : 0.0;
            terms.push_back({w, conf[h], p.cliques[h].probs});
        }
        if (terms.empty()) p.uncovered.push_back(c);
        p.unaries.push_back(unary_potential(std::move(terms), K, config.top_k));
    }
    return p;
}

inline void check_assignment(const CrfProblem& p, std::span<const int> x) {
    if (static_cast<int>(x.size()) != p.num_components) throw ValidationError("assignment length mismatch");
    for (int l : x)
        if (l < 1 || l > p.K) throw ValidationError("label " + std::to_string(l) + " out of range");
}

/// E(x) = sum_c phi(x_c) + lambda * sum_h psi(x_h).
inline double total_energy(const CrfProblem& p, std::span<const int> x) {
    check_assignment(p, x);
    double e = 0;
    for (int c = 0; c < p.num_components; ++c)
        e += p.unaries[static_cast<std::size_t>(c)][static_cast<std::size_t>(x[static_cast<std::size_t>(c)] - 1)];
    double h = 0;
    for (const auto& q : p.cliques) h += consistency_potential(q, x, p.K);
    return e + p.lambda * h;
}

inline void validate_problem(const CrfProblem& p) {
    if (p.K < 1 || p.num_components < 0) throw ValidationError("invalid CRF dimensions");
    if (!std::isfinite(p.lambda) || p.lambda < 0) throw ValidationError("non-finite or negative lambda");
    if (static_cast<int>(p.unaries.size()) != p.num_components) throw ValidationError("unary count mismatch");
    for (const auto& u : p.unaries) {
        if (static_cast<int>(u.size()) != p.K) throw ValidationError("unary length != K");
        for (double v : u)
            if (!std::isfinite(v)) throw ValidationError("non-finite unary potential");
    }
    for (const auto& c : p.cliques) {
        if (c.members.empty()) throw ValidationError("empty clique");
        if (!std::isfinite(c.gamma_max) || !std::isfinite(c.eta)) throw ValidationError("non-finite clique potential");
        for (int m : c.members)
            if (m < 0 || m >= p.num_components) throw ValidationError("clique member out of range");
    }
}

struct SolverOptions {
    int max_sweeps = 20;
};

struct SolveResult {
    Labeling labeling;
    std::vector<double> energy_trace;  // initial energy, then one entry per accepted move
    int sweeps = 0;
    bool converged = false;
    int start = 0;  // 0: unary argmin, k: constant labeling k
};

namespace detail {

inline std::vector<int> unary_argmin(const CrfProblem& p) {
    std::vector<int> x(static_cast<std::size_t>(p.num_components), 1);
    for (int c = 0; c < p.num_components; ++c) {
        const auto& u = p.unaries[static_cast<std::size_t>(c)];
        x[static_cast<std::size_t>(c)] = static_cast<int>(std::min_element(u.begin(), u.end()) - u.begin()) + 1;
    }
    return x;
}

/// Optimal alpha-beta swap move. Components labeled alpha or beta choose between
/// the two; each clique's cost is a concave function of how many choose alpha,
/// written as a linear term plus sum_b delta_b * min(b, t), and each min term
/// becomes one auxiliary node.
inline std::vector<int> swap_move(const CrfProblem& p, const std::vector<int>& x, int alpha, int beta) {
    std::vector<int> node(x.size(), -1);
    std::vector<int> movable;
    for (std::size_t c = 0; c < x.size(); ++c)
        if (x[c] == alpha || x[c] == beta) {
            node[c] = static_cast<int>(movable.size());
            movable.push_back(static_cast<int>(c));
        }
    if (movable.empty()) return x;

    struct Aux {
        std::vector<int> vars;
        double delta;
        double b;
    };
    std::vector<double> e0(movable.size()), e1(movable.size());  // x=0: beta, x=1: alpha
    for (std::size_t i = 0; i < movable.size(); ++i) {
        const auto& u = p.unaries[static_cast<std::size_t>(movable[i])];
        e0[i] = u[static_cast<std::size_t>(beta - 1)];
        e1[i] = u[static_cast<std::size_t>(alpha - 1)];
    }
    std::vector<Aux> aux;
    std::vector<std::size_t> counts(static_cast<std::size_t>(p.K + 1));
    for (const auto& q : p.cliques) {
        std::vector<int> vars;
        std::fill(counts.begin(), counts.end(), 0);
        for (int m : q.members) {
            if (node[static_cast<std::size_t>(m)] >= 0) vars.push_back(node[static_cast<std::size_t>(m)]);
            else ++counts[static_cast<std::size_t>(x[static_cast<std::size_t>(m)])];
        }
        if (vars.empty()) continue;
        const std::size_t other = *std::max_element(counts.begin(), counts.end());
        const std::size_t m = vars.size();
        std::vector<double> g(m + 1);
        for (std::size_t t = 0; t <= m; ++t)
            g[t] = p.lambda * consistency_potential(q.gamma_max, q.eta, q.members.size(), std::max({t, m - t, other}));
        // g(t) = g(0) + d_{m-1} t + sum_{b=1}^{m-1} (d_{b-1} - d_b) min(b, t), with d_t = g(t+1) - g(t).
        const double last = g[m] - g[m - 1];
        for (int v : vars) e1[static_cast<std::size_t>(v)] += last;
        for (std::size_t b = 1; b < m; ++b) {
            const double delta = (g[b] - g[b - 1]) - (g[b + 1] - g[b]);
            if (delta > 1e-15) aux.push_back({vars, delta, static_cast<double>(b)});
        }
    }

    const int n = static_cast<int>(movable.size());
    MaxFlow flow(n + static_cast<int>(aux.size()));
    for (int i = 0; i < n; ++i) {
        const double lo = std::min(e0[static_cast<std::size_t>(i)], e1[static_cast<std::size_t>(i)]);
        flow.add_terminal(i, e1[static_cast<std::size_t>(i)] - lo, e0[static_cast<std::size_t>(i)] - lo);
    }
    for (std::size_t a = 0; a < aux.size(); ++a) {
        // delta * (b z + (1 - z) sum_i x_i): z on the sink side pays delta*b,
        // z on the source side pays delta for every x_i on the sink side.
        const int z = n + static_cast<int>(a);
        flow.add_terminal(z, aux[a].delta * aux[a].b, 0.0);
        for (int v : aux[a].vars) flow.add_edge(z, v, aux[a].delta);
    }
    flow.solve();
    std::vector<int> y = x;
    for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(movable[static_cast<std::size_t>(i)])] = flow.source_side(i) ? beta : alpha;
    return y;
}

} // namespace detail

namespace detail {

inline SolveResult swap_descent(const CrfProblem& p, std::vector<int> x, int max_sweeps) {
    SolveResult r;
    double e = total_energy(p, x);
    r.energy_trace.push_back(e);
    for (r.sweeps = 0; r.sweeps < max_sweeps;) {
        ++r.sweeps;
        bool improved = false;
        for (int a = 1; a <= p.K; ++a)
            for (int b = a + 1; b <= p.K; ++b) {
                auto y = swap_move(p, x, a, b);
                if (y == x) continue;
                const double ey = total_energy(p, y);
                if (ey < e - 1e-12 * std::max(1.0, std::abs(e))) {
                    x = std::move(y);
                    e = ey;
                    r.energy_trace.push_back(e);
                    improved = true;
                }
            }
        if (!improved) {
            r.converged = true;
            break;
        }
    }
    r.labeling = {std::move(x), e};
    return r;
}

} // namespace detail

/// Alpha-beta swap minimization. Descent runs from the per-component unary
/// argmin and from each constant labeling; the lowest final energy wins, ties
/// to the earlier start. A move is kept only if it strictly lowers the energy.
inline SolveResult solve(const CrfProblem& p, const SolverOptions& opt = {}) {
    validate_problem(p);
    SolveResult best = detail::swap_descent(p, detail::unary_argmin(p), opt.max_sweeps);
    for (int k = 1; k <= p.K && p.num_components > 0; ++k) {
        auto r = detail::swap_descent(p, std::vector<int>(static_cast<std::size_t>(p.num_components), k), opt.max_sweeps);
        if (r.labeling.energy < best.labeling.energy - 1e-12 * std::max(1.0, std::abs(best.labeling.energy))) {
            r.start = k;
            best = std::move(r);
        }
    }
    return best;
}

inline constexpr double kExhaustiveLimit = 1e7;

/// Global minimum by enumeration; ties go to the lexicographically smallest assignment.
inline Labeling solve_exhaustive(const CrfProblem& p) {
    validate_problem(p);
    if (std::pow(static_cast<double>(p.K), p.num_components) > kExhaustiveLimit)
        throw ValidationError("instance too large for exhaustive search");
    std::vector<int> x(static_cast<std::size_t>(p.num_components), 1);
    Labeling best{x, total_energy(p, x)};
    if (p.num_components == 0) return best;
    for (;;) {
        int i = p.num_components - 1;
        while (i >= 0 && x[static_cast<std::size_t>(i)] == p.K) x[static_cast<std::size_t>(i--)] = 1;
        if (i < 0) break;
        ++x[static_cast<std::size_t>(i)];
        const double e = total_energy(p, x);
        if (e < best.energy - 1e-12) best = {x, e};
    }
    return best;
}

inline nlohmann::ordered_json problem_to_json(const CrfProblem& p) {
    nlohmann::ordered_json j;
    j["num_components"] = p.num_components;
    j["K"] = p.K;
    j["lambda"] = p.lambda;
    j["unaries"] = p.unaries;
    auto cl = nlohmann::ordered_json::array();
    for (const auto& c : p.cliques) {
        nlohmann::ordered_json q;
        q["members"] = c.members;
        q["probs"] = c.probs;
        q["gamma_max"] = c.gamma_max;
        q["eta"] = c.eta;
        cl.push_back(q);
    }
    j["cliques"] = cl;
    j["uncovered"] = p.uncovered;
    return j;
}

inline CrfProblem problem_from_json(const nlohmann::json& j) {
    CrfProblem p;
    try {
        p.num_components = j.at("num_components").get<int>();
        p.K = j.at("K").get<int>();
        p.lambda = j.at("lambda").get<double>();
        p.unaries = j.at("unaries").get<std::vector<std::vector<double>>>();
        for (const auto& q : j.at("cliques"))
            p.cliques.push_back({q.at("members").get<std::vector<int>>(), q.at("probs").get<std::vector<double>>(),
                                 q.at("gamma_max").get<double>(), q.at("eta").get<double>()});
        p.uncovered = j.value("uncovered", std::vector<int>{});
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("CRF problem: ") + e.what());
    }
    validate_problem(p);
    return p;
}

} // namespace partlab
