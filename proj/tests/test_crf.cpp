#include <gtest/gtest.h>

#include "support.hpp"

using namespace partlab;
using testing_support::brute_force_minimum;
using testing_support::random_problem;
using testing_support::reference_energy;

namespace {

CrfProblem two_component(double lambda) {
    CrfProblem p;
    p.num_components = 2;
    p.K = 2;
    p.lambda = lambda;
    p.unaries = {{0.0, 0.5}, {0.3, 0.0}};
    p.cliques.push_back({{0, 1}, {0.5, 0.5}, 1.0, 0.4});
    return p;
}

// Best alpha-beta swap by enumerating every choice of the movable components.
double best_swap_energy(const CrfProblem& p, const std::vector<int>& x, int a, int b) {
    std::vector<int> movable;
    for (int c = 0; c < p.num_components; ++c)
        if (x[c] == a || x[c] == b) movable.push_back(c);
    double best = reference_energy(p, x);
    for (std::uint32_t mask = 0; mask < (1u << movable.size()); ++mask) {
        auto y = x;
        for (std::size_t i = 0; i < movable.size(); ++i) y[movable[i]] = (mask >> i) & 1 ? a : b;
        best = std::min(best, reference_energy(p, y));
    }
    return best;
}

} // namespace

TEST(Unary, SymmetricHypothesis) {
    const std::vector<double> probs{0.5, 0.5};
    const auto phi = unary_potential({{1.0, 1.0, probs}}, 2, std::nullopt);
    EXPECT_NEAR(phi[0], std::log(2.0), 1e-12);
    EXPECT_NEAR(phi[1], std::log(2.0), 1e-12);
}

TEST(Unary, OneHotClosedForm) {
    const std::vector<double> probs{1.0, 0.0};
    const auto P = label_probabilities({{1.0, 1.0, probs}}, 2, std::nullopt);
    const double e = std::exp(1.0);
    EXPECT_NEAR(P[0], e / (e + 1), 1e-12);
    EXPECT_NEAR(unary_potential({{1.0, 1.0, probs}}, 2, std::nullopt)[0], 0.3133, 5e-5);
}

TEST(Unary, DuplicateHypothesisLeavesDistributionUnchanged) {
    const std::vector<double> probs{0.7, 0.2, 0.1};
    const auto one = label_probabilities({{0.4, 0.8, probs}}, 3, std::nullopt);
    const auto two = label_probabilities({{0.4, 0.8, probs}, {0.4, 0.8, probs}}, 3, std::nullopt);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(one[k], two[k], 1e-12);
}

TEST(Unary, NormalizedAndTopK) {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const int K = static_cast<int>(rng.uniform_int(1, 5));
        const int T = static_cast<int>(rng.uniform_int(0, 6));
        std::vector<std::vector<double>> store;
        std::vector<UnaryTerm> terms;
        for (int t = 0; t < T; ++t) {
            std::vector<double> p(K);
            double s = 0;
            for (auto& v : p) s += v = rng.uniform();
            for (auto& v : p) v /= s;
            store.push_back(p);
        }
        for (int t = 0; t < T; ++t) terms.push_back({rng.uniform(), rng.uniform(), store[t]});
        const auto P = label_probabilities(terms, K, std::nullopt);
        double sum = 0;
        for (double v : P) {
            EXPECT_GT(v, 0.0);
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);

        // top-1 keeps only the most confident term
        if (T > 0) {
            auto best = *std::max_element(terms.begin(), terms.end(),
                                          [](const UnaryTerm& a, const UnaryTerm& b) { return a.confidence < b.confidence; });
            const auto top = label_probabilities(terms, K, 1);
            const auto alone = label_probabilities({best}, K, std::nullopt);
            for (int k = 0; k < K; ++k) EXPECT_NEAR(top[k], alone[k], 1e-12);
        }
    }
}

TEST(Consistency, TruncatedLinearExamples) {
    EXPECT_EQ(consistency_potential(0.8, 2.0, 10, 10), 0.0);
    EXPECT_DOUBLE_EQ(consistency_potential(0.8, 2.0, 10, 9), 0.4);
    EXPECT_DOUBLE_EQ(consistency_potential(0.8, 2.0, 10, 8), 0.8);
    EXPECT_DOUBLE_EQ(consistency_potential(0.8, 2.0, 10, 7), 0.8);
    EXPECT_DOUBLE_EQ(consistency_potential(0.8, 2.0, 10, 2), 0.8);
}

TEST(Consistency, GammaMaxBounds) {
    const std::vector<double> onehot{1, 0, 0}, uniform{1.0 / 3, 1.0 / 3, 1.0 / 3};
    EXPECT_DOUBLE_EQ(gamma_max(onehot, 4), 1.0);
    EXPECT_NEAR(gamma_max(uniform, 4), std::exp(-std::log(3.0) / 4), 1e-12);
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> p(static_cast<std::size_t>(rng.uniform_int(1, 6)));
        double s = 0;
        for (auto& v : p) s += v = rng.uniform();
        for (auto& v : p) v /= s;
        const double g = gamma_max(p, static_cast<std::size_t>(rng.uniform_int(1, 20)));
        EXPECT_GT(g, 0.0);
        EXPECT_LE(g, 1.0);
    }
}

TEST(Energy, Examples) {
    CrfProblem p;
    p.num_components = 4;
    p.K = 3;
    p.unaries.assign(4, std::vector<double>(3, std::log(3.0)));
    p.cliques.push_back({{0, 1, 2, 3}, {1, 0, 0}, 1.0, 0.8});
    EXPECT_NEAR(total_energy(p, std::vector<int>{2, 2, 2, 2}), 4 * std::log(3.0), 1e-12);

    p.lambda = 0;
    p.unaries = {{0.1, 0.2, 0.3}, {1, 2, 3}, {0.5, 0.5, 0.0}, {2, 1, 0}};
    EXPECT_NEAR(total_energy(p, std::vector<int>{1, 3, 2, 2}), 0.1 + 3 + 0.5 + 1, 1e-12);

    // hand arithmetic: 0 + 0.3 for the unaries, one dissenter of 2 with eta 0.4 costs gamma
    auto q = two_component(0.5);
    EXPECT_NEAR(total_energy(q, std::vector<int>{1, 1}), 0.3, 1e-12);
    EXPECT_NEAR(total_energy(q, std::vector<int>{1, 2}), 0.0 + 0.0 + 0.5, 1e-12);
    EXPECT_NEAR(total_energy(q, std::vector<int>{2, 1}), 0.5 + 0.3 + 0.5, 1e-12);
    EXPECT_THROW(total_energy(q, std::vector<int>{1, 3}), ValidationError);
    EXPECT_THROW(total_energy(q, std::vector<int>{1}), ValidationError);
}

TEST(Energy, MatchesReferenceAndDoublesWithDuplicateClique) {
    Rng rng(21);
    for (int i = 0; i < 100; ++i) {
        auto p = random_problem(rng);
        std::vector<int> x(p.num_components);
        for (auto& v : x) v = static_cast<int>(rng.uniform_int(1, p.K));
        const double e = total_energy(p, x);
        EXPECT_NEAR(e, reference_energy(p, x), 1e-9);
        if (p.cliques.empty()) continue;
        double unary = 0;
        for (int c = 0; c < p.num_components; ++c) unary += p.unaries[c][x[c] - 1];
        auto d = p;
        for (const auto& c : p.cliques) d.cliques.push_back(c);
        EXPECT_NEAR(total_energy(d, x) - unary, 2 * (e - unary), 1e-9);
    }
}

TEST(Solve, SingleComponentAndDecoupled) {
    CrfProblem one;
    one.num_components = 1;
    one.K = 3;
    one.unaries = {{0.7, 0.2, 0.9}};
    EXPECT_EQ(solve(one).labeling.assignment, std::vector<int>{2});
    EXPECT_EQ(solve_exhaustive(one).assignment, std::vector<int>{2});

    Rng rng(2);
    for (int i = 0; i < 30; ++i) {
        auto p = random_problem(rng);
        p.lambda = 0;
        const auto r = solve(p);
        for (int c = 0; c < p.num_components; ++c) {
            const auto& u = p.unaries[c];
            EXPECT_EQ(u[r.labeling.assignment[c] - 1], *std::min_element(u.begin(), u.end()));
        }
    }
}

TEST(Solve, StrongCliqueForcesAgreement) {
    // labelings: (1,1)=0.3, (2,2)=0.5, (1,2)=lambda*gamma, (2,1)=0.8+lambda*gamma
    const auto strong = two_component(1.0);
    EXPECT_EQ(solve(strong).labeling.assignment, (std::vector<int>{1, 1}));
    EXPECT_EQ(solve_exhaustive(strong).assignment, (std::vector<int>{1, 1}));
    const auto weak = two_component(0.1);
    EXPECT_EQ(solve(weak).labeling.assignment, (std::vector<int>{1, 2}));
    EXPECT_NEAR(solve(weak).labeling.energy, 0.1, 1e-12);
}

TEST(Solve, SwapMoveIsOptimal) {
    Rng rng(77);
    int checked = 0;
    for (int i = 0; i < 150; ++i) {
        const auto p = random_problem(rng);
        std::vector<int> x(p.num_components);
        for (auto& v : x) v = static_cast<int>(rng.uniform_int(1, p.K));
        for (int a = 1; a <= p.K; ++a)
            for (int b = a + 1; b <= p.K; ++b) {
                const auto y = detail::swap_move(p, x, a, b);
                for (int c = 0; c < p.num_components; ++c) {
                    if (x[c] != a && x[c] != b) EXPECT_EQ(y[c], x[c]);
                    else EXPECT_TRUE(y[c] == a || y[c] == b);
                }
                EXPECT_NEAR(reference_energy(p, y), best_swap_energy(p, x, a, b), 1e-9);
                ++checked;
            }
    }
    EXPECT_GT(checked, 200);
}

TEST(Solve, InvariantsOnRandomInstances) {
    Rng rng(2024);
    int exact = 0;
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
        const auto p = random_problem(rng);
        const auto r = solve(p);
        const auto& x = r.labeling.assignment;
        EXPECT_NEAR(r.labeling.energy, reference_energy(p, x), 1e-9);
        for (std::size_t t = 1; t < r.energy_trace.size(); ++t) EXPECT_LT(r.energy_trace[t], r.energy_trace[t - 1]);
        EXPECT_LE(r.labeling.energy, r.energy_trace.front() + 1e-12);
        EXPECT_TRUE(r.converged);
        for (int a = 1; a <= p.K; ++a)
            for (int b = a + 1; b <= p.K; ++b)
                EXPECT_GE(total_energy(p, detail::swap_move(p, x, a, b)), r.labeling.energy - 1e-9);

        const auto ex = solve_exhaustive(p);
        const double opt = brute_force_minimum(p);
        EXPECT_NEAR(ex.energy, opt, 1e-9);
        EXPECT_LE(ex.energy, r.labeling.energy + 1e-12);
        if (r.labeling.energy <= opt + 1e-9) ++exact;
        worst = std::max(worst, (r.labeling.energy - opt) / std::max(opt, 1e-12));
    }
    EXPECT_GE(exact, 180);
    EXPECT_LE(worst, 0.05);
}

TEST(Solve, Deterministic) {
    Rng a(5), b(5);
    for (int i = 0; i < 20; ++i) {
        const auto r1 = solve(random_problem(a)), r2 = solve(random_problem(b));
        EXPECT_EQ(r1.labeling.assignment, r2.labeling.assignment);
        EXPECT_EQ(r1.energy_trace, r2.energy_trace);
    }
}

TEST(Problem, BuildFromScoredGroups) {
    CrfConfig cfg;
    std::vector<ScoredGroup> groups{{{0, 1}, {0.0, 1.0, 0.0}, 0.9, 20},
                                    {{1, 2}, {0.2, 0.4, 0.4}, 0.5, 30},
                                    {{0, 2}, {0.95, 0.05, 0.0}, 0.3, 30}};
    const std::vector<double> vols{10, 10, 20, 5};
    const auto p = build_problem(4, 2, groups, vols, cfg);
    ASSERT_EQ(p.cliques.size(), 2u);
    EXPECT_DOUBLE_EQ(p.cliques[0].gamma_max, 1.0);
    EXPECT_NEAR(p.cliques[1].probs[0], 0.5, 1e-12);
    EXPECT_NEAR(p.cliques[1].gamma_max, std::exp(-std::log(2.0) / 2), 1e-12);
    EXPECT_NEAR(p.cliques[1].eta, 0.4, 1e-12);
    EXPECT_EQ(p.uncovered, std::vector<int>{3});
    EXPECT_NEAR(p.unaries[3][0], std::log(2.0), 1e-12);

    // component 0: w = 10/20, s = 0.9, p = (1,0)
    const double a = std::exp(0.5 * 0.9), b = 1.0;
    EXPECT_NEAR(p.unaries[0][0], -std::log(a / (a + b)), 1e-12);

    cfg.top_k = 0;
    EXPECT_THROW(build_problem(4, 2, groups, vols, cfg), ConfigError);
    cfg.top_k.reset();
    cfg.eta_fraction = 1.0;
    EXPECT_THROW(build_problem(4, 2, groups, vols, cfg), ConfigError);
}

TEST(Problem, JsonRoundTripAndValidation) {
    Rng rng(9);
    const auto p = random_problem(rng);
    const auto j = problem_to_json(p);
    const auto q = problem_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(problem_to_json(q).dump(), j.dump());

    auto bad = p;
    bad.unaries[0][0] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(solve(bad), ValidationError);
    EXPECT_THROW(problem_from_json(nlohmann::json::parse("{\"K\": 2}")), ParseError);

    CrfProblem big;
    big.num_components = 30;
    big.K = 3;
    big.unaries.assign(30, std::vector<double>(3, 1.0));
    EXPECT_THROW(solve_exhaustive(big), ValidationError);
    EXPECT_EQ(solve(big).labeling.assignment, std::vector<int>(30, 1));
}
