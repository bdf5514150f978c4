#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "partlab/partlab.hpp"

namespace testing_support {

using partlab::Vec3;

/// Axis-aligned closed box surface as 12 triangles.
inline partlab::Component box_component(int id, std::string name, Vec3 lo, Vec3 hi) {
    partlab::Component c;
    c.id = id;
    c.name = std::move(name);
    for (int i = 0; i < 8; ++i)
        c.vertices.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z());
    const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
    for (const auto& q : quads) {
        c.triangles.push_back({q[0], q[1], q[2]});
        c.triangles.push_back({q[0], q[2], q[3]});
    }
    return c;
}

struct BoxSpec {
    std::string name;
    Vec3 lo, hi;
    int label = 0;
};

/// Assembly in already-normalized coordinates (identity normalization).
inline partlab::Assembly box_assembly(const std::vector<BoxSpec>& boxes, std::vector<std::string> label_names = {},
                                      std::string id = "boxes") {
    partlab::Assembly a;
    a.id = std::move(id);
    for (const auto& b : boxes) {
        a.components.push_back(box_component(static_cast<int>(a.components.size()), b.name, b.lo, b.hi));
        if (b.label > 0) a.labels[static_cast<int>(a.components.size()) - 1] = b.label;
    }
    if (!label_names.empty()) a.label_set = partlab::LabelSet{"test", std::move(label_names)};
    return a;
}

/// Energy of a labeling computed straight from the definitions, independent of
/// the library's potential helpers.
inline double reference_energy(const partlab::CrfProblem& p, const std::vector<int>& x) {
    double e = 0;
    for (int c = 0; c < p.num_components; ++c) e += p.unaries[c][x[c] - 1];
    for (const auto& q : p.cliques) {
        std::map<int, int> counts;
        for (int m : q.members) ++counts[x[m]];
        int most = 0;
        for (auto& [l, n] : counts) most = std::max(most, n);
        const double N = static_cast<double>(q.members.size()) - most;
        e += p.lambda * (N <= q.eta ? N * q.gamma_max / q.eta : q.gamma_max);
    }
    return e;
}

/// Minimum over all K^n labelings, by direct enumeration with reference_energy.
inline double brute_force_minimum(const partlab::CrfProblem& p) {
    std::vector<int> x(p.num_components, 1);
    double best = reference_energy(p, x);
    for (;;) {
        int i = p.num_components - 1;
        while (i >= 0 && x[i] == p.K) x[i--] = 1;
        if (i < 0) break;
        ++x[i];
        best = std::min(best, reference_energy(p, x));
    }
    return best;
}

/// Random instance: up to 8 components, 2..3 labels, up to 5 cliques.
inline partlab::CrfProblem random_problem(partlab::Rng& rng) {
    partlab::CrfProblem p;
    p.num_components = static_cast<int>(rng.uniform_int(1, 8));
    p.K = static_cast<int>(rng.uniform_int(2, 3));
    p.lambda = rng.uniform_real(0.05, 3.0);
    for (int c = 0; c < p.num_components; ++c) {
        std::vector<double> u;
        double total = 0;
        for (int k = 0; k < p.K; ++k) u.push_back(rng.uniform_real(0.01, 1.0)), total += u.back();
        for (auto& v : u) v = -std::log(v / total);
        p.unaries.push_back(u);
    }
    const int cliques = static_cast<int>(rng.uniform_int(0, 5));
    for (int q = 0; q < cliques; ++q) {
        partlab::Clique c;
        for (int m = 0; m < p.num_components; ++m)
            if (rng.uniform() < 0.6) c.members.push_back(m);
        if (c.members.empty()) c.members.push_back(static_cast<int>(rng.uniform_int(0, p.num_components - 1)));
        double total = 0;
        for (int k = 0; k < p.K; ++k) c.probs.push_back(rng.uniform_real(0.0, 1.0)), total += c.probs.back();
        for (auto& v : c.probs) v /= total;
        c.gamma_max = partlab::gamma_max(c.probs, c.members.size());
        c.eta = 0.2 * static_cast<double>(c.members.size());
        p.cliques.push_back(std::move(c));
    }
    return p;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
    auto d = std::filesystem::temp_directory_path() / ("partlab_test_" + tag);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

} // namespace testing_support
