#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "partlab/assembly.hpp"
#include "partlab/error.hpp"
#include "partlab/geometry.hpp"

namespace partlab {

/// Similarity taking B's unit frame into A's: p -> scale * rotation * p + translation.
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Vec3 translation = Vec3::Zero();
    double scale = 1.0;
    int quarter_turns = 0;  // yaw about the up (y) axis, multiples of 90 degrees

    Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

struct CorrespondenceMap {
    std::vector<std::pair<int, int>> pairs;  // (component in A, component in B)
    std::vector<int> unmatched_a;
    std::vector<int> unmatched_b;
};

namespace detail {

using LabelGroups = std::map<std::string, std::vector<int>>;

inline LabelGroups groups_by_label_name(const Assembly& s) {
    if (!s.fully_labeled()) throw ValidationError("correspondence needs fully labeled shapes ('" + s.id + "')");
    LabelGroups g;
    for (const auto& c : s.components) g[s.label_set->name(s.labels.at(c.id))].push_back(c.id);
    return g;
}

inline std::vector<Vec3> component_centroids(const Assembly& s) {
    std::vector<Vec3> out;
    for (const auto& c : s.components) out.push_back(convex_hull_centroid(c.vertices).centroid);
    return out;
}

inline Box box_of(const std::vector<Vec3>& pts, const std::vector<int>& ids) {
    Box b;
    for (int i : ids) b.extend(pts[static_cast<std::size_t>(i)]);
    return b;
}

inline Eigen::Matrix3d yaw(int quarter_turns) {
    return Eigen::AngleAxisd(quarter_turns * std::numbers::pi / 2, Vec3::UnitY()).toRotationMatrix();
}

} // namespace detail

/// Picks the yaw (0/90/180/270 degrees) that, after matching the rotated
/// bounding box of B to A's, minimizes the summed nearest same-label centroid
/// distances in both directions.
inline RigidTransform align(const Assembly& a, const Assembly& b) {
    const auto ga = detail::groups_by_label_name(a), gb = detail::groups_by_label_name(b);
    std::vector<std::string> shared;
    for (const auto& [name, ids] : ga)
        if (gb.count(name)) shared.push_back(name);
    if (shared.empty()) throw ValidationError("shapes share no labels");

    const auto ca = detail::component_centroids(a), cb = detail::component_centroids(b);
    const Box box_a = a.bounds();
    RigidTransform best;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int q = 0; q < 4; ++q) {
        RigidTransform t;
        t.quarter_turns = q;
        t.rotation = detail::yaw(q);
        Box rotated;
        for (const auto& comp : b.components)
            for (const auto& v : comp.vertices) rotated.extend(t.rotation * v);
        const double eb = rotated.extent().maxCoeff(), ea = box_a.extent().maxCoeff();
        t.scale = eb > 0 ? ea / eb : 1.0;
        t.translation = box_a.center() - t.scale * rotated.center();

        double cost = 0;
        for (const auto& name : shared) {
            const auto& ia = ga.at(name);
            const auto& ib = gb.at(name);
            for (int i : ia) {
                double d = std::numeric_limits<double>::infinity();
                for (int j : ib) d = std::min(d, (ca[static_cast<std::size_t>(i)] - t.apply(cb[static_cast<std::size_t>(j)])).norm());
                cost += d;
            }
            for (int j : ib) {
                double d = std::numeric_limits<double>::infinity();
                for (int i : ia) d = std::min(d, (ca[static_cast<std::size_t>(i)] - t.apply(cb[static_cast<std::size_t>(j)])).norm());
                cost += d;
            }
        }
        if (cost < best_cost - 1e-9) best_cost = cost, best = t;
    }
    return best;
}

/// Per shared label: align the two parts' centroid boxes, collect each
/// component's nearest counterpart in both directions, keep the closer pair on
/// conflicts, and repeat on the leftovers until one side is exhausted.
inline CorrespondenceMap match_components(const Assembly& a, const Assembly& b, const RigidTransform& t) {
    const auto ga = detail::groups_by_label_name(a), gb = detail::groups_by_label_name(b);
    const auto ca = detail::component_centroids(a);
    std::vector<Vec3> cb;
    for (const auto& p : detail::component_centroids(b)) cb.push_back(t.apply(p));

    CorrespondenceMap map;
    std::set<int> used_a, used_b;
    for (const auto& [name, ia] : ga) {
        auto it = gb.find(name);
        if (it == gb.end()) continue;
        const auto& ib = it->second;
        const Box ba = detail::box_of(ca, ia), bb = detail::box_of(cb, ib);
        Vec3 s;
        for (int k = 0; k < 3; ++k) {
            const double eb = bb.extent()[k], ea = ba.extent()[k];
            s[k] = eb > 1e-9 && ea > 1e-9 ? ea / eb : 1.0;
        }
        auto moved = [&](int j) {
            return Vec3(ba.center() + s.cwiseProduct(cb[static_cast<std::size_t>(j)] - bb.center()));
        };

        std::vector<int> left_a = ia, left_b = ib;
        while (!left_a.empty() && !left_b.empty()) {
            std::set<std::tuple<double, int, int>> cand;
            for (int i : left_a) {
                std::tuple<double, int, int> best{std::numeric_limits<double>::infinity(), i, -1};
                for (int j : left_b) best = std::min(best, std::make_tuple((ca[static_cast<std::size_t>(i)] - moved(j)).norm(), i, j));
                cand.insert(best);
            }
            for (int j : left_b) {
                std::tuple<double, int, int> best{std::numeric_limits<double>::infinity(), -1, j};
                for (int i : left_a) best = std::min(best, std::make_tuple((ca[static_cast<std::size_t>(i)] - moved(j)).norm(), i, j));
                cand.insert(best);
            }
            for (const auto& [d, i, j] : cand) {
                if (used_a.count(i) || used_b.count(j)) continue;
                used_a.insert(i);
                used_b.insert(j);
                map.pairs.emplace_back(i, j);
            }
            std::erase_if(left_a, [&](int i) { return used_a.count(i) > 0; });
            std::erase_if(left_b, [&](int j) { return used_b.count(j) > 0; });
        }
    }
    std::sort(map.pairs.begin(), map.pairs.end());
    for (const auto& c : a.components)
        if (!used_a.count(c.id)) map.unmatched_a.push_back(c.id);
    for (const auto& c : b.components)
        if (!used_b.count(c.id)) map.unmatched_b.push_back(c.id);
    return map;
}

inline nlohmann::ordered_json to_json(const CorrespondenceMap& m, const RigidTransform& t) {
    nlohmann::ordered_json j;
    auto pairs = nlohmann::ordered_json::array();
    for (const auto& [a, b] : m.pairs) pairs.push_back({a, b});
    j["pairs"] = pairs;
    j["unmatched_a"] = m.unmatched_a;
    j["unmatched_b"] = m.unmatched_b;
    j["quarter_turns"] = t.quarter_turns;
    j["scale"] = t.scale;
    j["translation"] = {t.translation.x(), t.translation.y(), t.translation.z()};
    return j;
}

} // namespace partlab
