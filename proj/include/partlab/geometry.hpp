#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace partlab {

using Vec3 = Eigen::Vector3d;

/// Axis-aligned box. Default-constructed boxes are empty (min > max).
struct Box {
    Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

    bool empty() const { return (min.array() > max.array()).any(); }
    void extend(const Vec3& p) {
        min = min.cwiseMin(p);
        max = max.cwiseMax(p);
    }
    void extend(const Box& b) {
        if (b.empty()) return;
        min = min.cwiseMin(b.min);
        max = max.cwiseMax(b.max);
    }
    Vec3 extent() const { return empty() ? Vec3::Zero() : Vec3(max - min); }
    Vec3 center() const { return 0.5 * (min + max); }
    double diameter() const { return extent().norm(); }

    /// Smallest cube sharing this box's center, padded symmetrically on the short axes.
    Box cubified() const {
        Box c;
        const double edge = extent().maxCoeff();
        const Vec3 half = Vec3::Constant(0.5 * edge);
        c.min = center() - half;
        c.max = center() + half;
        return c;
    }
};

struct HullCentroid {
    Vec3 centroid = Vec3::Zero();
    std::vector<Vec3> vertices;  // hull vertices, or the distinct input points when degenerate
    bool degenerate = false;     // fewer than 4 affinely independent points
};

namespace detail {

struct Vec3Hash {
    std::size_t operator()(const Vec3& v) const {
        std::size_t h = 0;
        for (int i = 0; i < 3; ++i) {
            const double d = v[i] == 0.0 ? 0.0 : v[i];  // fold -0 onto +0
            h = h * 1000003u ^ std::hash<double>{}(d);
        }
        return h;
    }
};

inline std::vector<Vec3> distinct_points(std::span<const Vec3> points) {
    std::unordered_set<Vec3, Vec3Hash> seen;
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const auto& p : points)
        if (seen.insert(p).second) out.push_back(p);
    return out;
}

inline Vec3 mean(std::span<const Vec3> pts) {
    Vec3 m = Vec3::Zero();
    for (const auto& p : pts) m += p;
    return pts.empty() ? m : Vec3(m / static_cast<double>(pts.size()));
}

} // namespace detail

/// Volume centroid of the convex hull of `points` (incremental hull construction).
/// Coplanar or collinear input falls back to the mean of the distinct points.
inline HullCentroid convex_hull_centroid(std::span<const Vec3> points) {
    HullCentroid out;
    std::vector<Vec3> pts = detail::distinct_points(points);
    if (pts.empty()) {
        out.degenerate = true;
        return out;
    }

    Box bb;
    for (const auto& p : pts) bb.extend(p);
    const double scale = std::max(bb.diameter(), 1e-300);
    const double eps = 1e-10 * scale;

    auto degenerate = [&] {
        out.degenerate = true;
        out.centroid = detail::mean(pts);
        out.vertices = pts;
        return out;
    };
    if (pts.size() < 4) return degenerate();

    // Initial tetrahedron from extreme points.
    std::size_t i0 = 0;
    for (std::size_t i = 1; i < pts.size(); ++i)
        if (pts[i].x() < pts[i0].x()) i0 = i;
    std::size_t i1 = i0;
    double best = -1;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double d = (pts[i] - pts[i0]).squaredNorm();
        if (d > best) best = d, i1 = i;
    }
    const Vec3 dir = (pts[i1] - pts[i0]).normalized();
    std::size_t i2 = i0;
    best = -1;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double d = (pts[i] - pts[i0]).cross(dir).norm();
        if (d > best) best = d, i2 = i;
    }
    if (best <= eps) return degenerate();
    Vec3 n = (pts[i1] - pts[i0]).cross(pts[i2] - pts[i0]).normalized();
    std::size_t i3 = i0;
    best = -1;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double d = std::abs(n.dot(pts[i] - pts[i0]));
        if (d > best) best = d, i3 = i;
    }
    if (best <= eps) return degenerate();

    struct Face {
        std::array<std::size_t, 3> v;
        Vec3 normal;
        double offset;
        bool alive = true;
    };
    std::vector<Face> faces;
    const Vec3 inner = (pts[i0] + pts[i1] + pts[i2] + pts[i3]) / 4.0;
    auto add_face = [&](std::size_t a, std::size_t b, std::size_t c) {
        Vec3 nrm = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
        if (nrm.dot(inner - pts[a]) > 0) {
            std::swap(b, c);
            nrm = -nrm;
        }
        const double len = nrm.norm();
        if (len > 0) nrm /= len;
        faces.push_back({{a, b, c}, nrm, nrm.dot(pts[a])});
    };
    add_face(i0, i1, i2);
    add_face(i0, i1, i3);
    add_face(i0, i2, i3);
    add_face(i1, i2, i3);

    struct PairHash {
        std::size_t operator()(const std::pair<std::size_t, std::size_t>& e) const {
            return e.first * 0x9e3779b97f4a7c15ULL ^ e.second;
        }
    };

    for (std::size_t p = 0; p < pts.size(); ++p) {
        if (p == i0 || p == i1 || p == i2 || p == i3) continue;
        std::vector<std::size_t> visible;
        for (std::size_t f = 0; f < faces.size(); ++f)
            if (faces[f].alive && faces[f].normal.dot(pts[p]) - faces[f].offset > eps) visible.push_back(f);
        if (visible.empty()) continue;

        std::unordered_set<std::pair<std::size_t, std::size_t>, PairHash> edges;
        for (auto f : visible) {
            const auto& v = faces[f].v;
            for (int k = 0; k < 3; ++k) edges.insert({v[k], v[(k + 1) % 3]});
        }
        std::vector<std::pair<std::size_t, std::size_t>> horizon;
        for (auto f : visible) {
            const auto& v = faces[f].v;
            for (int k = 0; k < 3; ++k) {
                const std::pair<std::size_t, std::size_t> e{v[k], v[(k + 1) % 3]};
                if (!edges.count({e.second, e.first})) horizon.push_back(e);
            }
            faces[f].alive = false;
        }
        for (const auto& [a, b] : horizon) {
            // Keep the orientation of the removed face: (a, b) was counter-clockwise seen from outside.
            Vec3 nrm = (pts[b] - pts[a]).cross(pts[p] - pts[a]);
            const double len = nrm.norm();
            if (len > 0) nrm /= len;
            faces.push_back({{a, b, p}, nrm, nrm.dot(pts[a])});
        }
        if (faces.size() > 64 && faces.size() > 4 * pts.size()) {
            std::erase_if(faces, [](const Face& f) { return !f.alive; });
        }
    }

    double volume = 0;
    Vec3 moment = Vec3::Zero();
    std::vector<char> on_hull(pts.size(), 0);
    for (const auto& f : faces) {
        if (!f.alive) continue;
        const Vec3& a = pts[f.v[0]];
        const Vec3& b = pts[f.v[1]];
        const Vec3& c = pts[f.v[2]];
        const double v = (a - inner).dot((b - inner).cross(c - inner)) / 6.0;
        volume += v;
        moment += v * (inner + a + b + c) / 4.0;
        for (auto i : f.v) on_hull[i] = 1;
    }
    if (!(volume > eps * scale * scale)) return degenerate();
    out.centroid = moment / volume;
    for (std::size_t i = 0; i < pts.size(); ++i)
        if (on_hull[i]) out.vertices.push_back(pts[i]);
    return out;
}

} // namespace partlab
