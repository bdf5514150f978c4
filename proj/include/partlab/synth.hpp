#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "partlab/assembly.hpp"
#include "partlab/error.hpp"
#include "partlab/rng.hpp"

namespace partlab {

/// Procedural multi-component shapes with known part labels. Every semantic
/// part is emitted as one or more box components that touch each other.
struct GeneratorConfig {
    std::vector<std::string> families{"table"};
    int count = 10;
    int min_pieces = 1;  // components per semantic part (scaled per family)
    int max_pieces = 4;
};

inline const std::vector<std::string>& known_families() {
    static const std::vector<std::string> f{"table", "chair", "cart"};
    return f;
}

inline LabelSet family_labels(const std::string& family) {
    if (family == "table") return {"table", {"top", "leg", "stretcher"}};
    if (family == "chair") return {"chair", {"seat", "back", "leg"}};
    if (family == "cart") return {"cart", {"body", "wheel", "axle"}};
    throw ConfigError("unknown shape family '" + family + "'");
}

namespace detail {

class ShapeBuilder {
public:
    ShapeBuilder(std::string id, LabelSet labels) {
        a_.id = std::move(id);
        a_.label_set = std::move(labels);
    }

    /// Oriented box: center, half extents, rotation about the up (y) axis then about z.
    void box(const std::string& name, const std::string& label, const Vec3& center, const Vec3& half,
             const Eigen::Matrix3d& rot = Eigen::Matrix3d::Identity()) {
        Component c;
        c.id = a_.size();
        c.name = name;
        for (int i = 0; i < 8; ++i) {
            const Vec3 corner((i & 1) ? half.x() : -half.x(), (i & 2) ? half.y() : -half.y(),
                              (i & 4) ? half.z() : -half.z());
            c.vertices.push_back(center + rot * corner);
        }
        static constexpr int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
                                            {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
        for (const auto& q : quads) {
            c.triangles.push_back({q[0], q[1], q[2]});
            c.triangles.push_back({q[0], q[2], q[3]});
        }
        a_.labels[c.id] = *a_.label_set->find(label);
        a_.components.push_back(std::move(c));
    }

    /// Axis-aligned box split into `pieces` touching slabs along `axis`.
    void split_box(const std::string& name, const std::string& label, const Vec3& lo, const Vec3& hi, int axis,
                   int pieces) {
        pieces = std::max(1, pieces);
        const double step = (hi[axis] - lo[axis]) / pieces;
        for (int p = 0; p < pieces; ++p) {
            Vec3 a = lo, b = hi;
            a[axis] = lo[axis] + p * step;
            b[axis] = lo[axis] + (p + 1) * step;
            box(pieces == 1 ? name : name + "_" + std::to_string(p), label, 0.5 * (a + b), 0.5 * (b - a));
        }
    }

    Assembly finish() {
        normalize(a_);
        return std::move(a_);
    }

private:
    Assembly a_;
};

inline int draw_pieces(Rng& rng, const GeneratorConfig& cfg, int cap) {
    const int hi = std::max(cfg.min_pieces, std::min(cfg.max_pieces, cap));
    return static_cast<int>(rng.uniform_int(std::max(1, std::min(cfg.min_pieces, hi)), hi));
}

inline Assembly make_table(const std::string& id, Rng& rng, const GeneratorConfig& cfg) {
    ShapeBuilder b(id, family_labels("table"));
    const double w = rng.uniform_real(0.9, 1.4), d = rng.uniform_real(0.55, 0.9), h = rng.uniform_real(0.6, 0.85);
    const double top_t = rng.uniform_real(0.04, 0.06), leg = rng.uniform_real(0.05, 0.08);
    const double inset = rng.uniform_real(0.03, 0.08);
    const double leg_h = h - top_t;
    b.split_box("top", "top", {0, leg_h, 0}, {w, h, d}, 0, draw_pieces(rng, cfg, 12));
    const double xs[2] = {inset, w - inset - leg}, zs[2] = {inset, d - inset - leg};
    int n = 0;
    for (double x : xs)
        for (double z : zs)
            b.split_box("leg" + std::to_string(n++), "leg", {x, 0, z}, {x + leg, leg_h, z + leg}, 1,
                        draw_pieces(rng, cfg, 6));
    if (rng.uniform() < 0.75) {
        const double y = rng.uniform_real(0.15, 0.3) * leg_h, t = 0.6 * leg;
        for (int s = 0; s < 2; ++s) {
            const double z = zs[s] + 0.5 * leg - 0.5 * t;
            b.split_box("stretcher" + std::to_string(s), "stretcher", {xs[0] + leg, y, z}, {xs[1], y + t, z + t}, 0,
                        draw_pieces(rng, cfg, 3));
        }
    }
    return b.finish();
}

inline Assembly make_chair(const std::string& id, Rng& rng, const GeneratorConfig& cfg) {
    ShapeBuilder b(id, family_labels("chair"));
    const double w = rng.uniform_real(0.45, 0.6), d = rng.uniform_real(0.45, 0.55);
    const double seat_y = rng.uniform_real(0.4, 0.5), seat_t = rng.uniform_real(0.04, 0.06);
    const double leg = rng.uniform_real(0.04, 0.06), back_h = rng.uniform_real(0.4, 0.55);
    const double back_t = rng.uniform_real(0.03, 0.05);
    b.split_box("seat", "seat", {0, seat_y, 0}, {w, seat_y + seat_t, d}, 2, draw_pieces(rng, cfg, 8));
    const double xs[2] = {0.02, w - 0.02 - leg}, zs[2] = {0.02, d - 0.02 - leg};
    int n = 0;
    for (double x : xs)
        for (double z : zs)
            b.split_box("leg" + std::to_string(n++), "leg", {x, 0, z}, {x + leg, seat_y, z + leg}, 1,
                        draw_pieces(rng, cfg, 5));
    // Back: spindles standing on the rear edge of the seat, capped by a rail.
    const double rail_h = 0.06, y0 = seat_y + seat_t, y1 = y0 + back_h - rail_h;
    const double z0 = d - back_t;
    const int spindles = std::max(2, draw_pieces(rng, cfg, 9));
    const double sw = w / (2.0 * spindles - 1.0);
    for (int s = 0; s < spindles; ++s) {
        const double x = 2.0 * s * sw;
        b.box("back_spindle" + std::to_string(s), "back", {x + 0.5 * sw, 0.5 * (y0 + y1), z0 + 0.5 * back_t},
              {0.5 * sw, 0.5 * (y1 - y0), 0.5 * back_t});
    }
    b.split_box("back_rail", "back", {0, y1, z0}, {w, y1 + rail_h, d}, 0, draw_pieces(rng, cfg, 3));
    return b.finish();
}

inline Assembly make_cart(const std::string& id, Rng& rng, const GeneratorConfig& cfg) {
    ShapeBuilder b(id, family_labels("cart"));
    const double len = rng.uniform_real(1.2, 1.6), wid = rng.uniform_real(0.6, 0.8);
    const double radius = rng.uniform_real(0.14, 0.2), floor_y = 2.2 * radius, floor_t = 0.04;
    const double wall_h = rng.uniform_real(0.15, 0.3), wall_t = 0.03;
    const double axle_r = 0.025, wheel_t = 0.06, gap = 0.08;
    b.split_box("floor", "body", {0, floor_y, 0}, {len, floor_y + floor_t, wid}, 0, draw_pieces(rng, cfg, 20));
    const double wy = floor_y + floor_t;
    b.split_box("wall0", "body", {0, wy, 0}, {len, wy + wall_h, wall_t}, 0, draw_pieces(rng, cfg, 10));
    b.split_box("wall1", "body", {0, wy, wid - wall_t}, {len, wy + wall_h, wid}, 0, draw_pieces(rng, cfg, 10));

    // Axles hang under the floor along z; wheels sit on the axle ends, outside the body.
    const double axle_y = floor_y - axle_r;
    const double ax[2] = {0.2 * len, 0.8 * len};
    int wn = 0;
    for (int i = 0; i < 2; ++i) {
        b.split_box("axle" + std::to_string(i), "axle", {ax[i] - axle_r, axle_y - axle_r, -gap},
                    {ax[i] + axle_r, axle_y + axle_r, wid + gap}, 2, draw_pieces(rng, cfg, 4));
        for (int side = 0; side < 2; ++side) {
            const double zc = side == 0 ? -gap - 0.5 * wheel_t : wid + gap + 0.5 * wheel_t;
            const Vec3 c(ax[i], axle_y, zc);
            const std::string name = "wheel" + std::to_string(wn++);
            b.box(name + "_hub", "wheel", c, {radius * 0.35, radius * 0.35, 0.5 * wheel_t});
            const int segs = 2 * draw_pieces(rng, cfg, 40) + 6;
            const double arc = 2.0 * std::numbers::pi / segs;
            const double tread = radius * 0.25, chord = 2.0 * radius * std::sin(0.5 * arc) * 1.08;
            for (int s = 0; s < segs; ++s) {
                const double th = s * arc;
                const Eigen::Matrix3d rot = Eigen::AngleAxisd(th, Vec3::UnitZ()).toRotationMatrix();
                const Vec3 at = c + rot * Vec3(radius - 0.5 * tread, 0, 0);
                b.box(name + "_tire" + std::to_string(s), "wheel", at, {0.5 * tread, 0.5 * chord, 0.5 * wheel_t}, rot);
            }
            // Spokes link hub and tire so every wheel is one connected part.
            for (int s = 0; s < 4; ++s) {
                const Eigen::Matrix3d rot =
                    Eigen::AngleAxisd(s * std::numbers::pi / 2, Vec3::UnitZ()).toRotationMatrix();
                const double r0 = radius * 0.3, r1 = radius - 0.9 * tread;
                b.box(name + "_spoke" + std::to_string(s), "wheel", c + rot * Vec3(0.5 * (r0 + r1), 0, 0),
                      {0.5 * (r1 - r0), 0.015, 0.3 * wheel_t}, rot);
            }
        }
    }
    return b.finish();
}

} // namespace detail

/// Generates `cfg.count` labeled assemblies, cycling through `cfg.families`.
/// The output depends only on (cfg, seed).
inline std::vector<Assembly> synthesize_dataset(const GeneratorConfig& cfg, std::uint64_t seed) {
    if (cfg.families.empty()) throw ConfigError("generator config names no shape family");
    for (const auto& f : cfg.families) family_labels(f);
    if (cfg.min_pieces < 1 || cfg.max_pieces < cfg.min_pieces) throw ConfigError("invalid piece range");
    std::vector<Assembly> out;
    Rng rng(seed);
    for (int i = 0; i < cfg.count; ++i) {
        const auto& fam = cfg.families[static_cast<std::size_t>(i) % cfg.families.size()];
        char id[64];
        std::snprintf(id, sizeof id, "%s_%03d", fam.c_str(), i);
        if (fam == "table") out.push_back(detail::make_table(id, rng, cfg));
        else if (fam == "chair") out.push_back(detail::make_chair(id, rng, cfg));
        else out.push_back(detail::make_cart(id, rng, cfg));
    }
    return out;
}

} // namespace partlab
