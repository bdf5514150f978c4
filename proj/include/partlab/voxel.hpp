#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "partlab/assembly.hpp"
#include "partlab/error.hpp"
#include "partlab/geometry.hpp"

namespace partlab {

inline Box unit_frame() {
    Box b;
    b.min = Vec3::Zero();
    b.max = Vec3::Ones();
    return b;
}

/// Binary occupancy over a regular grid spanning `frame`. Linear index is
/// x + R*(y + R*z), x fastest.
class VoxelGrid {
public:
    VoxelGrid() = default;
    VoxelGrid(int resolution, const Box& frame) : resolution_(resolution), frame_(frame) {
        if (resolution < 2) throw ValidationError("voxel resolution must be >= 2");
        if (frame.empty() || (frame.extent().array() <= 0).any())
            throw ValidationError("voxel frame has zero extent");
        words_.assign((cells() + 63) / 64, 0);
    }

    int resolution() const { return resolution_; }
    const Box& frame() const { return frame_; }
    std::size_t cells() const {
        const auto r = static_cast<std::size_t>(resolution_);
        return r * r * r;
    }
    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(resolution_) * (static_cast<std::size_t>(y) +
                                                         static_cast<std::size_t>(resolution_) * z);
    }

    bool test(std::size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
    bool test(int x, int y, int z) const { return test(index(x, y, z)); }
    void set(std::size_t i) { words_[i >> 6] |= std::uint64_t{1} << (i & 63); }
    void set(int x, int y, int z) { set(index(x, y, z)); }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
        return n;
    }
    bool empty() const {
        return std::all_of(words_.begin(), words_.end(), [](std::uint64_t w) { return w == 0; });
    }

    bool compatible(const VoxelGrid& o) const {
        return resolution_ == o.resolution_ && frame_.min == o.frame_.min && frame_.max == o.frame_.max;
    }

    VoxelGrid& operator|=(const VoxelGrid& o) {
        require_compatible(o);
        for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
        return *this;
    }
    VoxelGrid& operator&=(const VoxelGrid& o) {
        require_compatible(o);
        for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
        return *this;
    }
    friend VoxelGrid operator|(VoxelGrid a, const VoxelGrid& b) { return a |= b; }
    friend VoxelGrid operator&(VoxelGrid a, const VoxelGrid& b) { return a &= b; }
    friend bool operator==(const VoxelGrid& a, const VoxelGrid& b) {
        return a.compatible(b) && a.words_ == b.words_;
    }

    std::size_t and_count(const VoxelGrid& o) const {
        require_compatible(o);
        std::size_t n = 0;
        for (std::size_t i = 0; i < words_.size(); ++i) n += static_cast<std::size_t>(std::popcount(words_[i] & o.words_[i]));
        return n;
    }
    std::size_t or_count(const VoxelGrid& o) const {
        require_compatible(o);
        std::size_t n = 0;
        for (std::size_t i = 0; i < words_.size(); ++i) n += static_cast<std::size_t>(std::popcount(words_[i] | o.words_[i]));
        return n;
    }

    /// 26-neighborhood dilation by `radius` voxels (separable box max filter).
    VoxelGrid dilated(int radius = 1) const {
        const int r = resolution_;
        std::vector<std::uint8_t> a(cells()), b(cells());
        for (std::size_t i = 0; i < cells(); ++i) a[i] = test(i);
        const std::size_t stride[3] = {1, static_cast<std::size_t>(r), static_cast<std::size_t>(r) * r};
        for (int axis = 0; axis < 3; ++axis) {
            std::fill(b.begin(), b.end(), 0);
            for (int z = 0; z < r; ++z)
                for (int y = 0; y < r; ++y)
                    for (int x = 0; x < r; ++x) {
                        const std::size_t i = index(x, y, z);
                        if (!a[i]) continue;
                        const int coord = axis == 0 ? x : axis == 1 ? y : z;
                        const int lo = std::max(0, coord - radius), hi = std::min(r - 1, coord + radius);
                        for (int c = lo; c <= hi; ++c)
                            b[i + (static_cast<std::size_t>(c) - static_cast<std::size_t>(coord)) * stride[axis]] = 1;
                    }
            std::swap(a, b);
        }
        VoxelGrid out(resolution_, frame_);
        for (std::size_t i = 0; i < cells(); ++i)
            if (a[i]) out.set(i);
        return out;
    }

    std::vector<std::uint32_t> indices() const {
        std::vector<std::uint32_t> out;
        for (std::size_t w = 0; w < words_.size(); ++w) {
            std::uint64_t bits = words_[w];
            while (bits) {
                out.push_back(static_cast<std::uint32_t>(w * 64 + static_cast<std::size_t>(std::countr_zero(bits))));
                bits &= bits - 1;
            }
        }
        return out;
    }

    /// One byte per voxel (0/1), x fastest.
    std::vector<std::uint8_t> to_bytes() const {
        std::vector<std::uint8_t> out(cells());
        for (std::size_t i = 0; i < cells(); ++i) out[i] = test(i);
        return out;
    }
    static VoxelGrid from_bytes(int resolution, const Box& frame, std::span<const std::uint8_t> bytes) {
        VoxelGrid g(resolution, frame);
        if (bytes.size() != g.cells()) throw ParseError("voxel byte count mismatch");
        for (std::size_t i = 0; i < bytes.size(); ++i) {
            if (bytes[i] > 1) throw ParseError("voxel byte not 0/1");
            if (bytes[i]) g.set(i);
        }
        return g;
    }

private:
    void require_compatible(const VoxelGrid& o) const {
        if (!compatible(o)) throw ValidationError("voxel grids differ in resolution or frame");
    }

    int resolution_ = 0;
    Box frame_;
    std::vector<std::uint64_t> words_;
};

namespace detail {

// Separating-axis triangle/box overlap (Akenine-Moller), closed boxes.
inline bool triangle_box_overlap(const Vec3& center, const Vec3& half, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 v0 = a - center, v1 = b - center, v2 = c - center;
    const Vec3 e0 = v1 - v0, e1 = v2 - v1, e2 = v0 - v2;

    auto axis_test = [&](const Vec3& axis) {
        const double p0 = axis.dot(v0), p1 = axis.dot(v1), p2 = axis.dot(v2);
        const double r = half.x() * std::abs(axis.x()) + half.y() * std::abs(axis.y()) + half.z() * std::abs(axis.z());
        return !(std::min({p0, p1, p2}) > r || std::max({p0, p1, p2}) < -r);
    };
    for (const Vec3* e : {&e0, &e1, &e2}) {
        if (!axis_test(Vec3(0, -e->z(), e->y()))) return false;
        if (!axis_test(Vec3(e->z(), 0, -e->x()))) return false;
        if (!axis_test(Vec3(-e->y(), e->x(), 0))) return false;
    }
    for (int k = 0; k < 3; ++k) {
        if (std::min({v0[k], v1[k], v2[k]}) > half[k] || std::max({v0[k], v1[k], v2[k]}) < -half[k]) return false;
    }
    return axis_test(e0.cross(e1));
}

/// Calls `emit(linear_index)` for every voxel overlapped by any triangle of `c`.
template <class Emit>
void rasterize(const Component& comp, const Box& frame, int res, Emit&& emit) {
    const Vec3 cell = frame.extent() / res;
    const Vec3 half = 0.5 * cell * (1.0 + 1e-9);
    const std::size_t r = static_cast<std::size_t>(res);
    for (const auto& t : comp.triangles) {
        const Vec3& a = comp.vertices[static_cast<std::size_t>(t[0])];
        const Vec3& b = comp.vertices[static_cast<std::size_t>(t[1])];
        const Vec3& c = comp.vertices[static_cast<std::size_t>(t[2])];
        const Vec3 tmin = a.cwiseMin(b).cwiseMin(c), tmax = a.cwiseMax(b).cwiseMax(c);
        int lo[3], hi[3];
        bool outside = false;
        for (int k = 0; k < 3; ++k) {
            const double f0 = (tmin[k] - frame.min[k]) / cell[k], f1 = (tmax[k] - frame.min[k]) / cell[k];
            if (f1 < -1e-6 || f0 > res + 1e-6) outside = true;
            lo[k] = std::clamp(static_cast<int>(std::floor(f0 - 1e-6)), 0, res - 1);
            hi[k] = std::clamp(static_cast<int>(std::floor(f1 + 1e-6)), 0, res - 1);
        }
        if (outside) continue;
        for (int z = lo[2]; z <= hi[2]; ++z)
            for (int y = lo[1]; y <= hi[1]; ++y)
                for (int x = lo[0]; x <= hi[0]; ++x) {
                    const Vec3 center = frame.min + Vec3((x + 0.5) * cell.x(), (y + 0.5) * cell.y(), (z + 0.5) * cell.z());
                    if (triangle_box_overlap(center, half, a, b, c))
                        emit(static_cast<std::size_t>(x) + r * (static_cast<std::size_t>(y) + r * static_cast<std::size_t>(z)));
                }
    }
}

} // namespace detail

/// Conservative surface rasterization: a voxel is set iff some triangle touches its closed box.
inline VoxelGrid voxelize(std::span<const Component* const> comps, const Box& frame, int resolution) {
    VoxelGrid g(resolution, frame);
    for (const Component* c : comps) detail::rasterize(*c, frame, resolution, [&](std::size_t i) { g.set(i); });
    return g;
}

inline VoxelGrid voxelize(const Component& comp, const Box& frame, int resolution) {
    const Component* p = &comp;
    return voxelize(std::span<const Component* const>(&p, 1), frame, resolution);
}

inline VoxelGrid voxelize(const Assembly& a, std::span<const int> members, const Box& frame, int resolution) {
    std::vector<const Component*> ptrs;
    for (int m : members) ptrs.push_back(&a.components.at(static_cast<std::size_t>(m)));
    return voxelize(ptrs, frame, resolution);
}

/// |dilate(a) AND dilate(b)| with a one-voxel 26-neighborhood dilation, so
/// touching components register contact at finite resolution.
inline std::size_t contact_volume(const VoxelGrid& a, const VoxelGrid& b) {
    if (!a.compatible(b)) throw ValidationError("contact_volume: resolution or frame mismatch");
    return a.dilated().and_count(b.dilated());
}

inline double iou(const VoxelGrid& a, const VoxelGrid& b) {
    if (!a.compatible(b)) throw ValidationError("iou: resolution or frame mismatch");
    const std::size_t u = a.or_count(b);
    return u == 0 ? 0.0 : static_cast<double>(a.and_count(b)) / static_cast<double>(u);
}

/// Sparse per-component occupancy in a shared global grid. Occupied voxels are
/// renumbered into dense "slots" so set unions and overlaps cost O(occupied).
class VoxelIndex {
public:
    VoxelIndex(const Assembly& a, int resolution, const Box& frame = unit_frame())
        : resolution_(resolution), frame_(frame) {
        if (resolution < 2) throw ValidationError("voxel resolution must be >= 2");
        std::vector<std::vector<std::uint32_t>> raw(a.components.size());
        std::vector<std::uint32_t> all;
        for (std::size_t c = 0; c < a.components.size(); ++c) {
            auto& v = raw[c];
            detail::rasterize(a.components[c], frame, resolution, [&](std::size_t i) { v.push_back(static_cast<std::uint32_t>(i)); });
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
            all.insert(all.end(), v.begin(), v.end());
        }
        std::sort(all.begin(), all.end());
        all.erase(std::unique(all.begin(), all.end()), all.end());
        voxels_ = std::move(all);
        slots_.resize(raw.size());
        for (std::size_t c = 0; c < raw.size(); ++c) {
            slots_[c].reserve(raw[c].size());
            for (auto v : raw[c])
                slots_[c].push_back(static_cast<std::uint32_t>(std::lower_bound(voxels_.begin(), voxels_.end(), v) - voxels_.begin()));
        }
    }

    int resolution() const { return resolution_; }
    const Box& frame() const { return frame_; }
    std::size_t num_slots() const { return voxels_.size(); }
    std::size_t num_components() const { return slots_.size(); }
    std::size_t total_volume() const { return voxels_.size(); }
    std::size_t component_volume(int c) const { return slots_.at(static_cast<std::size_t>(c)).size(); }
    const std::vector<std::uint32_t>& component_slots(int c) const { return slots_.at(static_cast<std::size_t>(c)); }
    std::uint32_t voxel_of_slot(std::uint32_t s) const { return voxels_[s]; }

    /// Sorted distinct slots covered by the union of `members`.
    std::vector<std::uint32_t> slots(std::span<const int> members) const {
        std::vector<std::uint8_t> seen(voxels_.size(), 0);
        std::vector<std::uint32_t> out;
        for (int m : members)
            for (auto s : component_slots(m))
                if (!seen[s]) seen[s] = 1, out.push_back(s);
        std::sort(out.begin(), out.end());
        return out;
    }

    std::size_t volume(std::span<const int> members) const { return slots(members).size(); }

    VoxelGrid grid(std::span<const int> members) const {
        VoxelGrid g(resolution_, frame_);
        for (int m : members)
            for (auto s : component_slots(m)) g.set(voxels_[s]);
        return g;
    }

private:
    int resolution_;
    Box frame_;
    std::vector<std::uint32_t> voxels_;              // slot -> linear voxel index
    std::vector<std::vector<std::uint32_t>> slots_;  // component -> slots
};

/// Overlap of arbitrary component sets against a fixed partition of components
/// into groups (e.g. ground-truth parts or labels). Components with group < 0 belong to none.
class GroupOverlap {
public:
    GroupOverlap(const VoxelIndex& index, std::span<const int> group_of_component, int num_groups)
        : num_groups_(num_groups), group_volume_(static_cast<std::size_t>(num_groups), 0) {
        const std::size_t n = index.num_slots();
        std::vector<std::vector<int>> per_slot(n);
        for (std::size_t c = 0; c < group_of_component.size(); ++c) {
            const int g = group_of_component[c];
            if (g < 0) continue;
            for (auto s : index.component_slots(static_cast<int>(c))) per_slot[s].push_back(g);
        }
        offsets_.assign(n + 1, 0);
        for (std::size_t s = 0; s < n; ++s) {
            auto& v = per_slot[s];
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
            offsets_[s + 1] = offsets_[s] + v.size();
            for (int g : v) {
                groups_.push_back(g);
                ++group_volume_[static_cast<std::size_t>(g)];
            }
        }
    }

    int num_groups() const { return num_groups_; }
    std::size_t group_volume(int g) const { return group_volume_.at(static_cast<std::size_t>(g)); }

    /// Per group, |voxels(slots) AND voxels(group)|.
    std::vector<std::size_t> intersections(std::span<const std::uint32_t> slots) const {
        std::vector<std::size_t> out(static_cast<std::size_t>(num_groups_), 0);
        for (auto s : slots)
            for (std::size_t k = offsets_[s]; k < offsets_[s + 1]; ++k) ++out[static_cast<std::size_t>(groups_[k])];
        return out;
    }

    /// IoU of `slots` against every group.
    std::vector<double> ious(std::span<const std::uint32_t> slots) const {
        auto inter = intersections(slots);
        std::vector<double> out(inter.size());
        for (std::size_t g = 0; g < inter.size(); ++g) {
            const double u = static_cast<double>(slots.size() + group_volume_[g] - inter[g]);
            out[g] = u > 0 ? static_cast<double>(inter[g]) / u : 0.0;
        }
        return out;
    }

private:
    int num_groups_;
    std::vector<std::size_t> group_volume_;
    std::vector<std::size_t> offsets_;
    std::vector<int> groups_;
};

inline constexpr int kScorerResolution = 30;

/// Three scorer input channels for one hypothesis.
struct HypothesisVolumes {
    VoxelGrid local;           // hypothesis bounding cube
    VoxelGrid global_part;     // shape frame, hypothesis components only
    VoxelGrid global_context;  // shape frame, all other components
};

inline HypothesisVolumes hypothesis_volumes(const Assembly& a, std::span<const int> members,
                                            int resolution = kScorerResolution) {
    if (members.empty()) throw ValidationError("hypothesis has no members");
    std::vector<const Component*> part, rest;
    std::vector<char> in(a.components.size(), 0);
    Box bb;
    for (int m : members) {
        const auto& c = a.components.at(static_cast<std::size_t>(m));
        in[static_cast<std::size_t>(m)] = 1;
        bb.extend(c.bounds());
    }
    for (std::size_t c = 0; c < a.components.size(); ++c) (in[c] ? part : rest).push_back(&a.components[c]);
    Box local = bb.cubified();
    if (!(local.extent().maxCoeff() > 0)) throw ValidationError("hypothesis has zero extent");
    return {voxelize(part, local, resolution), voxelize(part, unit_frame(), resolution),
            voxelize(rest, unit_frame(), resolution)};
}

// MCV1 volume exchange: "MCV1", u32 R, u32 C=3, u32 N, then N*C*R^3 bytes.
namespace mcv1 {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(in[at + i])) << (8 * i);
    return v;
}

inline std::string encode(std::span<const HypothesisVolumes> records, int resolution = kScorerResolution) {
    std::string out = "MCV1";
    put_u32(out, static_cast<std::uint32_t>(resolution));
    put_u32(out, 3);
    put_u32(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        for (const VoxelGrid* g : {&r.local, &r.global_part, &r.global_context}) {
            if (g->resolution() != resolution) throw ValidationError("MCV1: record resolution mismatch");
            const auto bytes = g->to_bytes();
            out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
        }
    }
    return out;
}

/// Decoded grids carry placeholder frames (the format does not store them).
inline std::vector<HypothesisVolumes> decode(std::string_view in) {
    if (in.size() < 16 || in.substr(0, 4) != "MCV1") throw ParseError("MCV1: bad magic");
    const auto r = get_u32(in, 4), c = get_u32(in, 8), n = get_u32(in, 12);
    if (r < 2 || c != 3) throw ParseError("MCV1: unsupported resolution/channel count");
    const std::size_t cells = static_cast<std::size_t>(r) * r * r;
    if (in.size() != 16 + static_cast<std::size_t>(n) * c * cells) throw ParseError("MCV1: truncated or oversized payload");
    std::vector<HypothesisVolumes> out;
    std::size_t at = 16;
    auto next = [&] {
        auto bytes = std::span(reinterpret_cast<const std::uint8_t*>(in.data() + at), cells);
        at += cells;
        return VoxelGrid::from_bytes(static_cast<int>(r), unit_frame(), bytes);
    };
    for (std::uint32_t i = 0; i < n; ++i) {
        HypothesisVolumes h;
        h.local = next();
        h.global_part = next();
        h.global_context = next();
        out.push_back(std::move(h));
    }
    return out;
}

} // namespace mcv1

} // namespace partlab
