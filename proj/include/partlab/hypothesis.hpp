#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "partlab/assembly.hpp"
#include "partlab/error.hpp"
#include "partlab/geometry.hpp"
#include "partlab/rng.hpp"
#include "partlab/voxel.hpp"

namespace partlab {

enum class Criterion { CenterDistance = 0, GeometricContact = 1, GroupSize = 2 };

inline constexpr std::array<Criterion, 3> kAllCriteria{Criterion::CenterDistance, Criterion::GeometricContact,
                                                       Criterion::GroupSize};

inline std::string to_string(Criterion c) {
    switch (c) {
    case Criterion::CenterDistance: return "center";
    case Criterion::GeometricContact: return "contact";
    default: return "size";
    }
}

inline Criterion criterion_from_string(const std::string& s) {
    if (s == "center") return Criterion::CenterDistance;
    if (s == "contact") return Criterion::GeometricContact;
    if (s == "size") return Criterion::GroupSize;
    throw ParseError("unknown grouping criterion '" + s + "'");
}

inline constexpr int kGroupingResolution = 64;
inline constexpr int kEvaluationResolution = 200;

/// Union of the vertices of the listed components.
inline std::vector<Vec3> gather_vertices(const Assembly& a, std::span<const int> members) {
    std::vector<Vec3> pts;
    for (int m : members) {
        const auto& v = a.components.at(static_cast<std::size_t>(m)).vertices;
        pts.insert(pts.end(), v.begin(), v.end());
    }
    return pts;
}

/// Distance between the convex-hull volume centroids of the two component unions.
inline double center_distance(const Assembly& a, std::span<const int> lhs, std::span<const int> rhs) {
    const auto pa = gather_vertices(a, lhs), pb = gather_vertices(a, rhs);
    if (pa.empty() || pb.empty()) throw ValidationError("center_distance: empty component set");
    return (convex_hull_centroid(pa).centroid - convex_hull_centroid(pb).centroid).norm();
}

/// max(C_ab / V_a, C_ab / V_b), capped at 1 (dilated contact can exceed a volume).
inline double contact_ratio(std::size_t volume_a, std::size_t volume_b, std::size_t contact) {
    if (volume_a == 0 || volume_b == 0) throw ValidationError("contact_ratio: zero-volume operand");
    const double r = std::max(static_cast<double>(contact) / static_cast<double>(volume_a),
                              static_cast<double>(contact) / static_cast<double>(volume_b));
    return std::min(1.0, r);
}

inline double contact_ratio(const VoxelGrid& a, const VoxelGrid& b) {
    return contact_ratio(a.count(), b.count(), contact_volume(a, b));
}

/// Per-assembly voxel data shared by the three grouping criteria.
class GroupingContext {
public:
    explicit GroupingContext(const Assembly& a, int resolution = kGroupingResolution)
        : assembly_(&a), resolution_(resolution), shape_(resolution, unit_frame()) {
        const std::size_t n = a.components.size();
        grids_.reserve(n);
        dilated_.reserve(n);
        for (const auto& c : a.components) {
            grids_.push_back(voxelize(c, unit_frame(), resolution));
            dilated_.push_back(grids_.back().dilated());
            shape_ |= grids_.back();
            hulls_.push_back(convex_hull_centroid(c.vertices));
            Box b = c.bounds();
            const Vec3 pad = Vec3::Constant(2.5 / resolution);
            b.min -= pad;
            b.max += pad;
            boxes_.push_back(b);
        }
        shape_volume_ = shape_.count();
        if (shape_volume_ == 0) throw ValidationError("assembly voxelizes to nothing");
    }

    const Assembly& assembly() const { return *assembly_; }
    int resolution() const { return resolution_; }
    std::size_t size() const { return grids_.size(); }
    const VoxelGrid& grid(int c) const { return grids_.at(static_cast<std::size_t>(c)); }
    const VoxelGrid& dilated(int c) const { return dilated_.at(static_cast<std::size_t>(c)); }
    const HullCentroid& hull(int c) const { return hulls_.at(static_cast<std::size_t>(c)); }
    const VoxelGrid& shape_grid() const { return shape_; }
    std::size_t shape_volume() const { return shape_volume_; }

    /// Dilated contact between two components, with a bounding-box early out.
    std::size_t contact(int a, int b) const {
        const Box& x = boxes_[static_cast<std::size_t>(a)];
        const Box& y = boxes_[static_cast<std::size_t>(b)];
        if ((x.max.array() < y.min.array()).any() || (y.max.array() < x.min.array()).any()) return 0;
        return dilated(a).and_count(dilated(b));
    }

    VoxelGrid grid(std::span<const int> members) const {
        VoxelGrid g(resolution_, unit_frame());
        for (int m : members) g |= grid(m);
        return g;
    }

    double contact_ratio(std::span<const int> lhs, std::span<const int> rhs) const {
        VoxelGrid a = grid(lhs), b = grid(rhs);
        VoxelGrid da(resolution_, unit_frame()), db(resolution_, unit_frame());
        for (int m : lhs) da |= dilated(m);
        for (int m : rhs) db |= dilated(m);
        return partlab::contact_ratio(a.count(), b.count(), da.and_count(db));
    }

    /// |voxels(lhs U rhs)| / |voxels(shape)|.
    double group_size(std::span<const int> lhs, std::span<const int> rhs) const {
        VoxelGrid g = grid(lhs);
        g |= grid(rhs);
        return static_cast<double>(g.count()) / static_cast<double>(shape_volume_);
    }

    /// Component adjacency (dilated contact > 0), completed so the graph is connected:
    /// each disconnected cluster is linked to its nearest cluster by hull-centroid distance.
    std::vector<std::pair<int, int>> adjacency() const {
        const int n = static_cast<int>(size());
        std::vector<std::pair<int, int>> edges;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (contact(i, j) > 0) edges.emplace_back(i, j);

        std::vector<int> parent(static_cast<std::size_t>(n));
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](int x) {
            while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            return x;
        };
        auto unite = [&](int x, int y) {
            x = find(x), y = find(y);
            if (x == y) return false;
            parent[static_cast<std::size_t>(std::max(x, y))] = std::min(x, y);
            return true;
        };
        for (auto [i, j] : edges) unite(i, j);

        for (;;) {
            std::map<int, std::tuple<double, int, int>> nearest;  // cluster root -> (dist, i, j)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    if (find(i) == find(j)) continue;
                    const double d = (hull(i).centroid - hull(j).centroid).norm();
                    auto cand = std::make_tuple(d, std::min(i, j), std::max(i, j));
                    auto it = nearest.find(find(i));
                    if (it == nearest.end() || cand < it->second) nearest[find(i)] = cand;
                }
            if (nearest.empty()) break;
            for (const auto& [root, e] : nearest) {
                const auto [d, i, j] = e;
                if (unite(i, j)) edges.emplace_back(i, j);
            }
        }
        std::sort(edges.begin(), edges.end());
        return edges;
    }

private:
    const Assembly* assembly_;
    int resolution_;
    std::vector<VoxelGrid> grids_;
    std::vector<VoxelGrid> dilated_;
    std::vector<HullCentroid> hulls_;
    std::vector<Box> boxes_;
    VoxelGrid shape_;
    std::size_t shape_volume_ = 0;
};

struct HierarchyNode {
    std::vector<int> members;  // sorted component ids
    int merge_order = 0;       // 0 for leaves, 1..n-1 for merges
    int left = -1;
    int right = -1;
    int parent = -1;
};

/// Binary merge tree: nodes [0, n) are the leaves (node i = component i),
/// node n + k - 1 is the k-th merge.
struct GroupingHierarchy {
    Criterion criterion = Criterion::CenterDistance;
    int num_leaves = 0;
    std::vector<HierarchyNode> nodes;

    int root() const { return static_cast<int>(nodes.size()) - 1; }
    std::size_t num_merges() const { return nodes.size() - static_cast<std::size_t>(num_leaves); }
};

namespace detail {

struct ActiveNode {
    std::vector<int> members;
    HullCentroid hull;
    VoxelGrid grid;
    VoxelGrid dilated;
    std::size_t volume = 0;
};

struct MergeKey {
    double key;
    double center;
    int lo;  // smaller of the two nodes' minimum member ids
    int hi;
};

// Keys within this tolerance count as ties, so round-off in normalized
// coordinates does not decide between geometrically equal pairs.
inline constexpr double kKeyTolerance = 1e-9;

inline bool better(const MergeKey& a, const MergeKey& b) {
    if (a.key < b.key - kKeyTolerance) return true;
    if (a.key > b.key + kKeyTolerance) return false;
    if (a.center < b.center - kKeyTolerance) return true;
    if (a.center > b.center + kKeyTolerance) return false;
    return std::tie(a.lo, a.hi) < std::tie(b.lo, b.hi);
}

} // namespace detail

/// Greedy bottom-up agglomeration: repeatedly merge the adjacent pair with the
/// smallest merge key. CenterDistance and GroupSize use the criterion value;
/// GeometricContact uses 1 - contact ratio so large contact merges first.
inline GroupingHierarchy build_hierarchy(const GroupingContext& ctx, Criterion criterion) {
    const int n = static_cast<int>(ctx.size());
    GroupingHierarchy h;
    h.criterion = criterion;
    h.num_leaves = n;
    if (n == 0) throw ValidationError("build_hierarchy: assembly has no components");

    std::map<int, detail::ActiveNode> active;
    for (int c = 0; c < n; ++c) {
        h.nodes.push_back({{c}, 0, -1, -1, -1});
        active[c] = {{c}, ctx.hull(c), ctx.grid(c), ctx.dilated(c), ctx.grid(c).count()};
    }
    std::map<int, std::set<int>> nbrs;
    for (auto [i, j] : ctx.adjacency()) {
        nbrs[i].insert(j);
        nbrs[j].insert(i);
    }

    auto key_of = [&](int u, int v) {
        const auto& a = active.at(u);
        const auto& b = active.at(v);
        detail::MergeKey k{};
        k.center = (a.hull.centroid - b.hull.centroid).norm();
        switch (criterion) {
        case Criterion::CenterDistance: k.key = k.center; break;
        case Criterion::GeometricContact:
            k.key = 1.0 - contact_ratio(std::max<std::size_t>(a.volume, 1), std::max<std::size_t>(b.volume, 1),
                                        a.dilated.and_count(b.dilated));
            break;
        case Criterion::GroupSize:
            k.key = static_cast<double>(a.grid.or_count(b.grid)) / static_cast<double>(ctx.shape_volume());
            break;
        }
        const int ma = a.members.front(), mb = b.members.front();
        k.lo = std::min(ma, mb);
        k.hi = std::max(ma, mb);
        return k;
    };

    std::map<std::pair<int, int>, detail::MergeKey> edges;
    for (const auto& [u, vs] : nbrs)
        for (int v : vs)
            if (u < v) edges[{u, v}] = key_of(u, v);

    for (int order = 1; order < n; ++order) {
        if (edges.empty()) throw ValidationError("build_hierarchy: adjacency graph disconnected");
        auto best = edges.begin();
        for (auto it = std::next(edges.begin()); it != edges.end(); ++it)
            if (detail::better(it->second, best->second)) best = it;
        const auto [u, v] = best->first;
        const int w = static_cast<int>(h.nodes.size());

        detail::ActiveNode merged;
        auto& a = active.at(u);
        auto& b = active.at(v);
        std::merge(a.members.begin(), a.members.end(), b.members.begin(), b.members.end(),
                   std::back_inserter(merged.members));
        std::vector<Vec3> pts = a.hull.vertices;
        pts.insert(pts.end(), b.hull.vertices.begin(), b.hull.vertices.end());
        merged.hull = convex_hull_centroid(pts);
        merged.grid = a.grid | b.grid;
        merged.dilated = a.dilated | b.dilated;
        merged.volume = merged.grid.count();

        h.nodes.push_back({merged.members, order, u, v, -1});
        h.nodes[static_cast<std::size_t>(u)].parent = w;
        h.nodes[static_cast<std::size_t>(v)].parent = w;

        std::set<int> wn;
        for (int x : {u, v}) {
            for (int y : nbrs[x]) {
                if (y != u && y != v) wn.insert(y);
                edges.erase({std::min(x, y), std::max(x, y)});
                nbrs[y].erase(x);
            }
            nbrs.erase(x);
            active.erase(x);
        }
        active[w] = std::move(merged);
        for (int y : wn) {
            nbrs[w].insert(y);
            nbrs[y].insert(w);
            edges[{y, w}] = key_of(y, w);
        }
    }
    return h;
}

/// A candidate part: a merge node of one grouping hierarchy.
struct PartHypothesis {
    int id = 0;
    std::vector<int> members;  // sorted
    Criterion source = Criterion::CenterDistance;
    int hierarchy_rank = 0;  // 1-based position in the unperturbed order
    int selection_rank = 0;  // 1-based position after random perturbation
};

/// Per hierarchy, merge nodes are ranked top-down (root first, rank i = 1..M),
/// perturbed to key i * u with u ~ U(0,1), re-sorted ascending, and the first
/// ceil(budget/3) kept. The union is ordered by (selection_rank, criterion),
/// deduplicated by member set and truncated to `budget`.
inline std::vector<PartHypothesis> select_hypotheses(std::span<const GroupingHierarchy> hierarchies, int budget,
                                                     std::uint64_t seed) {
    if (budget < 3) throw ValidationError("hypothesis budget must be >= 3");
    const int per = (budget + 2) / 3;
    Rng rng(seed);
    struct Cand {
        int selection_rank;
        int criterion_pos;
        PartHypothesis h;
    };
    std::vector<Cand> cands;
    for (std::size_t hi = 0; hi < hierarchies.size(); ++hi) {
        const auto& hier = hierarchies[hi];
        std::vector<int> internal;
        for (int i = hier.root(); i >= hier.num_leaves; --i) internal.push_back(i);
        std::vector<std::pair<double, int>> keyed;  // (i * u, i)
        for (std::size_t i = 0; i < internal.size(); ++i) {
            const double u = rng.uniform_open();
            keyed.emplace_back(static_cast<double>(i + 1) * u, static_cast<int>(i + 1));
        }
        std::sort(keyed.begin(), keyed.end());
        for (std::size_t pos = 0; pos < keyed.size() && static_cast<int>(pos) < per; ++pos) {
            const int rank = keyed[pos].second;
            const auto& node = hier.nodes[static_cast<std::size_t>(internal[static_cast<std::size_t>(rank - 1)])];
            PartHypothesis h;
            h.members = node.members;
            h.source = hier.criterion;
            h.hierarchy_rank = rank;
            h.selection_rank = static_cast<int>(pos) + 1;
            cands.push_back({h.selection_rank, static_cast<int>(hi), std::move(h)});
        }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        return std::tie(a.selection_rank, a.criterion_pos) < std::tie(b.selection_rank, b.criterion_pos);
    });
    std::set<std::vector<int>> seen;
    std::vector<PartHypothesis> out;
    for (auto& c : cands) {
        if (static_cast<int>(out.size()) >= budget) break;
        if (!seen.insert(c.h.members).second) continue;
        c.h.id = static_cast<int>(out.size());
        out.push_back(std::move(c.h));
    }
    return out;
}

/// Builds the three hierarchies and selects up to `budget` hypotheses.
inline std::vector<PartHypothesis> generate_hypotheses(const GroupingContext& ctx, int budget, std::uint64_t seed) {
    std::vector<GroupingHierarchy> hs;
    for (auto c : kAllCriteria) hs.push_back(build_hierarchy(ctx, c));
    return select_hypotheses(hs, budget, seed);
}

// JSON lines: {"id", "members", "source", "hierarchy_rank", "selection_rank"}.
inline std::string hypotheses_to_jsonl(std::span<const PartHypothesis> hyps) {
    std::string out;
    for (const auto& h : hyps) {
        nlohmann::ordered_json j;
        j["id"] = h.id;
        j["members"] = h.members;
        j["source"] = to_string(h.source);
        j["hierarchy_rank"] = h.hierarchy_rank;
        j["selection_rank"] = h.selection_rank;
        out += j.dump() + "\n";
    }
    return out;
}

inline std::vector<PartHypothesis> hypotheses_from_jsonl(const std::string& text) {
    std::vector<PartHypothesis> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::set<int> ids;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            PartHypothesis h;
            h.id = j.at("id").get<int>();
            h.members = j.at("members").get<std::vector<int>>();
            h.source = criterion_from_string(j.at("source").get<std::string>());
            h.hierarchy_rank = j.at("hierarchy_rank").get<int>();
            h.selection_rank = j.at("selection_rank").get<int>();
            if (h.members.empty()) throw ValidationError("hypothesis with no members");
            if (!std::is_sorted(h.members.begin(), h.members.end())) std::sort(h.members.begin(), h.members.end());
            if (!ids.insert(h.id).second) throw ValidationError("duplicate hypothesis id " + std::to_string(h.id));
            out.push_back(std::move(h));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("hypothesis file: ") + e.what(), lineno);
        }
    }
    return out;
}

/// Ground-truth semantic parts: connected groups (by dilated contact) of equally labeled components.
struct PartTable {
    std::vector<std::vector<int>> parts;
    std::vector<int> label_of_part;
    std::vector<int> part_of_component;
};

inline PartTable ground_truth_parts(const GroupingContext& ctx) {
    const Assembly& a = ctx.assembly();
    if (!a.fully_labeled()) throw ValidationError("assembly lacks ground-truth labels");
    const int n = a.size();
    PartTable t;
    t.part_of_component.assign(static_cast<std::size_t>(n), -1);
    for (int s = 0; s < n; ++s) {
        if (t.part_of_component[static_cast<std::size_t>(s)] >= 0) continue;
        const int label = a.labels.at(s);
        const int pid = static_cast<int>(t.parts.size());
        std::vector<int> part{s}, stack{s};
        t.part_of_component[static_cast<std::size_t>(s)] = pid;
        while (!stack.empty()) {
            const int c = stack.back();
            stack.pop_back();
            for (int o = 0; o < n; ++o) {
                if (t.part_of_component[static_cast<std::size_t>(o)] >= 0 || a.labels.at(o) != label) continue;
                if (ctx.contact(c, o) == 0) continue;
                t.part_of_component[static_cast<std::size_t>(o)] = pid;
                part.push_back(o);
                stack.push_back(o);
            }
        }
        std::sort(part.begin(), part.end());
        t.parts.push_back(std::move(part));
        t.label_of_part.push_back(label);
    }
    return t;
}

struct HypothesisGroundTruth {
    int label = 0;  // 0 = null
    double confidence = 0.0;
};

inline constexpr double kPositiveFraction = 0.7;

/// Ground-truth label and confidence for hypotheses of one labeled assembly.
/// The label is the majority label if its members cover more than 70% of the
/// hypothesis's voxels; confidence is the best IoU against any ground-truth part.
class GroundTruthOracle {
public:
    GroundTruthOracle(const Assembly& a, const PartTable& parts, int resolution = kEvaluationResolution)
        : assembly_(&a), parts_(parts), index_(a, resolution),
          overlap_(index_, parts_.part_of_component, static_cast<int>(parts_.parts.size())) {
        if (!a.fully_labeled()) throw ValidationError("assembly lacks ground-truth labels");
    }

    GroundTruthOracle(const GroundTruthOracle&) = delete;
    GroundTruthOracle& operator=(const GroundTruthOracle&) = delete;

    const VoxelIndex& index() const { return index_; }
    const PartTable& parts() const { return parts_; }

    HypothesisGroundTruth assign(std::span<const int> members) const {
        HypothesisGroundTruth gt;
        const auto slots = index_.slots(members);
        if (slots.empty()) return gt;
        std::map<int, std::vector<int>> by_label;
        for (int m : members) by_label[assembly_->labels.at(m)].push_back(m);
        double best = -1;
        for (const auto& [label, comps] : by_label) {
            const double frac = static_cast<double>(index_.volume(comps)) / static_cast<double>(slots.size());
            if (frac > best) best = frac, gt.label = frac > kPositiveFraction ? label : 0;
        }
        const auto ious = overlap_.ious(slots);
        gt.confidence = ious.empty() ? 0.0 : *std::max_element(ious.begin(), ious.end());
        return gt;
    }

private:
    const Assembly* assembly_;
    PartTable parts_;
    VoxelIndex index_;
    GroupOverlap overlap_;
};

inline HypothesisGroundTruth assign_ground_truth(const PartHypothesis& h, const Assembly& a,
                                                 int resolution = kEvaluationResolution) {
    if (!a.fully_labeled()) throw ValidationError("assembly lacks ground-truth labels");
    GroupingContext ctx(a);
    GroundTruthOracle oracle(a, ground_truth_parts(ctx), resolution);
    return oracle.assign(h.members);
}

enum class AugmentMode { Delete, Insert };

inline constexpr double kAugmentFraction = 0.3;

/// Training-set augmentation of one ground-truth part: delete or insert up to
/// floor(0.3 * |part|) components. Inserted components come from parts in contact with it.
inline std::vector<int> augment(const GroupingContext& ctx, const PartTable& parts, std::span<const int> part,
                                AugmentMode mode, std::uint64_t seed) {
    if (part.empty()) throw ValidationError("augment: empty part");
    Rng rng(seed);
    std::vector<int> members(part.begin(), part.end());
    std::sort(members.begin(), members.end());
    const int kmax = static_cast<int>(std::floor(kAugmentFraction * static_cast<double>(members.size()) + 1e-12));

    if (mode == AugmentMode::Delete) {
        if (kmax == 0) return members;
        const int k = static_cast<int>(rng.uniform_int(1, kmax));
        shuffle(members, rng);
        members.erase(members.begin(), members.begin() + k);
        std::sort(members.begin(), members.end());
        return members;
    }

    std::set<int> own(members.begin(), members.end());
    std::set<int> adjacent_parts;
    for (int m : members)
        for (int o = 0; o < static_cast<int>(ctx.size()); ++o)
            if (!own.count(o) && ctx.contact(m, o) > 0) adjacent_parts.insert(parts.part_of_component.at(static_cast<std::size_t>(o)));
    std::vector<int> candidates;
    for (int p : adjacent_parts)
        for (int c : parts.parts.at(static_cast<std::size_t>(p)))
            if (!own.count(c)) candidates.push_back(c);
    if (candidates.empty()) throw ValidationError("augment: part has no adjacent parts to insert from");
    const int cap = std::min<int>(kmax, static_cast<int>(candidates.size()));
    if (cap == 0) return members;
    const int k = static_cast<int>(rng.uniform_int(1, cap));
    shuffle(candidates, rng);
    members.insert(members.end(), candidates.begin(), candidates.begin() + k);
    std::sort(members.begin(), members.end());
    return members;
}

} // namespace partlab
