#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "partlab/error.hpp"
#include "partlab/geometry.hpp"
#include "partlab/io.hpp"

namespace partlab {

using Triangle = std::array<int, 3>;

/// One modeling component: an indexed triangle soup with its own vertex list.
struct Component {
    int id = 0;
    std::string name;
    std::vector<Vec3> vertices;
    std::vector<Triangle> triangles;

    Box bounds() const {
        Box b;
        for (const auto& v : vertices) b.extend(v);
        return b;
    }
};

/// Ordered label names for one category. Label ids are 1-based; 0 is the null label.
struct LabelSet {
    std::string category;
    std::vector<std::string> labels;

    int size() const { return static_cast<int>(labels.size()); }
    std::string name(int id) const { return id >= 1 && id <= size() ? labels[id - 1] : "null"; }
    std::optional<int> find(const std::string& label) const {
        for (int i = 0; i < size(); ++i)
            if (labels[i] == label) return i + 1;
        return std::nullopt;
    }
    void validate() const {
        if (labels.empty()) throw ValidationError("label set must contain at least one label");
        std::set<std::string> seen(labels.begin(), labels.end());
        if (seen.size() != labels.size()) throw ValidationError("label names must be unique");
    }
};

/// p_unit = scale * p_model + translation.
struct Normalization {
    Vec3 translation = Vec3::Zero();
    double scale = 1.0;

    Vec3 to_unit(const Vec3& p) const { return scale * p + translation; }
    Vec3 to_model(const Vec3& p) const { return (p - translation) / scale; }
};

/// Component-id to label-id map; absent ids are unlabeled.
using LabelMap = std::map<int, int>;

struct Assembly {
    std::string id;
    std::vector<Component> components;
    Normalization normalization;
    std::optional<LabelSet> label_set;
    LabelMap labels;

    int size() const { return static_cast<int>(components.size()); }

    bool fully_labeled() const {
        if (!label_set) return false;
        for (const auto& c : components)
            if (!labels.count(c.id)) return false;
        return true;
    }

    Box bounds() const {
        Box b;
        for (const auto& c : components) b.extend(c.bounds());
        return b;
    }

    std::vector<int> component_ids() const {
        std::vector<int> ids;
        ids.reserve(components.size());
        for (const auto& c : components) ids.push_back(c.id);
        return ids;
    }
};

/// Centers the joint bounding box at (0.5,0.5,0.5) and scales uniformly so the
/// longest side is 1. Returns the transform applied by this call; the assembly's
/// stored normalization is the composition with any earlier one.
inline Normalization normalize(Assembly& a) {
    const Box b = a.bounds();
    if (b.empty()) throw ValidationError("assembly has no vertices");
    const double longest = b.extent().maxCoeff();
    Normalization step;
    step.scale = longest > 0 ? 1.0 / longest : 1.0;
    step.translation = Vec3::Constant(0.5) - step.scale * b.center();
    for (auto& c : a.components)
        for (auto& v : c.vertices) v = step.to_unit(v);
    a.normalization.scale *= step.scale;
    a.normalization.translation = step.scale * a.normalization.translation + step.translation;
    return step;
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace detail

/// Parses a Wavefront OBJ stream. Each `g`/`o` name opens (or re-opens) a component;
/// with multiple names on one `g` line the last (innermost) one is used. Faces are
/// fan-triangulated. Vertices are returned in model units; call normalize() afterwards.
inline Assembly parse_obj(std::istream& in, std::string id = "shape") {
    Assembly a;
    a.id = std::move(id);
    std::vector<Vec3> global;
    struct Pending {
        std::string name;
        std::vector<std::array<int, 3>> faces;  // global 0-based indices
    };
    std::vector<Pending> groups;
    std::map<std::string, std::size_t> by_name;
    std::size_t current = std::string::npos;

    auto open_group = [&](const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            it = by_name.emplace(name, groups.size()).first;
            groups.push_back({name, {}});
        }
        current = it->second;
    };

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            double x, y, z;
            if (!(ls >> x >> y >> z)) throw ParseError("malformed vertex", lineno);
            global.emplace_back(x, y, z);
        } else if (tag == "g" || tag == "o") {
            std::string name, last;
            while (ls >> name) last = name;
            open_group(last.empty() ? "default" : last);
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ls >> tok) {
                const auto slash = tok.find('/');
                const std::string head = tok.substr(0, slash);
                long v = 0;
                try {
                    std::size_t used = 0;
                    v = std::stol(head, &used);
                    if (used != head.size()) throw std::invalid_argument(head);
                } catch (const std::exception&) {
                    throw ParseError("malformed face index '" + tok + "'", lineno);
                }
                const long n = static_cast<long>(global.size());
                const long resolved = v > 0 ? v - 1 : n + v;
                if (v == 0 || resolved < 0 || resolved >= n)
                    throw ParseError("face references vertex " + std::to_string(v) + " of " + std::to_string(n), lineno);
                idx.push_back(static_cast<int>(resolved));
            }
            if (idx.size() < 3) throw ParseError("face with fewer than 3 vertices", lineno);
            if (current == std::string::npos) open_group("default");
            for (std::size_t k = 1; k + 1 < idx.size(); ++k)
                groups[current].faces.push_back({idx[0], idx[k], idx[k + 1]});
        }
        // vt, vn, usemtl, mtllib, s, l, p: ignored.
    }

    for (const auto& g : groups) {
        if (g.faces.empty()) continue;
        Component c;
        c.id = static_cast<int>(a.components.size());
        c.name = g.name;
        std::map<int, int> remap;
        for (const auto& f : g.faces) {
            Triangle t;
            for (int k = 0; k < 3; ++k) {
                auto [it, fresh] = remap.emplace(f[k], static_cast<int>(c.vertices.size()));
                if (fresh) c.vertices.push_back(global[static_cast<std::size_t>(f[k])]);
                t[k] = it->second;
            }
            c.triangles.push_back(t);
        }
        a.components.push_back(std::move(c));
    }
    if (a.components.empty()) throw ParseError("OBJ contains no faces");
    return a;
}

/// Attaches labels from a manifest `{"category", "labels", "components": {group: label}}`.
inline void apply_manifest(Assembly& a, const nlohmann::json& m) {
    LabelSet ls;
    try {
        ls.category = m.at("category").get<std::string>();
        ls.labels = m.at("labels").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("manifest: ") + e.what());
    }
    ls.validate();
    std::map<std::string, int> by_name;
    for (const auto& c : a.components) by_name[c.name] = c.id;
    LabelMap labels;
    if (!m.contains("components") || !m["components"].is_object()) throw ParseError("manifest: missing components object");
    for (const auto& [group, label] : m["components"].items()) {
        auto it = by_name.find(group);
        if (it == by_name.end()) throw ValidationError("manifest names missing group '" + group + "'");
        if (!label.is_string()) throw ParseError("manifest: label for '" + group + "' is not a string");
        auto id = ls.find(label.get<std::string>());
        if (!id) throw ValidationError("manifest label '" + label.get<std::string>() + "' not in label list");
        labels[it->second] = *id;
    }
    a.label_set = std::move(ls);
    a.labels = std::move(labels);
}

inline nlohmann::json make_manifest(const Assembly& a) {
    if (!a.label_set) throw ValidationError("assembly has no label set");
    nlohmann::json comps = nlohmann::json::object();
    for (const auto& c : a.components) {
        auto it = a.labels.find(c.id);
        if (it != a.labels.end()) comps[c.name] = a.label_set->name(it->second);
    }
    return {{"category", a.label_set->category}, {"labels", a.label_set->labels}, {"components", comps}};
}

/// `<stem>.labels.json` next to a mesh.
inline std::filesystem::path sidecar_manifest(const std::filesystem::path& mesh) {
    auto p = mesh;
    p.replace_extension(".labels.json");
    return p;
}

/// Loads and normalizes an OBJ; attaches labels when a manifest path is given.
inline Assembly load_assembly(const std::filesystem::path& mesh,
                              const std::optional<std::filesystem::path>& manifest = std::nullopt) {
    if (!std::filesystem::exists(mesh)) throw ValidationError("mesh not found: " + mesh.string());
    std::istringstream in(io::read_file(mesh));
    Assembly a = parse_obj(in, mesh.stem().string());
    normalize(a);
    if (manifest) {
        nlohmann::json m;
        try {
            m = nlohmann::json::parse(io::read_file(*manifest));
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError("manifest " + manifest->string() + ": " + e.what());
        }
        apply_manifest(a, m);
    }
    return a;
}

/// Serializes components as OBJ groups in model units.
inline std::string to_obj(const Assembly& a, const LabelMap* labels = nullptr, const std::string& mtllib = {}) {
    std::string out;
    char buf[128];
    if (!mtllib.empty()) out += "mtllib " + mtllib + "\n";
    int base = 1;
    for (const auto& c : a.components) {
        out += "g " + c.name + "\n";
        if (labels) out += "usemtl label_" + std::to_string(labels->at(c.id)) + "\n";
        for (const auto& v : c.vertices) {
            const Vec3 m = a.normalization.to_model(v);
            std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", m.x(), m.y(), m.z());
            out += buf;
        }
        for (const auto& t : c.triangles) {
            std::snprintf(buf, sizeof buf, "f %d %d %d\n", t[0] + base, t[1] + base, t[2] + base);
            out += buf;
        }
        base += static_cast<int>(c.vertices.size());
    }
    return out;
}

/// Deterministic, well-separated color per label id (golden-angle hue walk).
inline Vec3 label_color(int label) {
    const double h = std::fmod(0.61803398874989485 * label, 1.0) * 6.0;
    const double s = 0.65, v = 0.95;
    const int i = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
    }
}

/// Writes `out` plus a sibling `.mtl`; components sharing a label share material `label_<id>`.
inline void export_labeled_obj(const Assembly& a, const LabelMap& labeling, const std::filesystem::path& out) {
    std::vector<int> missing;
    for (const auto& c : a.components)
        if (!labeling.count(c.id)) missing.push_back(c.id);
    if (!missing.empty()) {
        std::string ids;
        for (std::size_t i = 0; i < missing.size(); ++i) ids += (i ? ", " : "") + std::to_string(missing[i]);
        throw ValidationError("unlabeled: [" + ids + "]");
    }
    auto mtl = out;
    mtl.replace_extension(".mtl");
    std::set<int> used;
    for (const auto& [c, l] : labeling) used.insert(l);
    std::string m;
    char buf[160];
    for (int l : used) {
        const Vec3 col = label_color(l);
        std::snprintf(buf, sizeof buf, "newmtl label_%d\nKd %.6f %.6f %.6f\n\n", l, col.x(), col.y(), col.z());
        m += buf;
    }
    io::atomic_write(mtl, m);
    io::atomic_write(out, to_obj(a, &labeling, mtl.filename().string()));
}

/// Dataset manifest: shapes with mesh/manifest paths and a train/test split.
struct DatasetEntry {
    std::string id;
    std::string mesh;
    std::string manifest;
};

struct DatasetManifest {
    LabelSet label_set;
    std::vector<DatasetEntry> shapes;
    std::vector<std::string> train;
    std::vector<std::string> test;

    nlohmann::json to_json() const {
        nlohmann::json shapes_j = nlohmann::json::array();
        for (const auto& s : shapes) shapes_j.push_back({{"id", s.id}, {"mesh", s.mesh}, {"manifest", s.manifest}});
        return {{"category", label_set.category},
                {"labels", label_set.labels},
                {"shapes", shapes_j},
                {"split", {{"train", train}, {"test", test}}}};
    }

    static DatasetManifest from_json(const nlohmann::json& j) {
        DatasetManifest d;
        try {
            d.label_set.category = j.at("category").get<std::string>();
            d.label_set.labels = j.at("labels").get<std::vector<std::string>>();
            for (const auto& s : j.at("shapes"))
                d.shapes.push_back({s.at("id").get<std::string>(), s.at("mesh").get<std::string>(),
                                    s.at("manifest").get<std::string>()});
            if (j.contains("split")) {
                d.train = j["split"].value("train", std::vector<std::string>{});
                d.test = j["split"].value("test", std::vector<std::string>{});
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("dataset manifest: ") + e.what());
        }
        std::set<std::string> ids;
        for (const auto& s : d.shapes) ids.insert(s.id);
        for (const auto* split : {&d.train, &d.test})
            for (const auto& id : *split)
                if (!ids.count(id)) throw ValidationError("split references unknown shape '" + id + "'");
        return d;
    }

    /// Loads every listed shape, resolving relative paths against `base`.
    std::vector<Assembly> load(const std::filesystem::path& base, const std::vector<std::string>* only = nullptr) const {
        std::vector<Assembly> out;
        for (const auto& s : shapes) {
            if (only && std::find(only->begin(), only->end(), s.id) == only->end()) continue;
            auto a = load_assembly(base / s.mesh, base / s.manifest);
            a.id = s.id;
            out.push_back(std::move(a));
        }
        return out;
    }
};

} // namespace partlab
