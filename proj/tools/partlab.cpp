// partlab: command-line driver for component grouping and labeling.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "partlab/partlab.hpp"

namespace fs = std::filesystem;
using namespace partlab;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitTransport = 3;
constexpr int kExitInternal = 4;

/// Settings shared by several subcommands; filled from the config file, then flags.
struct Settings {
    RunConfig run;
    std::string top_k = "all";
};

// Config file: one `key = value` per line, '#' starts a comment.
void load_config(const fs::path& path, Settings& s) {
    std::istringstream in(io::read_file(path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
        const auto eq = line.find('=');
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (eq == std::string::npos) throw ParseError("config: expected key = value", lineno);
        const std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        try {
            if (key == "seed") s.run.seed = std::stoull(value);
            else if (key == "budget") s.run.budget = std::stoi(value);
            else if (key == "lambda") s.run.crf.lambda = std::stod(value);
            else if (key == "eta_fraction") s.run.crf.eta_fraction = std::stod(value);
            else if (key == "top_k") s.top_k = value;
            else if (key == "grouping_resolution") s.run.grouping_resolution = std::stoi(value);
            else if (key == "eval_resolution") s.run.eval_resolution = std::stoi(value);
            else if (key == "max_sweeps") s.run.max_sweeps = std::stoi(value);
            else throw ParseError("config: unknown key '" + key + "'", lineno);
        } catch (const std::logic_error&) {
            throw ParseError("config: bad value for '" + key + "'", lineno);
        }
    }
}

void finalize(Settings& s) {
    if (s.top_k == "all") s.run.crf.top_k.reset();
    else {
        try {
            s.run.crf.top_k = std::stoi(s.top_k);
        } catch (const std::logic_error&) {
            throw ConfigError("--topk must be an integer or 'all'");
        }
    }
    s.run.validate();
}

std::optional<fs::path> manifest_for(const fs::path& mesh, const std::string& explicit_path) {
    if (!explicit_path.empty()) return fs::path(explicit_path);
    auto side = sidecar_manifest(mesh);
    if (fs::exists(side)) return side;
    return std::nullopt;
}

Assembly load_labeled(const fs::path& mesh, const std::string& manifest) {
    auto m = manifest_for(mesh, manifest);
    if (!m) throw ValidationError("no label manifest for " + mesh.string() + " (expected " + sidecar_manifest(mesh).string() + ")");
    return load_assembly(mesh, m);
}

void write_text(const std::string& out, const std::string& text) {
    if (out.empty() || out == "-") std::cout << text;
    else io::atomic_write(out, text);
}

nlohmann::json read_json(const fs::path& p) {
    try {
        return nlohmann::json::parse(io::read_file(p));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(p.string() + ": " + e.what());
    }
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::logic_error&) {
            throw ConfigError("bad integer list '" + s + "'");
        }
    }
    return out;
}

/// Labeling file, read back for `eval`: label names per component name.
struct NamedLabeling {
    std::string mesh;
    std::map<std::string, std::string> by_component;
};

NamedLabeling read_named_labeling(const fs::path& p) {
    const auto j = read_json(p);
    NamedLabeling n;
    try {
        const auto labels = j.at("labels").get<std::vector<std::string>>();
        if (j.contains("assignment")) {
            n.mesh = j.value("mesh", "");
            const auto names = j.at("components").get<std::vector<std::string>>();
            const auto ids = j.at("assignment").get<std::vector<int>>();
            if (names.size() != ids.size()) throw ValidationError(p.string() + ": components/assignment length mismatch");
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (ids[i] < 1 || ids[i] > static_cast<int>(labels.size())) throw ValidationError(p.string() + ": label id out of range");
                n.by_component[names[i]] = labels[static_cast<std::size_t>(ids[i] - 1)];
            }
        } else {
            for (const auto& [comp, label] : j.at("components").items()) n.by_component[comp] = label.get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(p.string() + ": " + e.what());
    }
    return n;
}

ojson labeling_json(const Assembly& a, const fs::path& mesh, const LabelSet& names, const LabelOutcome& out) {
    ojson j;
    j["shape"] = a.id;
    j["mesh"] = mesh.string();
    j["category"] = names.category;
    j["labels"] = names.labels;
    std::vector<std::string> comps;
    for (const auto& c : a.components) comps.push_back(c.name);
    j["components"] = comps;
    j["assignment"] = out.assignment();
    j["energy"] = out.result.labeling.energy;
    j["sweeps"] = out.result.sweeps;
    j["uncovered"] = out.problem.uncovered;
    return j;
}

int run(int argc, char** argv) {
    CLI::App app{"Group and label the modeling components of 3D assemblies"};
    app.require_subcommand(1);
    Settings settings;
    std::string config_path;
    if (const char* env = std::getenv("PARTLAB_CONFIG")) config_path = env;
    // The config file must be read before flags are bound so that flags override it.
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
    if (!config_path.empty()) load_config(config_path, settings);
    app.add_option("--config", config_path, "key = value config file (default: $PARTLAB_CONFIG)");

    auto add_seed = [&](CLI::App* c) { c->add_option("--seed", settings.run.seed, "random seed")->capture_default_str(); };
    auto add_crf = [&](CLI::App* c) {
        c->add_option("--lambda", settings.run.crf.lambda, "consistency weight")->capture_default_str();
        c->add_option("--eta-frac", settings.run.crf.eta_fraction, "truncation as a fraction of clique size")->capture_default_str();
        c->add_option("--topk", settings.top_k, "hypotheses per component in the unary, or 'all'")->capture_default_str();
        c->add_option("--max-sweeps", settings.run.max_sweeps)->capture_default_str();
    };
    auto add_res = [&](CLI::App* c) {
        c->add_option("--grouping-resolution", settings.run.grouping_resolution)->capture_default_str();
        c->add_option("--eval-resolution", settings.run.eval_resolution)->capture_default_str();
    };

    // synth
    auto* synth = app.add_subcommand("synth", "generate a labeled synthetic dataset");
    GeneratorConfig gen;
    std::string family = "table", synth_out = ".";
    double test_fraction = 0.5;
    synth->add_option("--family", family)->capture_default_str();
    synth->add_option("--count", gen.count)->capture_default_str();
    synth->add_option("--min-pieces", gen.min_pieces)->capture_default_str();
    synth->add_option("--max-pieces", gen.max_pieces)->capture_default_str();
    synth->add_option("--test-fraction", test_fraction)->capture_default_str();
    synth->add_option("--out", synth_out, "output directory")->capture_default_str();
    add_seed(synth);

    // hypothesize
    auto* hyp = app.add_subcommand("hypothesize", "generate part hypotheses as JSON lines");
    std::string hyp_mesh, hyp_out;
    hyp->add_option("mesh", hyp_mesh)->required();
    hyp->add_option("--budget", settings.run.budget)->capture_default_str();
    hyp->add_option("--out", hyp_out, "output file (default stdout)");
    add_seed(hyp);
    add_res(hyp);

    // score
    auto* score = app.add_subcommand("score", "score hypotheses");
    std::string sc_mesh, sc_hyps, sc_backend = "builtin", sc_model, sc_cmd, sc_out, sc_manifest;
    int sc_k = 0;
    score->add_option("mesh", sc_mesh)->required();
    score->add_option("--hyps", sc_hyps)->required();
    score->add_option("--backend", sc_backend)->check(CLI::IsMember({"builtin", "external", "oracle"}))->capture_default_str();
    score->add_option("--model", sc_model, "builtin model file");
    score->add_option("--cmd", sc_cmd, "external command template with {volumes} {header} {out}");
    score->add_option("--num-labels", sc_k, "K for the external backend (default: from manifest)");
    score->add_option("--manifest", sc_manifest, "label manifest (default: sidecar)");
    score->add_option("--out", sc_out);
    add_seed(score);
    add_res(score);

    // label
    auto* label = app.add_subcommand("label", "infer component labels with the CRF");
    std::string lb_mesh, lb_hyps, lb_scores, lb_out, lb_obj, lb_manifest, lb_dump;
    label->add_option("mesh", lb_mesh)->required();
    label->add_option("--hyps", lb_hyps)->required();
    label->add_option("--scores", lb_scores)->required();
    label->add_option("--manifest", lb_manifest, "label names (default: sidecar if present)");
    label->add_option("--out", lb_out, "labeling JSON (default stdout)");
    label->add_option("--obj", lb_obj, "colored OBJ output");
    label->add_option("--dump-problem", lb_dump, "write the CRF instance as JSON");
    add_seed(label);
    add_crf(label);
    add_res(label);

    // eval
    auto* ev = app.add_subcommand("eval", "per-label IoU of a labeling against ground truth");
    std::string ev_pred, ev_gt, ev_mesh, ev_out;
    ev->add_option("pred", ev_pred)->required();
    ev->add_option("gt", ev_gt, "labeling JSON or label manifest")->required();
    ev->add_option("--mesh", ev_mesh, "mesh (default: from the prediction file)");
    ev->add_option("--out", ev_out);
    add_seed(ev);
    add_res(ev);

    // sweep
    auto* sw = app.add_subcommand("sweep", "recall and avg IoU versus hypothesis budget");
    std::string sw_dataset, sw_budgets = "10,100,1000", sw_out, sw_model, sw_family = "table";
    int sw_count = 5;
    sw->add_option("--dataset", sw_dataset, "dataset manifest (default: synthesize)");
    sw->add_option("--family", sw_family)->capture_default_str();
    sw->add_option("--count", sw_count)->capture_default_str();
    sw->add_option("--budgets", sw_budgets)->capture_default_str();
    sw->add_option("--model", sw_model, "builtin model (default: oracle scores)");
    sw->add_option("--out", sw_out);
    add_seed(sw);
    add_crf(sw);
    add_res(sw);

    // correspond
    auto* co = app.add_subcommand("correspond", "component correspondence between two labeled shapes");
    std::string co_a, co_b, co_la, co_lb, co_out;
    co->add_option("a", co_a)->required();
    co->add_option("b", co_b)->required();
    co->add_option("--labels-a", co_la);
    co->add_option("--labels-b", co_lb);
    co->add_option("--out", co_out);
    add_seed(co);

    // train-builtin
    auto* tr = app.add_subcommand("train-builtin", "train the feature-based scorer");
    std::string tr_dataset, tr_out;
    TrainConfig tcfg;
    int tr_augment = 2;
    tr->add_option("--dataset", tr_dataset)->required();
    tr->add_option("--out", tr_out)->required();
    tr->add_option("--budget", settings.run.budget)->capture_default_str();
    tr->add_option("--iterations", tcfg.iterations)->capture_default_str();
    tr->add_option("--augment", tr_augment, "augmented examples per part and mode")->capture_default_str();
    add_seed(tr);
    add_res(tr);

    // volumes
    auto* vo = app.add_subcommand("volumes", "export MCV1 scorer volumes (and ground truth) for hypotheses");
    std::string vo_mesh, vo_hyps, vo_out, vo_gt, vo_manifest;
    vo->add_option("mesh", vo_mesh)->required();
    vo->add_option("--hyps", vo_hyps)->required();
    vo->add_option("--out", vo_out)->required();
    vo->add_option("--gt", vo_gt, "ground-truth JSON lines output");
    vo->add_option("--manifest", vo_manifest);
    add_seed(vo);
    add_res(vo);

    // solve
    auto* so = app.add_subcommand("solve", "solve a dumped CRF instance");
    std::string so_problem, so_out;
    bool so_exhaustive = false;
    so->add_option("problem", so_problem)->required();
    so->add_flag("--exhaustive", so_exhaustive, "enumerate all labelings");
    so->add_option("--max-sweeps", settings.run.max_sweeps)->capture_default_str();
    so->add_option("--out", so_out);
    add_seed(so);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }
    finalize(settings);
    const RunConfig& cfg = settings.run;

    if (*synth) {
        gen.families = {family};
        if (!(test_fraction >= 0 && test_fraction <= 1)) throw ConfigError("--test-fraction must lie in [0,1]");
        const auto shapes = synthesize_dataset(gen, cfg.seed);
        fs::create_directories(synth_out);
        DatasetManifest d;
        d.label_set = family_labels(family);
        const int n_test = static_cast<int>(std::lround(test_fraction * static_cast<double>(shapes.size())));
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            const auto& a = shapes[i];
            const std::string mesh = a.id + ".obj";
            const std::string manifest = sidecar_manifest(mesh).string();
            io::atomic_write(fs::path(synth_out) / mesh, to_obj(a));
            io::atomic_write(fs::path(synth_out) / manifest, make_manifest(a).dump(2) + "\n");
            d.shapes.push_back({a.id, mesh, manifest});
            (static_cast<int>(i) < static_cast<int>(shapes.size()) - n_test ? d.train : d.test).push_back(a.id);
        }
        io::atomic_write(fs::path(synth_out) / "dataset.json", d.to_json().dump(2) + "\n");
        std::cout << shapes.size() << " shapes written to " << synth_out << "\n";
        return 0;
    }

    if (*hyp) {
        const auto a = load_assembly(hyp_mesh);
        GroupingContext ctx(a, cfg.grouping_resolution);
        const auto hyps = generate_hypotheses(ctx, cfg.budget, cfg.seed);
        write_text(hyp_out, hypotheses_to_jsonl(hyps));
        return 0;
    }

    if (*score) {
        const auto a = load_assembly(sc_mesh, manifest_for(sc_mesh, sc_manifest));
        const auto hyps = hypotheses_from_jsonl(io::read_file(sc_hyps));
        GroupingContext ctx(a, cfg.grouping_resolution);
        std::unique_ptr<Scorer> scorer;
        std::unique_ptr<GroundTruthOracle> oracle;
        if (sc_backend == "builtin") {
            if (sc_model.empty()) throw ConfigError("builtin backend requires --model");
            scorer = std::make_unique<BuiltinScorer>(BuiltinModel::from_json(read_json(sc_model)));
        } else if (sc_backend == "external") {
            const int K = sc_k > 0 ? sc_k : a.label_set ? a.label_set->size() : 0;
            if (K < 1) throw ConfigError("external backend needs --num-labels or a manifest");
            scorer = std::make_unique<ExternalScorer>(sc_cmd, K);
        } else {
            if (!a.fully_labeled()) throw ValidationError("oracle backend needs a complete label manifest");
            oracle = std::make_unique<GroundTruthOracle>(a, ground_truth_parts(ctx), cfg.eval_resolution);
            scorer = std::make_unique<OracleScorer>(*oracle, a.label_set->size());
        }
        write_text(sc_out, scores_to_jsonl(score_hypotheses(*scorer, ctx, hyps)));
        return 0;
    }

    if (*label) {
        const auto a = load_assembly(lb_mesh, manifest_for(lb_mesh, lb_manifest));
        const auto hyps = hypotheses_from_jsonl(io::read_file(lb_hyps));
        const auto scores = scores_from_jsonl(io::read_file(lb_scores));
        if (scores.empty()) throw ValidationError("score file is empty");
        const int K = static_cast<int>(scores.front().probs.size()) - 1;
        for (const auto& s : scores)
            if (static_cast<int>(s.probs.size()) != K + 1) throw ValidationError("score records disagree on K");
        LabelSet names;
        if (a.label_set) {
            if (a.label_set->size() != K) throw ValidationError("score K does not match the manifest label count");
            names = *a.label_set;
        } else {
            names.category = "unknown";
            for (int k = 1; k <= K; ++k) names.labels.push_back("label_" + std::to_string(k));
        }
        GroupingContext ctx(a, cfg.grouping_resolution);
        const auto outcome = label_components(ctx, hyps, scores, K, cfg);
        if (!lb_dump.empty()) io::atomic_write(lb_dump, problem_to_json(outcome.problem).dump() + "\n");
        if (!lb_obj.empty()) export_labeled_obj(a, outcome.label_map(), lb_obj);
        write_text(lb_out, labeling_json(a, lb_mesh, names, outcome).dump(2) + "\n");
        if (!outcome.problem.uncovered.empty())
            std::cerr << "warning: " << outcome.problem.uncovered.size() << " components covered by no hypothesis\n";
        return 0;
    }

    if (*ev) {
        const auto pred = read_named_labeling(ev_pred);
        const auto gt = read_named_labeling(ev_gt);
        const std::string mesh = !ev_mesh.empty() ? ev_mesh : pred.mesh;
        if (mesh.empty()) throw ValidationError("eval needs --mesh");
        const auto a = load_assembly(mesh);
        LabelSet names{"eval", {}};
        auto id_of = [&](const std::string& n) {
            if (auto id = names.find(n)) return *id;
            names.labels.push_back(n);
            return names.size();
        };
        LabelMap p, t;
        for (const auto& c : a.components) {
            auto ip = pred.by_component.find(c.name);
            auto it = gt.by_component.find(c.name);
            if (ip == pred.by_component.end()) throw ValidationError("prediction misses component '" + c.name + "'");
            if (it == gt.by_component.end()) throw ValidationError("ground truth misses component '" + c.name + "'");
            t[c.id] = id_of(it->second);
        }
        for (const auto& c : a.components) p[c.id] = id_of(pred.by_component.at(c.name));
        VoxelIndex index(a, cfg.eval_resolution);
        auto report = labeling_iou(index, p, t);
        report.shape_id = a.id;
        write_text(ev_out, to_json(report, &names).dump(2) + "\n");
        return 0;
    }

    if (*sw) {
        std::vector<Assembly> shapes;
        if (!sw_dataset.empty()) {
            const auto d = DatasetManifest::from_json(read_json(sw_dataset));
            shapes = d.load(fs::path(sw_dataset).parent_path(), d.test.empty() ? nullptr : &d.test);
        } else {
            GeneratorConfig g;
            g.families = {sw_family};
            g.count = sw_count;
            shapes = synthesize_dataset(g, cfg.seed);
        }
        std::optional<BuiltinModel> model;
        if (!sw_model.empty()) model = BuiltinModel::from_json(read_json(sw_model));
        const auto budgets = parse_int_list(sw_budgets);
        const auto rows = sweep_budget(shapes, budgets, cfg, model ? &*model : nullptr);
        write_text(sw_out, sweep_csv(rows));
        return 0;
    }

    if (*co) {
        const auto a = load_labeled(co_a, co_la);
        const auto b = load_labeled(co_b, co_lb);
        const auto t = align(a, b);
        write_text(co_out, to_json(match_components(a, b, t), t).dump(2) + "\n");
        return 0;
    }

    if (*tr) {
        const auto d = DatasetManifest::from_json(read_json(tr_dataset));
        const auto shapes = d.load(fs::path(tr_dataset).parent_path(), d.train.empty() ? nullptr : &d.train);
        std::vector<TrainExample> data;
        std::uint64_t aug_seed = cfg.seed;
        for (const auto& a : shapes) {
            if (a.label_set->labels != d.label_set.labels) throw ValidationError("shape '" + a.id + "' uses a different label list");
            GroupingContext ctx(a, cfg.grouping_resolution);
            const auto parts = ground_truth_parts(ctx);
            GroundTruthOracle oracle(a, parts, cfg.eval_resolution);
            auto add = [&](const std::vector<int>& members) {
                data.push_back({extract_features(ctx, members), oracle.assign(members)});
            };
            for (const auto& h : generate_hypotheses(ctx, cfg.budget, cfg.seed)) add(h.members);
            for (const auto& part : parts.parts) {
                add(part);
                for (int r = 0; r < tr_augment; ++r) {
                    add(augment(ctx, parts, part, AugmentMode::Delete, ++aug_seed));
                    try {
                        add(augment(ctx, parts, part, AugmentMode::Insert, ++aug_seed));
                    } catch (const ValidationError&) {
                        // isolated part: nothing to insert from
                    }
                }
            }
        }
        const auto model = train_builtin(data, d.label_set.size(), tcfg, cfg.seed);
        io::atomic_write(tr_out, model.to_json().dump() + "\n");
        std::cerr << "trained on " << data.size() << " examples\n";
        return 0;
    }

    if (*vo) {
        const auto a = load_assembly(vo_mesh, manifest_for(vo_mesh, vo_manifest));
        const auto hyps = hypotheses_from_jsonl(io::read_file(vo_hyps));
        std::vector<HypothesisVolumes> vols;
        for (const auto& h : hyps) {
            for (int m : h.members)
                if (m < 0 || m >= a.size()) throw ValidationError("hypothesis references missing component");
            vols.push_back(hypothesis_volumes(a, h.members));
        }
        std::string gt_text;
        if (!vo_gt.empty()) {
            if (!a.fully_labeled()) throw ValidationError("--gt needs a complete label manifest");
            GroupingContext ctx(a, cfg.grouping_resolution);
            GroundTruthOracle oracle(a, ground_truth_parts(ctx), cfg.eval_resolution);
            for (const auto& h : hyps) {
                const auto g = oracle.assign(h.members);
                ojson j;
                j["hyp_id"] = h.id;
                j["label"] = g.label;
                j["confidence"] = g.confidence;
                gt_text += j.dump() + "\n";
            }
        }
        io::atomic_write(vo_out, mcv1::encode(vols));
        if (!vo_gt.empty()) io::atomic_write(vo_gt, gt_text);
        return 0;
    }

    if (*so) {
        const auto p = problem_from_json(read_json(so_problem));
        ojson j;
        if (so_exhaustive) {
            const auto l = solve_exhaustive(p);
            j["assignment"] = l.assignment;
            j["energy"] = l.energy;
        } else {
            const auto r = solve(p, {cfg.max_sweeps});
            j["assignment"] = r.labeling.assignment;
            j["energy"] = r.labeling.energy;
            j["sweeps"] = r.sweeps;
            j["energy_trace"] = r.energy_trace;
        }
        write_text(so_out, j.dump(2) + "\n");
        return 0;
    }
    return kExitInternal;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const TransportError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitTransport;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}
