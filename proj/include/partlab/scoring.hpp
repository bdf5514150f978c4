#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "partlab/assembly.hpp"
#include "partlab/error.hpp"
#include "partlab/hypothesis.hpp"
#include "partlab/io.hpp"
#include "partlab/rng.hpp"
#include "partlab/voxel.hpp"

namespace partlab {

/// Scorer output for one hypothesis: probabilities over K+1 labels (index 0 = null) and a confidence.
struct ScoreRecord {
    int hypothesis_id = 0;
    std::vector<double> probs;
    double confidence = 0.0;
};

inline constexpr double kProbSumTolerance = 1e-3;

/// Enforces the record invariants in place: probabilities within 1e-3 of summing
/// to one are renormalized, anything further off is rejected; confidence is clamped.
inline void validate_record(ScoreRecord& r, int K) {
    const auto id = std::to_string(r.hypothesis_id);
    if (static_cast<int>(r.probs.size()) != K + 1)
        throw ValidationError("score for hypothesis " + id + ": expected " + std::to_string(K + 1) + " probabilities, got " +
                              std::to_string(r.probs.size()));
    double sum = 0;
    for (double& p : r.probs) {
        if (!std::isfinite(p) || p < -1e-9 || p > 1 + 1e-9)
            throw ValidationError("score for hypothesis " + id + ": probability out of [0,1]");
        p = std::clamp(p, 0.0, 1.0);
        sum += p;
    }
    if (std::abs(sum - 1.0) > kProbSumTolerance)
        throw ValidationError("score for hypothesis " + id + ": probabilities sum to " + std::to_string(sum));
    for (double& p : r.probs) p /= sum;
    if (!std::isfinite(r.confidence)) throw ValidationError("score for hypothesis " + id + ": non-finite confidence");
    r.confidence = std::clamp(r.confidence, 0.0, 1.0);
}

// JSON lines: {"hyp_id", "probs", "confidence"}.
inline std::string scores_to_jsonl(std::span<const ScoreRecord> records) {
    std::string out;
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["hyp_id"] = r.hypothesis_id;
        j["probs"] = r.probs;
        j["confidence"] = r.confidence;
        out += j.dump() + "\n";
    }
    return out;
}

inline std::vector<ScoreRecord> scores_from_jsonl(const std::string& text) {
    std::vector<ScoreRecord> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("hyp_id").get<int>(), j.at("probs").get<std::vector<double>>(),
                           j.at("confidence").get<double>()});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("score file: ") + e.what(), lineno);
        }
    }
    return out;
}

inline constexpr int kCoarseCells = 6;

struct FeatureVector {
    double volume_ratio = 0;
    double bbox_diameter = 0;
    Vec3 centroid = Vec3::Zero();
    Vec3 pca_extents = Vec3::Zero();  // descending
    std::vector<double> coarse_occupancy;  // 6^3 local-grid fill fractions

    std::vector<double> flatten() const {
        std::vector<double> v{volume_ratio, bbox_diameter, centroid.x(), centroid.y(), centroid.z(),
                              pca_extents.x(), pca_extents.y(), pca_extents.z()};
        v.insert(v.end(), coarse_occupancy.begin(), coarse_occupancy.end());
        return v;
    }
    static constexpr std::size_t dimension() { return 8 + kCoarseCells * kCoarseCells * kCoarseCells; }
};

inline FeatureVector extract_features(const GroupingContext& ctx, std::span<const int> members) {
    if (members.empty()) throw ValidationError("extract_features: empty hypothesis");
    const Assembly& a = ctx.assembly();
    const VoxelGrid g = ctx.grid(members);
    const std::size_t vol = g.count();
    if (vol == 0) throw ValidationError("extract_features: zero-volume hypothesis");

    FeatureVector f;
    f.volume_ratio = static_cast<double>(vol) / static_cast<double>(ctx.shape_volume());

    Box bb;
    for (int m : members) bb.extend(a.components.at(static_cast<std::size_t>(m)).bounds());
    f.bbox_diameter = bb.diameter();

    const int r = g.resolution();
    Vec3 sum = Vec3::Zero();
    for (auto i : g.indices()) {
        const int x = static_cast<int>(i % static_cast<std::uint32_t>(r));
        const int y = static_cast<int>((i / static_cast<std::uint32_t>(r)) % static_cast<std::uint32_t>(r));
        const int z = static_cast<int>(i / static_cast<std::uint32_t>(r * r));
        sum += Vec3(x + 0.5, y + 0.5, z + 0.5) / r;
    }
    f.centroid = sum / static_cast<double>(vol);

    const auto pts = detail::distinct_points(gather_vertices(a, members));
    const Vec3 mu = detail::mean(pts);
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : pts) cov += (p - mu) * (p - mu).transpose();
    cov /= static_cast<double>(pts.size());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    const Vec3 ev = es.eigenvalues().cwiseMax(0.0);
    f.pca_extents = Vec3(2 * std::sqrt(ev[2]), 2 * std::sqrt(ev[1]), 2 * std::sqrt(ev[0]));

    std::vector<const Component*> ptrs;
    for (int m : members) ptrs.push_back(&a.components[static_cast<std::size_t>(m)]);
    Box cube = bb.cubified();
    if (!(cube.extent().maxCoeff() > 0)) throw ValidationError("extract_features: zero-extent hypothesis");
    const VoxelGrid local = voxelize(ptrs, cube, kScorerResolution);
    constexpr int block = kScorerResolution / kCoarseCells;
    f.coarse_occupancy.assign(kCoarseCells * kCoarseCells * kCoarseCells, 0.0);
    for (int z = 0; z < kScorerResolution; ++z)
        for (int y = 0; y < kScorerResolution; ++y)
            for (int x = 0; x < kScorerResolution; ++x)
                if (local.test(x, y, z))
                    f.coarse_occupancy[static_cast<std::size_t>(x / block + kCoarseCells * (y / block + kCoarseCells * (z / block)))] += 1.0;
    for (auto& c : f.coarse_occupancy) c /= block * block * block;
    return f;
}

struct TrainExample {
    FeatureVector features;
    HypothesisGroundTruth truth;
};

struct TrainConfig {
    int iterations = 400;
    double learning_rate = 0.5;
    double l2 = 1e-4;
};

/// Multinomial logistic regression over K+1 labels plus a linear confidence
/// regressor, both on standardized features.
class BuiltinModel {
public:
    int K = 0;
    std::vector<double> mean, scale;
    Eigen::MatrixXd weights;     // (K+1) x (D+1), last column is the bias
    Eigen::VectorXd regression;  // D+1

    Eigen::VectorXd standardize(const FeatureVector& f) const {
        const auto raw = f.flatten();
        Eigen::VectorXd x(static_cast<Eigen::Index>(raw.size() + 1));
        for (std::size_t i = 0; i < raw.size(); ++i) x[static_cast<Eigen::Index>(i)] = (raw[i] - mean[i]) / scale[i];
        x[static_cast<Eigen::Index>(raw.size())] = 1.0;
        return x;
    }

    ScoreRecord predict(const FeatureVector& f, int hypothesis_id = 0) const {
        const Eigen::VectorXd x = standardize(f);
        Eigen::VectorXd z = weights * x;
        z.array() -= z.maxCoeff();
        Eigen::VectorXd e = z.array().exp();
        e /= e.sum();
        ScoreRecord r;
        r.hypothesis_id = hypothesis_id;
        r.probs.assign(e.data(), e.data() + e.size());
        r.confidence = std::clamp(regression.dot(x), 0.0, 1.0);
        return r;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["format"] = "partlab-builtin-v1";
        j["K"] = K;
        j["mean"] = mean;
        j["scale"] = scale;
        std::vector<std::vector<double>> w;
        for (Eigen::Index i = 0; i < weights.rows(); ++i) {
            std::vector<double> row(static_cast<std::size_t>(weights.cols()));
            for (Eigen::Index c = 0; c < weights.cols(); ++c) row[static_cast<std::size_t>(c)] = weights(i, c);
            w.push_back(std::move(row));
        }
        j["weights"] = w;
        j["regression"] = std::vector<double>(regression.data(), regression.data() + regression.size());
        return j;
    }

    static BuiltinModel from_json(const nlohmann::json& j) {
        BuiltinModel m;
        try {
            if (j.at("format").get<std::string>() != "partlab-builtin-v1") throw ParseError("unknown model format");
            m.K = j.at("K").get<int>();
            m.mean = j.at("mean").get<std::vector<double>>();
            m.scale = j.at("scale").get<std::vector<double>>();
            const auto w = j.at("weights").get<std::vector<std::vector<double>>>();
            const auto reg = j.at("regression").get<std::vector<double>>();
            const auto d = m.mean.size() + 1;
            if (m.scale.size() != m.mean.size() || w.size() != static_cast<std::size_t>(m.K + 1) || reg.size() != d)
                throw ParseError("model dimensions inconsistent");
            m.weights.resize(static_cast<Eigen::Index>(w.size()), static_cast<Eigen::Index>(d));
            for (std::size_t i = 0; i < w.size(); ++i) {
                if (w[i].size() != d) throw ParseError("model dimensions inconsistent");
                for (std::size_t c = 0; c < d; ++c) m.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = w[i][c];
            }
            m.regression = Eigen::Map<const Eigen::VectorXd>(reg.data(), static_cast<Eigen::Index>(reg.size()));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("model file: ") + e.what());
        }
        return m;
    }
};

inline constexpr double kRidge = 1e-2;

/// Full-batch gradient descent for the classifier, closed-form ridge for the
/// confidence regressor; the seed drives only the weight initialization.
inline BuiltinModel train_builtin(std::span<const TrainExample> data, int K, const TrainConfig& cfg, std::uint64_t seed) {
    if (data.empty()) throw ValidationError("train_builtin: empty dataset");
    std::set<int> classes;
    for (const auto& e : data) {
        if (e.truth.label < 0 || e.truth.label > K) throw ValidationError("train_builtin: label out of range");
        classes.insert(e.truth.label);
    }
    if (classes.size() < 2) throw ValidationError("train_builtin: classifier needs at least two classes");

    const std::size_t n = data.size();
    const std::size_t d = FeatureVector::dimension();
    BuiltinModel m;
    m.K = K;
    m.mean.assign(d, 0.0);
    m.scale.assign(d, 0.0);
    std::vector<std::vector<double>> raw;
    for (const auto& e : data) raw.push_back(e.features.flatten());
    for (const auto& r : raw)
        for (std::size_t i = 0; i < d; ++i) m.mean[i] += r[i] / static_cast<double>(n);
    for (const auto& r : raw)
        for (std::size_t i = 0; i < d; ++i) m.scale[i] += (r[i] - m.mean[i]) * (r[i] - m.mean[i]) / static_cast<double>(n);
    for (auto& s : m.scale) s = s > 1e-12 ? std::sqrt(s) : 1.0;

    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d + 1));
    Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), K + 1);
    Eigen::VectorXd conf(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        X.row(static_cast<Eigen::Index>(i)) = m.standardize(data[i].features).transpose();
        Y(static_cast<Eigen::Index>(i), data[i].truth.label) = 1.0;
        conf[static_cast<Eigen::Index>(i)] = data[i].truth.confidence;
    }

    Rng rng(seed);
    m.weights.resize(K + 1, static_cast<Eigen::Index>(d + 1));
    for (Eigen::Index i = 0; i < m.weights.size(); ++i) m.weights.data()[i] = rng.uniform_real(-0.01, 0.01);

    const double inv_n = 1.0 / static_cast<double>(n);
    {
        // Ridge solution; gradient descent on correlated occupancy features diverges.
        Eigen::MatrixXd A = X.transpose() * X * inv_n;
        A.diagonal().array() += kRidge;
        m.regression = A.ldlt().solve(X.transpose() * conf * inv_n);
    }
    for (int it = 0; it < cfg.iterations; ++it) {
        Eigen::MatrixXd Z = X * m.weights.transpose();
        for (Eigen::Index i = 0; i < Z.rows(); ++i) {
            Z.row(i).array() -= Z.row(i).maxCoeff();
            Z.row(i) = Z.row(i).array().exp().matrix();
            Z.row(i) /= Z.row(i).sum();
        }
        const Eigen::MatrixXd grad = (Z - Y).transpose() * X * inv_n + cfg.l2 * m.weights;
        m.weights -= cfg.learning_rate * grad;
    }
    return m;
}

/// Interface for hypothesis scorers. Implementations return one record per
/// hypothesis in input order; score_hypotheses() validates them.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual int num_labels() const = 0;
    virtual std::vector<ScoreRecord> raw_scores(const GroupingContext& ctx, std::span<const PartHypothesis> hyps) = 0;
};

inline std::vector<ScoreRecord> score_hypotheses(Scorer& scorer, const GroupingContext& ctx,
                                                 std::span<const PartHypothesis> hyps) {
    auto records = scorer.raw_scores(ctx, hyps);
    if (records.size() != hyps.size()) throw ValidationError("scorer returned a wrong number of records");
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].hypothesis_id != hyps[i].id) throw ValidationError("scorer changed the hypothesis order");
        validate_record(records[i], scorer.num_labels());
    }
    return records;
}

/// Scores from ground truth: one-hot at the ground-truth label, confidence = best IoU.
class OracleScorer : public Scorer {
public:
    OracleScorer(const GroundTruthOracle& oracle, int K) : oracle_(&oracle), K_(K) {}
    int num_labels() const override { return K_; }
    std::vector<ScoreRecord> raw_scores(const GroupingContext&, std::span<const PartHypothesis> hyps) override {
        std::vector<ScoreRecord> out;
        for (const auto& h : hyps) {
            const auto gt = oracle_->assign(h.members);
            ScoreRecord r{h.id, std::vector<double>(static_cast<std::size_t>(K_ + 1), 0.0), gt.confidence};
            r.probs[static_cast<std::size_t>(gt.label)] = 1.0;
            out.push_back(std::move(r));
        }
        return out;
    }

private:
    const GroundTruthOracle* oracle_;
    int K_;
};

class BuiltinScorer : public Scorer {
public:
    explicit BuiltinScorer(BuiltinModel model) : model_(std::move(model)) {}
    int num_labels() const override { return model_.K; }
    std::vector<ScoreRecord> raw_scores(const GroupingContext& ctx, std::span<const PartHypothesis> hyps) override {
        std::vector<ScoreRecord> out;
        for (const auto& h : hyps) out.push_back(model_.predict(extract_features(ctx, h.members), h.id));
        return out;
    }

private:
    BuiltinModel model_;
};

/// Runs an external command over an MCV1 batch. The template's `{volumes}`,
/// `{header}` and `{out}` placeholders are replaced with file paths; the
/// command must write score JSON lines to `{out}`.
class ExternalScorer : public Scorer {
public:
    ExternalScorer(std::string command_template, int K) : template_(std::move(command_template)), K_(K) {
        if (template_.empty()) throw ConfigError("external scorer requires a command template");
    }
    int num_labels() const override { return K_; }

    std::vector<ScoreRecord> raw_scores(const GroupingContext& ctx, std::span<const PartHypothesis> hyps) override {
        static std::atomic<int> counter{0};
        const auto dir = std::filesystem::temp_directory_path() /
                         ("partlab-scorer-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(dir);
        struct Cleanup {
            std::filesystem::path p;
            ~Cleanup() {
                std::error_code ec;
                std::filesystem::remove_all(p, ec);
            }
        } cleanup{dir};

        std::vector<HypothesisVolumes> vols;
        std::vector<int> ids;
        for (const auto& h : hyps) {
            vols.push_back(hypothesis_volumes(ctx.assembly(), h.members));
            ids.push_back(h.id);
        }
        const auto volumes = dir / "volumes.mcv", header = dir / "header.json", out = dir / "scores.jsonl";
        io::atomic_write(volumes, mcv1::encode(vols));
        nlohmann::ordered_json hj;
        hj["K"] = K_;
        hj["hyp_ids"] = ids;
        io::atomic_write(header, hj.dump());

        std::string cmd = template_;
        auto replace = [&](const std::string& key, const std::string& value) {
            for (auto pos = cmd.find(key); pos != std::string::npos; pos = cmd.find(key, pos + value.size()))
                cmd.replace(pos, key.size(), value);
        };
        replace("{volumes}", volumes.string());
        replace("{header}", header.string());
        replace("{out}", out.string());
        const int rc = std::system(cmd.c_str());
        if (rc != 0) throw TransportError("external scorer exited with status " + std::to_string(rc));
        if (!std::filesystem::exists(out)) throw TransportError("external scorer wrote no score file");

        std::vector<ScoreRecord> parsed;
        try {
            parsed = scores_from_jsonl(io::read_file(out));
        } catch (const ParseError& e) {
            throw TransportError(std::string("malformed score file: ") + e.what());
        }
        std::map<int, ScoreRecord> by_id;
        for (auto& r : parsed) by_id[r.hypothesis_id] = std::move(r);
        std::vector<ScoreRecord> result;
        for (int id : ids) {
            auto it = by_id.find(id);
            if (it == by_id.end()) throw TransportError("score file lacks hypothesis " + std::to_string(id));
            result.push_back(std::move(it->second));
        }
        return result;
    }

private:
    std::string template_;
    int K_;
};

} // namespace partlab
