#pragma once

// Detection metrics, detector adapters, benchmark orchestration, the
// synthetic pipeline and ablation sweeps, plus CSV/JSON report writers.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spod/baselines.hpp"
#include "spod/data.hpp"
#include "spod/errors.hpp"
#include "spod/gradpca.hpp"
#include "spod/nn.hpp"
#include "spod/parallel.hpp"
#include "spod/train.hpp"

namespace spod {

// ---------------------------------------------------------------------------
// Metrics.

struct ScoredSet {
    std::vector<double> id_scores;
    std::vector<double> ood_scores;
    bool higher_is_id = true;

    void validate() const {
        if (id_scores.empty() || ood_scores.empty()) {
            throw MetricError("metric undefined: ID and OOD score lists must both be nonempty");
        }
        for (const auto* side : {&id_scores, &ood_scores}) {
            for (double v : *side) {
                if (!std::isfinite(v)) throw MetricError("metric undefined: non-finite score");
            }
        }
    }

    /// Scores oriented so that larger means more in-distribution.
    std::pair<std::vector<double>, std::vector<double>> oriented() const {
        if (higher_is_id) return {id_scores, ood_scores};
        std::pair<std::vector<double>, std::vector<double>> out{id_scores, ood_scores};
        for (double& v : out.first) v = -v;
        for (double& v : out.second) v = -v;
        return out;
    }
};

/// P(s_id > s_ood) + P(s_id = s_ood) / 2.
inline double auroc(const ScoredSet& s) {
    s.validate();
    auto [id, ood] = s.oriented();
    std::sort(ood.begin(), ood.end());
    // Twice the win count, kept integral so the result is exact.
    std::uint64_t twice_wins = 0;
    for (double v : id) {
        const auto lo = std::lower_bound(ood.begin(), ood.end(), v);
        const auto hi = std::upper_bound(lo, ood.end(), v);
        twice_wins += 2 * static_cast<std::uint64_t>(lo - ood.begin()) + static_cast<std::uint64_t>(hi - lo);
    }
    return static_cast<double>(twice_wins) /
           (2.0 * static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

/// Number of ID samples that must score >= the threshold: ceil(tpr * n),
/// with a small slack so that e.g. 0.95 * 20 counts as 19.
inline std::size_t required_id_count(double tpr, std::size_t n) {
    const double want = tpr * static_cast<double>(n);
    const auto k = static_cast<std::size_t>(std::ceil(want - 1e-9 * std::max(1.0, want)));
    return std::clamp<std::size_t>(k, 1, n);
}

/// FPR at the largest threshold t with frac(ID >= t) >= tpr; OOD scores
/// >= t count as false positives (inclusive on the ID side).
inline double fpr_at_tpr(const ScoredSet& s, double tpr = 0.95) {
    if (!(tpr > 0.0 && tpr <= 1.0)) throw MetricError("tpr must lie in (0, 1]");
    s.validate();
    auto [id, ood] = s.oriented();
    std::sort(id.begin(), id.end(), std::greater<>());
    const double t = id[required_id_count(tpr, id.size()) - 1];
    const auto fp = std::count_if(ood.begin(), ood.end(), [t](double v) { return v >= t; });
    return static_cast<double>(fp) / static_cast<double>(ood.size());
}

// ---------------------------------------------------------------------------
// Detectors.

/// A fitted detector: per-sample score, larger = more in-distribution.
struct Detector {
    std::string name;
    std::function<double(const Eigen::Ref<const Vector>&)> score;
    std::optional<std::size_t> retained_k;
};

/// Wraps fitted GradPCA states (one state, or C states for the vec variant).
inline Detector make_gradpca_detector(std::shared_ptr<const Network> net, std::vector<PrincipalSubspace> fitted,
                                      std::string name = "gradpca", VecReducer reducer = VecReducer::max) {
    if (fitted.empty()) throw ValidationError("no fitted GradPCA state");
    auto states = std::make_shared<const std::vector<PrincipalSubspace>>(std::move(fitted));
    Detector d;
    d.name = std::move(name);
    std::size_t k = 0;
    for (const auto& s : *states) k += s.k();
    d.retained_k = k;
    if (states->front().config.variant == GradPcaVariant::vec) {
        d.score = [net, states, reducer](const Eigen::Ref<const Vector>& x) {
            return score_vec(*states, *net, x, reducer).value;
        };
    } else {
        d.score = [net, states](const Eigen::Ref<const Vector>& x) { return score(states->front(), *net, x).value; };
    }
    return d;
}

inline Detector fit_gradpca_detector(std::shared_ptr<const Network> net, const LabeledDataset& train,
                                     const GradPcaConfig& cfg, std::string name = "gradpca") {
    return make_gradpca_detector(net, fit_variant(*net, train, cfg), std::move(name));
}

struct BaselineOptions {
    double odin_temperature = baselines::Defaults::odin_temperature;
    double energy_temperature = baselines::Defaults::energy_temperature;
    double dice_p = baselines::Defaults::dice_p;
    std::size_t knn_k = baselines::Defaults::knn_k;
    std::size_t knn_bank = 0;  ///< 0 keeps every training feature
    double react_quantile = baselines::Defaults::react_quantile;
    double revisited_pca_variance = baselines::Defaults::revisited_pca_variance;
    std::size_t corp_features = baselines::Defaults::corp_features;
    double corp_gamma = baselines::Defaults::corp_gamma;
    double corp_variance = baselines::Defaults::corp_variance;
    std::size_t corp_bank = 1000;
    std::uint64_t seed = 0;
};

inline const std::vector<std::string>& baseline_methods() {
    static const std::vector<std::string> names{"max_logit", "msp",  "odin", "energy",        "dice", "mahalanobis",
                                                "knn",       "react", "nci", "revisited_pca", "corp"};
    return names;
}

/// Fits (where needed) and wraps a baseline on `net`'s logits/features.
inline Detector make_baseline(const std::string& method, std::shared_ptr<const Network> net,
                              const LabeledDataset& train, const BaselineOptions& opt = {}) {
    namespace b = baselines;
    Detector d;
    d.name = method;
    auto features = [&] { return std::make_shared<const RowMatrix>(penultimate_batch(*net, train.inputs)); };
    if (method == "max_logit") {
        d.score = [net](const Eigen::Ref<const Vector>& x) { return b::max_logit(forward(*net, x).logits); };
    } else if (method == "msp") {
        d.score = [net](const Eigen::Ref<const Vector>& x) { return b::msp(forward(*net, x).logits); };
    } else if (method == "odin") {
        const double t = opt.odin_temperature;
        d.score = [net, t](const Eigen::Ref<const Vector>& x) { return b::odin(forward(*net, x).logits, t); };
    } else if (method == "energy") {
        const double t = opt.energy_temperature;
        d.score = [net, t](const Eigen::Ref<const Vector>& x) { return b::energy(forward(*net, x).logits, t); };
    } else if (method == "dice") {
        auto s = std::make_shared<const b::DiceState>(b::dice_fit(*net, opt.dice_p));
        d.score = [net, s](const Eigen::Ref<const Vector>& x) {
            return b::dice_score(*s, forward(*net, x).penultimate);
        };
    } else if (method == "mahalanobis") {
        if (!train.labeled) throw ValidationError("mahalanobis needs labelled training data");
        auto s = std::make_shared<const b::MahalanobisState>(
            b::mahalanobis_fit(*features(), train.labels, train.num_classes));
        d.score = [net, s](const Eigen::Ref<const Vector>& x) {
            return b::mahalanobis_score(*s, forward(*net, x).penultimate);
        };
    } else if (method == "knn") {
        auto s = std::make_shared<const b::KnnState>(b::knn_fit(*features(), opt.knn_k, opt.knn_bank, opt.seed));
        d.score = [net, s](const Eigen::Ref<const Vector>& x) { return b::knn_score(*s, forward(*net, x).penultimate); };
    } else if (method == "react") {
        auto s = std::make_shared<const b::ReactState>(b::react_fit(*net, *features(), opt.react_quantile));
        d.score = [net, s](const Eigen::Ref<const Vector>& x) {
            return b::react_score(*s, forward(*net, x).penultimate);
        };
    } else if (method == "nci") {
        auto s = std::make_shared<const b::NciState>(b::nci_fit(*net, *features()));
        d.score = [net, s](const Eigen::Ref<const Vector>& x) { return b::nci_score(*s, forward(*net, x).penultimate); };
    } else if (method == "revisited_pca") {
        auto s = std::make_shared<const b::RevisitedPcaState>(
            b::revisited_pca_fit(*net, *features(), opt.revisited_pca_variance, opt.react_quantile));
        d.retained_k = static_cast<std::size_t>(s->components.cols());
        d.score = [net, s](const Eigen::Ref<const Vector>& x) {
            return b::revisited_pca_score(*s, forward(*net, x).penultimate);
        };
    } else if (method == "corp") {
        auto s = std::make_shared<const b::CorpState>(b::corp_fit(*features(), opt.corp_features, opt.corp_gamma,
                                                                   opt.corp_variance, opt.seed, opt.corp_bank));
        d.retained_k = static_cast<std::size_t>(s->components.cols());
        d.score = [net, s](const Eigen::Ref<const Vector>& x) {
            return b::corp_score(*s, forward(*net, x).penultimate);
        };
    } else {
        throw ConfigError("unknown baseline method '" + method + "'");
    }
    return d;
}

/// Scores every row of `x`, optionally on several threads.
inline std::vector<double> score_rows(const Detector& d, const RowMatrix& x, std::size_t threads = 1) {
    std::vector<double> out(static_cast<std::size_t>(x.rows()));
    parallel_for(out.size(), threads, [&](std::size_t i) {
        const Vector row = x.row(static_cast<Eigen::Index>(i)).transpose();
        out[i] = d.score(row);
    });
    for (double v : out) {
        if (!std::isfinite(v)) throw NumericalError("detector '" + d.name + "' produced a non-finite score");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports.

struct ReportRow {
    std::string detector;
    std::string dataset;
    double auroc = 0.0;
    double fpr95 = 0.0;
    std::size_t n_id = 0;
    std::size_t n_ood = 0;
    double runtime_per_sample = 0.0;  ///< seconds
    double throughput = 0.0;          ///< samples per second
    std::optional<std::size_t> retained_k;
    std::string sweep_param;
    std::string sweep_value;
    std::vector<double> id_scores;
    std::vector<double> ood_scores;
};

struct RowFailure {
    std::string detector;
    std::string dataset;
    std::string sweep_value;
    std::string message;
};

struct EvalReport {
    std::vector<ReportRow> rows;
    std::vector<RowFailure> failures;
    std::vector<std::pair<std::string, std::string>> config;  ///< effective configuration echo
    std::uint64_t seed = 0;
    bool timing = false;  ///< include wall-clock columns; off keeps output byte-stable

    const ReportRow* find(const std::string& detector, const std::string& dataset,
                          const std::string& sweep_value = "") const {
        for (const auto& r : rows) {
            if (r.detector == detector && r.dataset == dataset && r.sweep_value == sweep_value) return &r;
        }
        return nullptr;
    }

    void append(const EvalReport& other) {
        rows.insert(rows.end(), other.rows.begin(), other.rows.end());
        failures.insert(failures.end(), other.failures.begin(), other.failures.end());
    }
};

inline constexpr const char* kReportCsvSchema = "spod.report.csv/1";
inline constexpr const char* kReportJsonSchema = "spod.report.json/1";

/// Shortest decimal form that round-trips.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline void write_report_csv(const EvalReport& r, std::ostream& out) {
    out << "# schema: " << kReportCsvSchema << '\n';
    out << "# seed: " << r.seed << '\n';
    for (const auto& [k, v] : r.config) out << "# " << k << " = " << v << '\n';
    out << "detector,dataset,sweep_param,sweep_value,auroc,fpr95,n_id,n_ood,retained_k,runtime_per_sample_s,"
           "throughput_per_s\n";
    for (const auto& row : r.rows) {
        out << row.detector << ',' << row.dataset << ',' << row.sweep_param << ',' << row.sweep_value << ','
            << format_double(row.auroc) << ',' << format_double(row.fpr95) << ',' << row.n_id << ',' << row.n_ood
            << ',' << (row.retained_k ? std::to_string(*row.retained_k) : std::string()) << ',';
        if (r.timing) {
            out << format_double(row.runtime_per_sample) << ',' << format_double(row.throughput);
        } else {
            out << "NA,NA";
        }
        out << '\n';
    }
    for (const auto& f : r.failures) {
        out << "# failed: " << f.detector << ',' << f.dataset << ',' << f.sweep_value << ": " << f.message << '\n';
    }
}

inline nlohmann::json report_json(const EvalReport& r, bool with_scores = true) {
    using nlohmann::json;
    json j;
    j["schema"] = kReportJsonSchema;
    j["seed"] = r.seed;
    json cfg = json::object();
    for (const auto& [k, v] : r.config) cfg[k] = v;
    j["config"] = cfg;
    json rows = json::array();
    for (const auto& row : r.rows) {
        json o;
        o["detector"] = row.detector;
        o["dataset"] = row.dataset;
        if (!row.sweep_param.empty()) {
            o["sweep_param"] = row.sweep_param;
            o["sweep_value"] = row.sweep_value;
        }
        o["auroc"] = row.auroc;
        o["fpr95"] = row.fpr95;
        o["n_id"] = row.n_id;
        o["n_ood"] = row.n_ood;
        o["retained_k"] = row.retained_k ? json(*row.retained_k) : json(nullptr);
        if (r.timing) {
            o["runtime_per_sample_s"] = row.runtime_per_sample;
            o["throughput_per_s"] = row.throughput;
        }
        if (with_scores) {
            o["id_scores"] = row.id_scores;
            o["ood_scores"] = row.ood_scores;
        }
        rows.push_back(std::move(o));
    }
    j["rows"] = rows;
    json failures = json::array();
    for (const auto& f : r.failures) {
        failures.push_back({{"detector", f.detector}, {"dataset", f.dataset}, {"sweep_value", f.sweep_value},
                            {"message", f.message}});
    }
    j["failures"] = failures;
    return j;
}

inline void write_report_json(const EvalReport& r, std::ostream& out, bool with_scores = true) {
    out << report_json(r, with_scores).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Benchmark.

struct BenchmarkOptions {
    std::size_t threads = 1;
    double tpr = 0.95;
};

/// One row per (detector, OOD set). A detector that throws loses only the
/// affected rows, which are recorded in `failures`.
inline EvalReport run_benchmark(const std::vector<Detector>& detectors, const LabeledDataset& id_test,
                                const std::vector<LabeledDataset>& ood_sets, const BenchmarkOptions& opt = {}) {
    if (id_test.size() == 0) throw ValidationError("benchmark needs a nonempty ID test set");
    using clock = std::chrono::steady_clock;
    EvalReport report;
    for (const Detector& det : detectors) {
        std::vector<double> id_scores;
        double id_seconds = 0.0;
        try {
            const auto t0 = clock::now();
            id_scores = score_rows(det, id_test.inputs, opt.threads);
            id_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        } catch (const std::exception& e) {
            for (const auto& ood : ood_sets) report.failures.push_back({det.name, ood.name, "", e.what()});
            continue;
        }
        for (const auto& ood : ood_sets) {
            try {
                const auto t0 = clock::now();
                std::vector<double> ood_scores = score_rows(det, ood.inputs, opt.threads);
                const double seconds = id_seconds + std::chrono::duration<double>(clock::now() - t0).count();
                ReportRow row;
                row.detector = det.name;
                row.dataset = ood.name;
                row.n_id = id_scores.size();
                row.n_ood = ood_scores.size();
                ScoredSet set{id_scores, ood_scores, true};
                row.auroc = auroc(set);
                row.fpr95 = fpr_at_tpr(set, opt.tpr);
                const double n = static_cast<double>(row.n_id + row.n_ood);
                row.runtime_per_sample = seconds / n;
                row.throughput = seconds > 0.0 ? n / seconds : std::numeric_limits<double>::infinity();
                row.retained_k = det.retained_k;
                row.id_scores = std::move(set.id_scores);
                row.ood_scores = std::move(set.ood_scores);
                report.rows.push_back(std::move(row));
            } catch (const std::exception& e) {
                report.failures.push_back({det.name, ood.name, "", e.what()});
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Pipeline: synthetic data -> training -> detectors -> benchmark.

/// Independent seed streams derived from a run seed (splitmix64).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct PipelineConfig {
    SyntheticSpec data;
    std::vector<OodMode> ood_modes{OodMode::shifted_means, OodMode::orthogonal_subspace};
    std::vector<std::size_t> hidden{64};
    LayerKind activation = LayerKind::relu;
    TrainConfig train;
    double label_noise = 0.0;
    GradPcaConfig detector;
    std::vector<std::string> baselines{"msp", "energy"};
    BaselineOptions baseline_options;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    double tpr = 0.95;

    std::vector<std::pair<std::string, std::string>> echo() const {
        std::vector<std::pair<std::string, std::string>> kv;
        kv.emplace_back("data.num_classes", std::to_string(data.num_classes));
        kv.emplace_back("data.input_dim", std::to_string(data.input_dim));
        kv.emplace_back("data.mean_scale", format_double(data.per_class_mean_scale));
        kv.emplace_back("data.noise_sigma", format_double(data.noise_sigma));
        kv.emplace_back("data.samples_per_class", std::to_string(data.samples_per_class));
        kv.emplace_back("data.ood_scale_factor", format_double(data.ood_scale_factor));
        std::string modes;
        for (std::size_t i = 0; i < ood_modes.size(); ++i) modes += (i ? "," : "") + std::string(to_string(ood_modes[i]));
        kv.emplace_back("data.ood_modes", modes);
        kv.emplace_back("data.label_noise", format_double(label_noise));
        std::string h;
        for (std::size_t i = 0; i < hidden.size(); ++i) h += (i ? "," : "") + std::to_string(hidden[i]);
        kv.emplace_back("model.hidden", h);
        kv.emplace_back("model.activation", to_string(activation));
        kv.emplace_back("train.epochs", std::to_string(train.epochs));
        kv.emplace_back("train.batch_size", std::to_string(train.batch_size));
        kv.emplace_back("train.lr", format_double(train.lr));
        kv.emplace_back("train.momentum", format_double(train.momentum));
        kv.emplace_back("train.weight_decay", format_double(train.weight_decay));
        std::istringstream det(detector.echo());
        std::string line;
        while (std::getline(det, line)) {
            const auto eq = line.find('=');
            if (eq != std::string::npos) kv.emplace_back("detector." + line.substr(0, eq), line.substr(eq + 1));
        }
        std::string b;
        for (std::size_t i = 0; i < baselines.size(); ++i) b += (i ? "," : "") + baselines[i];
        kv.emplace_back("eval.baselines", b);
        kv.emplace_back("eval.tpr", format_double(tpr));
        kv.emplace_back("run.seed", std::to_string(seed));
        return kv;
    }
};

struct PipelineData {
    LabeledDataset train;  ///< possibly label-noised
    LabeledDataset id_test;
    std::vector<LabeledDataset> ood_sets;
};

inline PipelineData prepare_data(const PipelineConfig& cfg) {
    if (cfg.ood_modes.empty()) throw ConfigError("pipeline needs at least one OOD mode");
    PipelineData out;
    SyntheticSpec spec = cfg.data;
    spec.seed = derive_seed(cfg.seed, 1);
    for (std::size_t i = 0; i < cfg.ood_modes.size(); ++i) {
        spec.ood_mode = cfg.ood_modes[i];
        SyntheticSplits s = generate_synthetic(spec);
        if (i == 0) {
            out.train = inject_label_noise(s.id_train, {cfg.label_noise, derive_seed(cfg.seed, 4)});
            out.id_test = std::move(s.id_test);
        }
        out.ood_sets.push_back(std::move(s.ood));
    }
    return out;
}

struct TrainedModel {
    std::shared_ptr<const Network> net;
    TrainLog log;
};

inline TrainedModel train_model(const PipelineConfig& cfg, const PipelineData& data) {
    Network net = Network::mlp(cfg.data.input_dim, cfg.hidden, cfg.data.num_classes, cfg.activation,
                               derive_seed(cfg.seed, 2));
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, 3);
    TrainLog log = train_sgd(net, data.train, tc);
    return {std::make_shared<const Network>(std::move(net)), std::move(log)};
}

/// Fits GradPCA and the configured baselines on `model`, then benchmarks
/// them. Fitting failures are isolated like scoring failures.
inline EvalReport evaluate_model(const PipelineConfig& cfg, const PipelineData& data, const TrainedModel& model) {
    std::vector<Detector> detectors;
    std::vector<RowFailure> failures;
    auto fail_all = [&](const std::string& name, const std::string& msg) {
        for (const auto& o : data.ood_sets) failures.push_back({name, o.name, "", msg});
    };
    try {
        detectors.push_back(fit_gradpca_detector(model.net, data.train, cfg.detector));
    } catch (const std::exception& e) {
        fail_all("gradpca", e.what());
    }
    BaselineOptions bo = cfg.baseline_options;
    bo.seed = derive_seed(cfg.seed, 5);
    for (const auto& m : cfg.baselines) {
        try {
            detectors.push_back(make_baseline(m, model.net, data.train, bo));
        } catch (const std::exception& e) {
            fail_all(m, e.what());
        }
    }
    EvalReport report = run_benchmark(detectors, data.id_test, data.ood_sets, {cfg.threads, cfg.tpr});
    report.failures.insert(report.failures.begin(), failures.begin(), failures.end());
    report.config = cfg.echo();
    report.seed = cfg.seed;
    return report;
}

struct PipelineResult {
    EvalReport report;
    TrainedModel model;
    PipelineData data;
};

inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
    cfg.detector.validate();
    PipelineResult r;
    r.data = prepare_data(cfg);
    r.model = train_model(cfg, r.data);
    r.report = evaluate_model(cfg, r.data, r.model);
    return r;
}

// ---------------------------------------------------------------------------
// Sweeps.

enum class SweepParam { epsilon, dice_p, subset, seed, label_noise };

inline const char* to_string(SweepParam p) {
    switch (p) {
        case SweepParam::epsilon: return "epsilon";
        case SweepParam::dice_p: return "dice_p";
        case SweepParam::subset: return "subset";
        case SweepParam::seed: return "seed";
        case SweepParam::label_noise: return "label_noise";
    }
    return "?";
}

inline SweepParam parse_sweep_param(const std::string& s) {
    for (auto p : {SweepParam::epsilon, SweepParam::dice_p, SweepParam::subset, SweepParam::seed,
                   SweepParam::label_noise}) {
        if (s == to_string(p)) return p;
    }
    throw ConfigError("unknown sweep parameter '" + s + "' (expected epsilon, dice_p, subset, seed or label_noise)");
}

/// True when the parameter only affects the detector, so one trained model serves every value.
inline bool sweep_reuses_model(SweepParam p) {
    return p == SweepParam::epsilon || p == SweepParam::dice_p || p == SweepParam::subset;
}

inline double parse_number(const std::string& s, const char* what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw ConfigError(std::string("invalid ") + what + " '" + s + "'");
    return v;
}

inline std::uint64_t parse_unsigned(const std::string& s, const char* what) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError(std::string("invalid ") + what + " '" + s + "'");
    }
    try {
        return std::stoull(s);
    } catch (const std::exception&) {
        throw ConfigError(std::string("invalid ") + what + " '" + s + "'");
    }
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) {
        const auto b = cur.find_first_not_of(" \t");
        const auto e = cur.find_last_not_of(" \t");
        out.push_back(b == std::string::npos ? std::string() : cur.substr(b, e - b + 1));
    }
    return out;
}

inline PipelineConfig apply_sweep_value(PipelineConfig cfg, SweepParam p, const std::string& value) {
    switch (p) {
        case SweepParam::epsilon: cfg.detector.epsilon = parse_number(value, "epsilon"); break;
        case SweepParam::dice_p:
            if (value == "none") cfg.detector.dice_p.reset();
            else cfg.detector.dice_p = parse_number(value, "dice_p");
            break;
        case SweepParam::subset:
            cfg.detector.subset = split_list(value, '+');
            break;
        case SweepParam::seed: cfg.seed = parse_unsigned(value, "seed"); break;
        case SweepParam::label_noise: cfg.label_noise = parse_number(value, "label_noise"); break;
    }
    return cfg;
}

/// Runs the pipeline once per value (training once when the parameter is
/// detector-only). Each value's failures are isolated. Subset values list
/// groups joined by '+', or "head"/"all".
inline EvalReport sweep(SweepParam param, const std::vector<std::string>& values, const PipelineConfig& base) {
    if (values.empty()) throw ValidationError("sweep needs at least one value");
    EvalReport report;
    report.config = base.echo();
    report.config.emplace_back("sweep.param", to_string(param));
    std::string joined;
    for (std::size_t i = 0; i < values.size(); ++i) joined += (i ? "," : "") + values[i];
    report.config.emplace_back("sweep.values", joined);
    report.seed = base.seed;

    std::optional<PipelineData> shared_data;
    std::optional<TrainedModel> shared_model;
    for (const auto& value : values) {
        try {
            PipelineConfig cfg = apply_sweep_value(base, param, value);
            cfg.detector.validate();
            EvalReport part;
            if (sweep_reuses_model(param)) {
                if (!shared_model) {
                    shared_data = prepare_data(cfg);
                    shared_model = train_model(cfg, *shared_data);
                }
                part = evaluate_model(cfg, *shared_data, *shared_model);
            } else {
                PipelineData data = prepare_data(cfg);
                part = evaluate_model(cfg, data, train_model(cfg, data));
            }
            for (auto& row : part.rows) {
                row.sweep_param = to_string(param);
                row.sweep_value = value;
            }
            for (auto& f : part.failures) f.sweep_value = value;
            report.append(part);
        } catch (const std::exception& e) {
            report.failures.push_back({"*", "*", value, e.what()});
        }
    }
    return report;
}

}  // namespace spod
