// spod: command-line front end for data generation, training, GradPCA
// fitting/scoring, certificates, NTK inspection, benchmarks and sweeps.

#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spod/spod.hpp"

namespace {

using nlohmann::json;
using namespace spod;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;

struct CommonOptions {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
};

/// Flag values that override a config key when given.
struct Overrides {
    std::deque<std::pair<std::string, std::optional<std::string>>> items;

    void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        items.emplace_back(key, std::nullopt);
        app->add_option(flag, items.back().second, help);
    }
};

RunConfig load_config(const CommonOptions& common, const Overrides* overrides = nullptr) {
    RunConfig rc;
    if (!common.config.empty()) rc.load_file(common.config);
    for (const auto& s : common.sets) rc.set_assignment(s);
    if (common.seed) rc.set("run.seed", std::to_string(*common.seed));
    if (common.threads) rc.set("run.threads", std::to_string(*common.threads));
    if (overrides) {
        for (const auto& [key, value] : overrides->items) {
            if (value) rc.set(key, *value);
        }
    }
    rc.seed();
    return rc;
}

/// Output stream: the named file, or stdout when the path is empty or "-".
class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_.open(path, std::ios::binary);
            if (!file_) throw IoError("cannot open '" + path + "' for writing");
        }
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

private:
    std::ofstream file_;
};

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw IoError("write to '" + path + "' failed");
}

std::vector<std::size_t> selected_rows(const LabeledDataset& d, const std::optional<std::size_t>& index) {
    if (index) {
        if (*index >= d.size()) {
            throw ValidationError("--index " + std::to_string(*index) + " out of range for " +
                                  std::to_string(d.size()) + " samples");
        }
        return {*index};
    }
    std::vector<std::size_t> rows(d.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return rows;
}

Detector detector_from_state(std::shared_ptr<const Network> net, const std::string& state_path,
                             const std::string& reducer) {
    return make_gradpca_detector(net, load_states(state_path), "gradpca", parse_reducer(reducer));
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& rc, const std::string& spec_name, const std::string& out_dir) {
    if (spec_name != "default") throw ConfigError("unknown data spec '" + spec_name + "' (only 'default' is defined)");
    std::filesystem::create_directories(out_dir);
    SyntheticSpec spec = rc.synthetic_spec();
    const double noise = rc.get_double("data.label_noise");
    json written = json::array();
    bool first = true;
    for (OodMode mode : rc.ood_modes()) {
        spec.ood_mode = mode;
        SyntheticSplits s = generate_synthetic(spec);
        if (first) {
            const LabeledDataset train = inject_label_noise(s.id_train, {noise, derive_seed(rc.seed(), 4)});
            save_dataset(train, out_dir + "/id_train.spdt");
            save_dataset(s.id_test, out_dir + "/id_test.spdt");
            written.push_back(out_dir + "/id_train.spdt");
            written.push_back(out_dir + "/id_test.spdt");
            first = false;
        }
        const std::string path = out_dir + "/" + s.ood.name + ".spdt";
        save_dataset(s.ood, path);
        written.push_back(path);
    }
    std::cout << json{{"schema", "spod.gen-data/1"}, {"files", written}}.dump() << '\n';
    return kExitOk;
}

int cmd_train(const RunConfig& rc, const std::string& data_path, const std::string& out_path,
              const std::string& log_path) {
    const LabeledDataset data = load_dataset(data_path);
    Network net = Network::mlp(data.input_dim(), rc.hidden(), data.num_classes, rc.activation(),
                               derive_seed(rc.seed(), 2));
    const TrainLog log = train_sgd(net, data, rc.train_config());
    save_checkpoint(net, out_path);
    if (!log_path.empty()) {
        std::ostringstream os;
        os << "# schema: spod.trainlog.csv/1\nepoch,loss,accuracy\n";
        for (const auto& e : log.epochs) {
            os << e.epoch << ',' << format_double(e.loss) << ',' << format_double(e.accuracy) << '\n';
        }
        write_text_file(log_path, os.str());
    }
    const EpochStats last = log.epochs.empty() ? evaluate_classifier(net, data) : log.epochs.back();
    std::cout << json{{"schema", "spod.train/1"},
                      {"epochs", log.epochs.size()},
                      {"params", net.num_params()},
                      {"final_loss", last.loss},
                      {"final_accuracy", last.accuracy}}
                     .dump()
              << '\n';
    return kExitOk;
}

int cmd_fit(const RunConfig& rc, const std::string& model_path, const std::string& data_path,
            const std::string& out_path) {
    const Network net = load_checkpoint(model_path);
    const LabeledDataset train = load_dataset(data_path);
    const GradPcaConfig cfg = rc.detector_config();
    const std::vector<PrincipalSubspace> states = fit_variant(net, train, cfg);
    save_states(states, out_path);
    json ks = json::array(), retained = json::array();
    for (const auto& s : states) {
        ks.push_back(s.k());
        retained.push_back(s.retained_fraction);
    }
    std::cout << json{{"schema", "spod.fit/1"},
                      {"variant", to_string(cfg.variant)},
                      {"dim", states.front().dim()},
                      {"k", ks},
                      {"retained_fraction", retained}}
                     .dump()
              << '\n';
    return kExitOk;
}

int cmd_score(const RunConfig& rc, const std::string& model_path, const std::string& state_path,
              const std::string& data_path, const std::optional<std::size_t>& index, const std::string& out_path,
              const std::string& reducer, std::optional<double> delta) {
    auto net = std::make_shared<const Network>(load_checkpoint(model_path));
    const std::vector<PrincipalSubspace> states = load_states(state_path);
    const double threshold = delta ? *delta : states.front().config.threshold_delta;
    if (delta && !(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("--delta must lie in (0, 1]");
    const Detector det = make_gradpca_detector(net, states, "gradpca", parse_reducer(reducer));
    const LabeledDataset data = load_dataset(data_path);
    const auto rows = selected_rows(data, index);
    std::vector<double> scores(rows.size());
    parallel_for(rows.size(), rc.threads(), [&](std::size_t i) {
        scores[i] = det.score(data.inputs.row(static_cast<Eigen::Index>(rows[i])).transpose());
    });
    Output out(out_path);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        json line{{"schema", delta ? "spod.detect/1" : "spod.score/1"}, {"index", rows[i]}, {"score", scores[i]}};
        if (delta) line["ood"] = scores[i] < threshold;
        out.stream() << line.dump() << '\n';
    }
    return kExitOk;
}

int cmd_certify(const RunConfig&, const std::string& model_path, const std::string& state_path,
                const std::string& reference_path, const std::string& data_path,
                const std::optional<std::size_t>& index, double eps, const std::string& out_path) {
    const Network net = load_checkpoint(model_path);
    const std::vector<PrincipalSubspace> states = load_states(state_path);
    if (states.size() != 1) throw ConfigError("certify needs a single-state detector (not the vec variant)");
    const PrincipalSubspace& state = states.front();
    const ParamSubset subset = state.config.resolve_subset(net);
    if (subset.dim() != state.dim()) throw ConfigError("state subset does not match the network");

    const LabeledDataset reference = load_dataset(reference_path);
    RowMatrix features(static_cast<Eigen::Index>(reference.size()), static_cast<Eigen::Index>(subset.dim()));
    for (std::size_t i = 0; i < reference.size(); ++i) {
        features.row(static_cast<Eigen::Index>(i)) =
            state_gradient(state, net, reference.inputs.row(static_cast<Eigen::Index>(i)).transpose(), subset)
                .transpose();
    }
    const CovarianceModel cov = CovarianceModel::from_features(features, eps);
    const Matrix range = cov.range();
    const std::size_t image_dim = feature_image_dim(features);

    const LabeledDataset data = load_dataset(data_path);
    Output out(out_path);
    out.stream() << json{{"schema", "spod.certify/1"},
                         {"kind", "summary"},
                         {"rank", cov.rank_c},
                         {"lambda_c", cov.lambda_c},
                         {"eps", eps},
                         {"image_dim", image_dim},
                         {"necessary_condition", necessary_condition(cov, image_dim)},
                         {"robust_nonvacuous", cov.robust_nonvacuous()}}
                        .dump()
                 << '\n';
    for (std::size_t i : selected_rows(data, index)) {
        const Vector x = data.inputs.row(static_cast<Eigen::Index>(i)).transpose();
        const Vector logits = forward(net, x).logits;
        const std::size_t top = argmax_lowest(logits);
        bool tie = false;
        for (Eigen::Index c = 0; c < logits.size(); ++c) {
            if (static_cast<std::size_t>(c) != top &&
                std::abs(logits[c] - logits[static_cast<Eigen::Index>(top)]) <=
                    1e-12 * std::max(1.0, std::abs(logits[static_cast<Eigen::Index>(top)]))) {
                tie = true;
            }
        }
        const Vector h = state_gradient(state, net, x, subset);
        const Certificate exact = certify_exact(h, range);
        const Certificate robust = certify_robust(exact.score, cov.lambda_c, eps);
        json r{{"holds", robust.holds}, {"vacuous", robust.vacuous}};
        r["margin"] = robust.vacuous ? json(nullptr) : json(robust.margin);
        r["threshold"] = robust.vacuous ? json(nullptr) : json(robust.threshold_used);
        out.stream() << json{{"schema", "spod.certify/1"},
                             {"kind", "sample"},
                             {"index", i},
                             {"score", exact.score},
                             {"exact", {{"holds", exact.holds}, {"margin", exact.margin}}},
                             {"robust", r},
                             {"tie_flag", tie}}
                            .dump()
                     << '\n';
    }
    return kExitOk;
}

int cmd_ntk_inspect(const RunConfig& rc, const std::string& model_path, const std::string& data_path,
                    std::size_t per_class, const std::string& head_mode, const std::string& heatmap_path,
                    const std::string& out_path) {
    const Network net = load_checkpoint(model_path);
    const LabeledDataset data = load_dataset(data_path);
    const LabeledDataset batch = balanced_subset(data, per_class);
    const GradPcaConfig cfg = rc.detector_config();
    const ParamSubset subset = cfg.resolve_subset(net);
    NtkHeadMode mode;
    if (head_mode == "aggregated") mode = NtkHeadMode::aggregated;
    else if (head_mode == "head_sum") mode = NtkHeadMode::head_sum;
    else throw ConfigError("--head-mode must be aggregated or head_sum");
    const AggregationMode head = cfg.aggregation ? *cfg.aggregation : AggregationMode::max_logit();
    const BlockStructureReport rep = block_structure_of_batch(net, batch, mode, head, subset);
    if (!heatmap_path.empty()) {
        std::ostringstream os;
        for (Eigen::Index i = 0; i < rep.heatmap.rows(); ++i) {
            for (Eigen::Index j = 0; j < rep.heatmap.cols(); ++j) {
                os << (j ? "," : "") << format_double(rep.heatmap(i, j));
            }
            os << '\n';
        }
        write_text_file(heatmap_path, os.str());
    }
    json gram = json::array();
    for (Eigen::Index i = 0; i < rep.gram_means.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < rep.gram_means.cols(); ++j) row.push_back(rep.gram_means(i, j));
        gram.push_back(row);
    }
    auto finite_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    const json report{{"schema", "spod.ntk/1"},
                      {"head_mode", head_mode},
                      {"subset", subset.descriptor()},
                      {"samples", batch.size()},
                      {"per_class", per_class},
                      {"alignment_ratio", finite_or_null(rep.alignment_ratio)},
                      {"alignment_ratio_with_diagonal", finite_or_null(rep.alignment_ratio_with_diagonal)},
                      {"residual_norm", rep.residual_norm},
                      {"leading_norm", rep.leading_norm},
                      {"ntk_norm", rep.ntk_norm},
                      {"gram_means", gram}};
    Output out(out_path);
    out.stream() << report.dump(2) << '\n';
    return kExitOk;
}

void emit_report(const EvalReport& report, const std::string& csv_path, const std::string& json_path) {
    if (!csv_path.empty()) {
        Output out(csv_path);
        write_report_csv(report, out.stream());
        if (!out.stream().flush()) throw IoError("write to '" + csv_path + "' failed");
    }
    if (!json_path.empty()) {
        Output out(json_path);
        write_report_json(report, out.stream());
        if (!out.stream().flush()) throw IoError("write to '" + json_path + "' failed");
    }
    if (csv_path.empty() && json_path.empty()) write_report_csv(report, std::cout);
    for (const auto& f : report.failures) {
        std::cerr << "warning: " << f.detector << " on " << f.dataset
                  << (f.sweep_value.empty() ? "" : " [" + f.sweep_value + "]") << " failed: " << f.message << '\n';
    }
}

int cmd_bench(const RunConfig& rc, const std::string& model_path, const std::string& state_path,
              const std::string& train_path, const std::string& id_path, const std::vector<std::string>& ood_paths,
              const std::string& reducer, const std::string& csv_path, const std::string& json_path) {
    EvalReport report;
    if (model_path.empty()) {
        if (!state_path.empty() || !id_path.empty() || !ood_paths.empty()) {
            throw ValidationError("bench without --model runs the synthetic pipeline and takes no data files");
        }
        report = run_pipeline(rc.pipeline()).report;
    } else {
        if (state_path.empty() || id_path.empty() || ood_paths.empty()) {
            throw ValidationError("bench with --model needs --state, --id and at least one --ood");
        }
        auto net = std::make_shared<const Network>(load_checkpoint(model_path));
        std::vector<Detector> detectors{detector_from_state(net, state_path, reducer)};
        const PipelineConfig pc = rc.pipeline();
        if (!pc.baselines.empty()) {
            if (train_path.empty()) throw ValidationError("baselines need the training set (--train)");
            const LabeledDataset train = load_dataset(train_path);
            for (const auto& m : pc.baselines) {
                try {
                    detectors.push_back(make_baseline(m, net, train, pc.baseline_options));
                } catch (const std::exception& e) {
                    report.failures.push_back({m, "*", "", e.what()});
                }
            }
        }
        std::vector<LabeledDataset> oods;
        for (const auto& p : ood_paths) oods.push_back(load_dataset(p));
        EvalReport bench = run_benchmark(detectors, load_dataset(id_path), oods, {rc.threads(), pc.tpr});
        bench.failures.insert(bench.failures.begin(), report.failures.begin(), report.failures.end());
        report = std::move(bench);
    }
    report.config = rc.echo();
    report.seed = rc.seed();
    report.timing = rc.timing();
    emit_report(report, csv_path, json_path);
    return report.rows.empty() ? kExitValidation : kExitOk;
}

int cmd_sweep(const RunConfig& rc, const std::string& param, const std::string& values, const std::string& csv_path,
              const std::string& json_path) {
    EvalReport report = sweep(parse_sweep_param(param), split_list(values), rc.pipeline());
    report.config = rc.echo();
    report.config.emplace_back("sweep.param", param);
    report.config.emplace_back("sweep.values", values);
    report.timing = rc.timing();
    emit_report(report, csv_path, json_path);
    return report.rows.empty() ? kExitValidation : kExitOk;
}

int cmd_baseline(const RunConfig& rc, const std::string& method, const std::string& model_path,
                 const std::string& train_path, const std::string& data_path, const std::optional<std::size_t>& index,
                 const std::string& out_path) {
    auto net = std::make_shared<const Network>(load_checkpoint(model_path));
    const LabeledDataset train = load_dataset(train_path);
    const Detector det = make_baseline(method, net, train, rc.baseline_options());
    const LabeledDataset data = load_dataset(data_path);
    const auto rows = selected_rows(data, index);
    std::vector<double> scores(rows.size());
    parallel_for(rows.size(), rc.threads(), [&](std::size_t i) {
        scores[i] = det.score(data.inputs.row(static_cast<Eigen::Index>(rows[i])).transpose());
    });
    Output out(out_path);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.stream() << json{{"schema", "spod.baseline/1"}, {"method", method}, {"index", rows[i]}, {"score", scores[i]}}
                            .dump()
                     << '\n';
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spod: spectral out-of-distribution detection with gradient PCA"};
    app.require_subcommand(1);
    app.fallthrough();

    CommonOptions common;
    app.add_option("--config", common.config, "Run configuration file (section.key = value)");
    app.add_option("--set", common.sets, "Override a configuration key (section.key=value)");
    app.add_option("--seed", common.seed, "Run seed (required)");
    app.add_option("--threads", common.threads, "Worker thread cap");

    std::function<int()> action;

    auto* gen = app.add_subcommand("gen-data", "Generate synthetic ID train/test and OOD datasets");
    std::string spec_name = "default", out_dir;
    gen->add_option("--spec", spec_name, "Data specification name")->capture_default_str();
    gen->add_option("--out-dir", out_dir, "Output directory")->required();
    Overrides gen_ovr;
    gen_ovr.add(gen, "--ood-modes", "data.ood_modes", "Comma-separated OOD modes");
    gen_ovr.add(gen, "--label-noise", "data.label_noise", "Fraction of training labels to corrupt");
    gen->callback([&] { action = [&] { return cmd_gen_data(load_config(common, &gen_ovr), spec_name, out_dir); }; });

    auto* train = app.add_subcommand("train", "Train the MLP classifier on a dataset");
    std::string train_data, train_out, train_log;
    train->add_option("--data,--dataset", train_data, "Training dataset (.spdt)")->required();
    train->add_option("--out", train_out, "Checkpoint path")->required();
    train->add_option("--log", train_log, "Per-epoch CSV log");
    Overrides train_ovr;
    train_ovr.add(train, "--epochs", "train.epochs", "Epochs");
    train_ovr.add(train, "--lr", "train.lr", "Learning rate");
    train_ovr.add(train, "--batch-size", "train.batch_size", "Mini-batch size");
    train_ovr.add(train, "--hidden", "model.hidden", "Hidden widths, comma-separated");
    train_ovr.add(train, "--activation", "model.activation", "relu or tanh");
    train->callback([&] {
        action = [&] { return cmd_train(load_config(common, &train_ovr), train_data, train_out, train_log); };
    });

    Overrides det_ovr;
    auto add_detector_flags = [&](CLI::App* sub) {
        det_ovr.add(sub, "--variant", "detector.variant", "means, batch, gradorth or vec");
        det_ovr.add(sub, "--epsilon", "detector.epsilon", "Retained energy fraction");
        det_ovr.add(sub, "--dice-p", "detector.dice_p", "DICE sparsity (or none)");
        det_ovr.add(sub, "--subset", "detector.subset", "Parameter groups: head, all or a,b");
        det_ovr.add(sub, "--agg", "detector.aggregation", "max, sum or head:c");
        det_ovr.add(sub, "--centering", "detector.centering", "class_weighted or sample_weighted");
    };

    auto* fit = app.add_subcommand("fit", "Fit a GradPCA detector state");
    std::string fit_model, fit_data, fit_out;
    fit->add_option("--model", fit_model, "Checkpoint")->required();
    fit->add_option("--data,--dataset", fit_data, "ID training dataset")->required();
    fit->add_option("--out", fit_out, "Detector state path")->required();
    add_detector_flags(fit);
    det_ovr.add(fit, "--delta", "detector.delta", "Detection threshold stored in the state");
    fit->callback([&] {
        action = [&] { return cmd_fit(load_config(common, &det_ovr), fit_model, fit_data, fit_out); };
    });

    std::string sc_model, sc_state, sc_data, sc_out, sc_reducer = "max";
    std::optional<std::size_t> sc_index;
    std::optional<double> sc_delta;
    auto add_scoring_flags = [&](CLI::App* sub) {
        sub->add_option("--model", sc_model, "Checkpoint")->required();
        sub->add_option("--state", sc_state, "Detector state")->required();
        sub->add_option("--data,--dataset", sc_data, "Dataset to score")->required();
        sub->add_option("--index", sc_index, "Score a single row");
        sub->add_option("--out", sc_out, "JSON-lines output (default stdout)");
        sub->add_option("--reducer", sc_reducer, "vec variant head reducer: max or mean")->capture_default_str();
    };
    auto* score_cmd = app.add_subcommand("score", "Score samples (JSON lines)");
    add_scoring_flags(score_cmd);
    score_cmd->callback([&] {
        action = [&] {
            return cmd_score(load_config(common), sc_model, sc_state, sc_data, sc_index, sc_out, sc_reducer,
                             std::nullopt);
        };
    });
    auto* detect_cmd = app.add_subcommand("detect", "Flag samples scoring below delta as OOD (JSON lines)");
    add_scoring_flags(detect_cmd);
    detect_cmd->add_option("--delta", sc_delta, "Threshold (default: stored in the state)");
    detect_cmd->callback([&] {
        action = [&] {
            const RunConfig rc = load_config(common);
            std::optional<double> d = sc_delta;
            if (!d) d = load_states(sc_state).front().config.threshold_delta;
            return cmd_score(rc, sc_model, sc_state, sc_data, sc_index, sc_out, sc_reducer, d);
        };
    });

    auto* certify = app.add_subcommand("certify", "Exact and robust OOD certificates (JSON lines)");
    std::string ce_model, ce_state, ce_ref, ce_data, ce_out;
    std::optional<std::size_t> ce_index;
    double ce_eps = 0.0;
    certify->add_option("--model", ce_model, "Checkpoint")->required();
    certify->add_option("--state", ce_state, "Detector state (subset and gradient target)")->required();
    certify->add_option("--reference", ce_ref, "ID dataset defining the second-moment matrix")->required();
    certify->add_option("--data,--dataset", ce_data, "Dataset to certify")->required();
    certify->add_option("--index", ce_index, "Certify a single row");
    certify->add_option("--eps", ce_eps, "Perturbation bound ||S - S_hat||")->capture_default_str();
    certify->add_option("--out", ce_out, "JSON-lines output (default stdout)");
    certify->callback([&] {
        action = [&] {
            return cmd_certify(load_config(common), ce_model, ce_state, ce_ref, ce_data, ce_index, ce_eps, ce_out);
        };
    });

    auto* ntk = app.add_subcommand("ntk-inspect", "Empirical NTK block structure and heatmap");
    std::string nt_model, nt_data, nt_mode = "aggregated", nt_heatmap, nt_out;
    std::size_t nt_per_class = 20;
    ntk->add_option("--model", nt_model, "Checkpoint")->required();
    ntk->add_option("--data,--dataset", nt_data, "Labelled dataset")->required();
    ntk->add_option("--per-class", nt_per_class, "Samples per class (first m of each)")->capture_default_str();
    ntk->add_option("--head-mode", nt_mode, "aggregated or head_sum")->capture_default_str();
    ntk->add_option("--heatmap", nt_heatmap, "Heatmap CSV path");
    ntk->add_option("--out", nt_out, "Report JSON (default stdout)");
    Overrides ntk_ovr;
    ntk_ovr.add(ntk, "--subset", "detector.subset", "Parameter groups");
    ntk_ovr.add(ntk, "--agg", "detector.aggregation", "max, sum or head:c");
    ntk->callback([&] {
        action = [&] {
            return cmd_ntk_inspect(load_config(common, &ntk_ovr), nt_model, nt_data, nt_per_class, nt_mode,
                                   nt_heatmap, nt_out);
        };
    });

    auto* bench = app.add_subcommand("bench", "Benchmark GradPCA and baselines (CSV/JSON report)");
    std::string be_model, be_state, be_train, be_id, be_reducer = "max", be_csv, be_json;
    std::vector<std::string> be_ood;
    bench->add_option("--model", be_model, "Checkpoint (omit to run the synthetic pipeline)");
    bench->add_option("--state", be_state, "Detector state");
    bench->add_option("--train", be_train, "ID training set for fitting baselines");
    bench->add_option("--id", be_id, "ID test set");
    bench->add_option("--ood", be_ood, "OOD dataset (repeatable)");
    bench->add_option("--reducer", be_reducer, "vec variant head reducer")->capture_default_str();
    bench->add_option("--csv", be_csv, "CSV report path");
    bench->add_option("--json", be_json, "JSON report path");
    Overrides bench_ovr;
    bench_ovr.add(bench, "--baselines", "eval.baselines", "Comma-separated baseline methods");
    bench_ovr.add(bench, "--timing", "eval.timing", "Include wall-clock columns (true/false)");
    add_detector_flags(bench);
    bench->callback([&] {
        action = [&] {
            Overrides merged = bench_ovr;
            merged.items.insert(merged.items.end(), det_ovr.items.begin(), det_ovr.items.end());
            return cmd_bench(load_config(common, &merged), be_model, be_state, be_train, be_id, be_ood, be_reducer,
                             be_csv, be_json);
        };
    });

    auto* sweep_cmd = app.add_subcommand("sweep", "Ablation sweep over the synthetic pipeline");
    std::string sw_param, sw_values, sw_csv, sw_json;
    sweep_cmd->add_option("--param", sw_param, "epsilon, dice_p, subset, seed or label_noise")->required();
    sweep_cmd->add_option("--values", sw_values, "Comma-separated values (subset groups joined by '+')")->required();
    sweep_cmd->add_option("--csv", sw_csv, "CSV report path");
    sweep_cmd->add_option("--json", sw_json, "JSON report path");
    Overrides sweep_ovr;
    sweep_ovr.add(sweep_cmd, "--baselines", "eval.baselines", "Comma-separated baseline methods");
    sweep_ovr.add(sweep_cmd, "--timing", "eval.timing", "Include wall-clock columns (true/false)");
    sweep_cmd->callback([&] {
        action = [&] { return cmd_sweep(load_config(common, &sweep_ovr), sw_param, sw_values, sw_csv, sw_json); };
    });

    auto* base = app.add_subcommand("baseline", "Score samples with a baseline detector (JSON lines)");
    std::string ba_method, ba_model, ba_train, ba_data, ba_out;
    std::optional<std::size_t> ba_index;
    base->add_option("--method", ba_method, "max_logit, msp, odin, energy, dice, mahalanobis, knn, react, nci, "
                                            "revisited_pca or corp")
        ->required();
    base->add_option("--model", ba_model, "Checkpoint")->required();
    base->add_option("--train", ba_train, "ID training set (fitting)")->required();
    base->add_option("--data,--dataset", ba_data, "Dataset to score")->required();
    base->add_option("--index", ba_index, "Score a single row");
    base->add_option("--out", ba_out, "JSON-lines output (default stdout)");
    Overrides base_ovr;
    base_ovr.add(base, "--knn-k", "eval.knn_k", "KNN neighbour rank");
    base_ovr.add(base, "--odin-temperature", "eval.odin_temperature", "ODIN temperature");
    base_ovr.add(base, "--dice-p", "eval.baseline_dice_p", "DICE sparsity");
    base_ovr.add(base, "--corp-features", "eval.corp_features", "CoRP random features");
    base->callback([&] {
        action = [&] {
            return cmd_baseline(load_config(common, &base_ovr), ba_method, ba_model, ba_train, ba_data, ba_index,
                                ba_out);
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }
    try {
        return action ? action() : kExitValidation;
    } catch (const spod::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.is_numerical() ? kExitNumerical : kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    }
}
