#pragma once

// Flat `section.key = value` run configuration shared by the CLI
// subcommands. Unknown keys are rejected; every key has a default except
// run.seed, which must be provided. "auto" selects the variant's default.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spod/errors.hpp"
#include "spod/eval.hpp"

namespace spod {

class RunConfig {
public:
    RunConfig() {
        const PipelineConfig p;
        for (const auto& [k, v] : p.echo()) values_[k] = v;
        values_.erase("run.seed");
        values_["detector.subset"] = "head";
        values_["detector.epsilon"] = "auto";
        values_["detector.aggregation"] = "auto";
        values_["eval.timing"] = "false";
        values_["eval.knn_k"] = std::to_string(p.baseline_options.knn_k);
        values_["eval.knn_bank"] = std::to_string(p.baseline_options.knn_bank);
        values_["eval.corp_features"] = std::to_string(p.baseline_options.corp_features);
        values_["eval.corp_bank"] = std::to_string(p.baseline_options.corp_bank);
        values_["eval.odin_temperature"] = format_double(p.baseline_options.odin_temperature);
        values_["eval.baseline_dice_p"] = format_double(p.baseline_options.dice_p);
        values_["run.threads"] = "1";
        known_ = values_;
        known_["run.seed"] = "";
    }

    static bool is_known(const std::string& key) {
        static const RunConfig defaults;
        return defaults.known_.count(key) > 0;
    }

    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : known_) out.push_back(k);
        return out;
    }

    void set(const std::string& key, const std::string& value) {
        if (!known_.count(key)) throw ConfigError("unknown configuration key '" + key + "'");
        values_[key] = value;
    }

    /// "section.key=value" as given to --set.
    void set_assignment(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
        set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    const std::string& get(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) {
            if (key == "run.seed") throw ConfigError("a seed is required (--seed or run.seed)");
            throw ConfigError("configuration key '" + key + "' has no value");
        }
        return it->second;
    }

    double get_double(const std::string& key) const { return parse_number(get(key), key.c_str()); }
    std::uint64_t get_unsigned(const std::string& key) const { return parse_unsigned(get(key), key.c_str()); }
    std::size_t get_size(const std::string& key) const { return static_cast<std::size_t>(get_unsigned(key)); }
    bool get_bool(const std::string& key) const {
        const std::string& v = get(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("invalid boolean for '" + key + "': '" + v + "'");
    }

    std::uint64_t seed() const { return get_unsigned("run.seed"); }

    /// Reads `section.key = value` lines; '#' starts a comment.
    void load_text(const std::string& text, const std::string& source = "config") {
        std::istringstream is(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'section.key = value'");
            }
            const std::string key = trim(line.substr(0, eq));
            if (!known_.count(key)) {
                throw ConfigError(source + ":" + std::to_string(lineno) + ": unknown configuration key '" + key + "'");
            }
            values_[key] = trim(line.substr(eq + 1));
        }
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        load_text(ss.str(), path);
    }

    /// Effective configuration in key order.
    std::vector<std::pair<std::string, std::string>> echo() const {
        return {values_.begin(), values_.end()};
    }

    SyntheticSpec synthetic_spec() const {
        SyntheticSpec s;
        s.num_classes = get_size("data.num_classes");
        s.input_dim = get_size("data.input_dim");
        s.per_class_mean_scale = get_double("data.mean_scale");
        s.noise_sigma = get_double("data.noise_sigma");
        s.samples_per_class = get_size("data.samples_per_class");
        s.ood_scale_factor = get_double("data.ood_scale_factor");
        s.seed = derive_seed(seed(), 1);
        s.validate();
        return s;
    }

    std::vector<OodMode> ood_modes() const {
        std::vector<OodMode> out;
        for (const auto& m : split_list(get("data.ood_modes"))) out.push_back(parse_ood_mode(m));
        if (out.empty()) throw ConfigError("data.ood_modes is empty");
        return out;
    }

    std::vector<std::size_t> hidden() const {
        std::vector<std::size_t> out;
        for (const auto& h : split_list(get("model.hidden"))) {
            const auto v = static_cast<std::size_t>(parse_unsigned(h, "model.hidden"));
            if (v == 0) throw ConfigError("model.hidden widths must be positive");
            out.push_back(v);
        }
        return out;
    }

    LayerKind activation() const {
        const std::string& a = get("model.activation");
        if (a == "relu") return LayerKind::relu;
        if (a == "tanh") return LayerKind::tanh;
        throw ConfigError("model.activation must be relu or tanh, got '" + a + "'");
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.epochs = get_size("train.epochs");
        t.batch_size = get_size("train.batch_size");
        t.lr = get_double("train.lr");
        t.momentum = get_double("train.momentum");
        t.weight_decay = get_double("train.weight_decay");
        t.seed = derive_seed(seed(), 3);
        return t;
    }

    GradPcaConfig detector_config() const {
        const GradPcaVariant variant = parse_variant(get("detector.variant"));
        GradPcaConfig c = GradPcaConfig::defaults(variant);
        if (get("detector.epsilon") != "auto") c.epsilon = get_double("detector.epsilon");
        const std::string& agg = get("detector.aggregation");
        if (agg == "none") c.aggregation.reset();
        else if (agg != "auto") c.aggregation = parse_aggregation(agg);
        const std::string& dp = get("detector.dice_p");
        if (dp == "none") c.dice_p.reset();
        else c.dice_p = get_double("detector.dice_p");
        c.threshold_delta = get_double("detector.delta");
        c.centering = parse_centering(get("detector.centering"));
        c.batch_cap = get_size("detector.batch_cap");
        const std::string& subset = get("detector.subset");
        c.subset = (subset.empty() || subset == "head") ? std::vector<std::string>{} : split_list(subset);
        c.validate();
        return c;
    }

    BaselineOptions baseline_options() const {
        BaselineOptions b;
        b.knn_k = get_size("eval.knn_k");
        b.knn_bank = get_size("eval.knn_bank");
        b.corp_features = get_size("eval.corp_features");
        b.corp_bank = get_size("eval.corp_bank");
        b.odin_temperature = get_double("eval.odin_temperature");
        b.dice_p = get_double("eval.baseline_dice_p");
        b.seed = derive_seed(seed(), 5);
        return b;
    }

    PipelineConfig pipeline() const {
        PipelineConfig p;
        p.seed = seed();
        p.data = synthetic_spec();
        p.ood_modes = ood_modes();
        p.hidden = hidden();
        p.activation = activation();
        p.train = train_config();
        p.label_noise = get_double("data.label_noise");
        p.detector = detector_config();
        p.baselines = split_list(get("eval.baselines"));
        p.baselines.erase(std::remove(p.baselines.begin(), p.baselines.end(), std::string()), p.baselines.end());
        p.baseline_options = baseline_options();
        p.tpr = get_double("eval.tpr");
        p.threads = threads();
        return p;
    }

    std::size_t threads() const { return get_size("run.threads"); }
    bool timing() const { return get_bool("eval.timing"); }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
    std::map<std::string, std::string> known_;
};

}  // namespace spod
