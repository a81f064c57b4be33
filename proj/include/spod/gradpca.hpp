#pragma once

// GradPCA: PCA of gradient class means through the C x C dual matrix, scored by
// the cosine between a centered test gradient and its projection onto the
// retained principal subspace. Also provides the batch, GradOrth, per-head
// (vec) and DICE-sparsified variants.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spod/class_means.hpp"
#include "spod/data.hpp"
#include "spod/io.hpp"
#include "spod/linalg.hpp"
#include "spod/nn.hpp"
#include "spod/parallel.hpp"

namespace spod {

enum class GradPcaVariant { class_means, batch, gradorth, vec };

inline const char* to_string(GradPcaVariant v) {
    switch (v) {
        case GradPcaVariant::class_means: return "means";
        case GradPcaVariant::batch: return "batch";
        case GradPcaVariant::gradorth: return "gradorth";
        case GradPcaVariant::vec: return "vec";
    }
    return "?";
}

inline GradPcaVariant parse_variant(const std::string& s) {
    if (s == "means" || s == "class_means") return GradPcaVariant::class_means;
    if (s == "batch") return GradPcaVariant::batch;
    if (s == "gradorth") return GradPcaVariant::gradorth;
    if (s == "vec") return GradPcaVariant::vec;
    throw ConfigError("unknown GradPCA variant '" + s + "' (expected means, batch, gradorth or vec)");
}

enum class VecReducer { max, mean };

inline VecReducer parse_reducer(const std::string& s) {
    if (s == "max") return VecReducer::max;
    if (s == "mean") return VecReducer::mean;
    throw ConfigError("unknown reducer '" + s + "' (expected max or mean)");
}

struct GradPcaConfig {
    GradPcaVariant variant = GradPcaVariant::class_means;
    /// Parameter groups to differentiate; empty selects the logit layer.
    std::vector<std::string> subset;
    double epsilon = 0.99;
    /// Scalar aggregation of the logits. Must be empty for the vec variant.
    std::optional<AggregationMode> aggregation = AggregationMode::max_logit();
    std::optional<double> dice_p;
    double threshold_delta = 0.5;
    CenteringMode centering = CenteringMode::class_weighted;
    std::size_t batch_cap = 4096;  ///< batch variant memory guard (max gradients held)
    std::size_t stream_batch = 256;

    static constexpr double default_epsilon = 0.99;
    static constexpr double default_batch_epsilon = 0.97;
    static constexpr double default_dice_p = 0.8;

    /// Published defaults for each variant.
    static GradPcaConfig defaults(GradPcaVariant v) {
        GradPcaConfig c;
        c.variant = v;
        if (v == GradPcaVariant::batch) c.epsilon = default_batch_epsilon;
        if (v == GradPcaVariant::vec) c.aggregation.reset();
        return c;
    }

    /// The +DICE variant: class means with magnitude sparsification.
    static GradPcaConfig dice(double p = default_dice_p) {
        GradPcaConfig c;
        c.dice_p = p;
        return c;
    }

    void validate() const {
        if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in (0, 1]");
        if (!(threshold_delta > 0.0 && threshold_delta <= 1.0)) throw ConfigError("delta must lie in (0, 1]");
        if (dice_p && !(*dice_p >= 0.0 && *dice_p < 1.0)) throw ConfigError("dice p must lie in [0, 1)");
        if (variant == GradPcaVariant::vec && aggregation) {
            throw ConfigError("the vec variant scores each head separately and forbids an aggregation mode");
        }
        if (variant != GradPcaVariant::vec && !aggregation && variant != GradPcaVariant::gradorth) {
            throw ConfigError("variant '" + std::string(to_string(variant)) + "' needs an aggregation mode");
        }
        if (variant == GradPcaVariant::gradorth && dice_p) {
            throw ConfigError("DICE sparsification is not defined for the gradorth variant");
        }
        if (stream_batch == 0) throw ConfigError("stream batch size must be positive");
    }

    ParamSubset resolve_subset(const Network& net) const {
        if (subset.empty() || (subset.size() == 1 && subset[0] == "head")) return ParamSubset::head(net);
        if (subset.size() == 1 && subset[0] == "all") return ParamSubset::all(net);
        return ParamSubset(net, subset);
    }

    /// Flat key=value echo, one per line, stable order.
    std::string echo() const {
        std::ostringstream os;
        os.precision(17);
        os << "variant=" << to_string(variant) << '\n';
        os << "epsilon=" << epsilon << '\n';
        os << "aggregation=" << (aggregation ? to_string(*aggregation) : std::string("none")) << '\n';
        os << "dice_p=";
        if (dice_p) os << *dice_p; else os << "none";
        os << '\n';
        os << "delta=" << threshold_delta << '\n';
        os << "centering=" << to_string(centering) << '\n';
        os << "batch_cap=" << batch_cap << '\n';
        os << "subset=";
        for (std::size_t i = 0; i < subset.size(); ++i) os << (i ? "," : "") << subset[i];
        os << '\n';
        return os.str();
    }

    static GradPcaConfig from_echo(const std::string& text) {
        std::map<std::string, std::string> kv;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
        auto get = [&](const std::string& k) {
            auto it = kv.find(k);
            if (it == kv.end()) throw IoError("detector state: config echo lacks '" + k + "'");
            return it->second;
        };
        GradPcaConfig c;
        c.variant = parse_variant(get("variant"));
        c.epsilon = std::stod(get("epsilon"));
        const std::string agg = get("aggregation");
        if (agg == "none") c.aggregation.reset(); else c.aggregation = parse_aggregation(agg);
        const std::string dp = get("dice_p");
        if (dp == "none") c.dice_p.reset(); else c.dice_p = std::stod(dp);
        c.threshold_delta = std::stod(get("delta"));
        c.centering = parse_centering(get("centering"));
        c.batch_cap = std::stoull(get("batch_cap"));
        c.subset.clear();
        std::stringstream ss(get("subset"));
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (!tok.empty()) c.subset.push_back(tok);
        }
        return c;
    }
};

/// Which per-sample vector is compared against the subspace.
enum class GradientTarget : std::uint8_t {
    output = 0,        ///< gradient of the aggregated (or single-head) logit
    uniform_loss = 1,  ///< cross-entropy gradient against the uniform label
};

/// Fitted GradPCA state: orthonormal components U_k (P_sub x k), the
/// retained eigenvalues, the centering vector and the configuration used.
struct PrincipalSubspace {
    Matrix components;
    Vector eigenvalues;
    Vector global_mean;
    double retained_fraction = 0.0;
    Vector spectrum;  ///< full spectrum after zeroing (diagnostics, epsilon sweeps)
    GradPcaConfig config;
    AggregationMode head = AggregationMode::max_logit();
    GradientTarget target = GradientTarget::output;
    std::optional<Vector> mask;  ///< DICE 0/1 mask over the subset

    std::size_t k() const { return static_cast<std::size_t>(components.cols()); }
    std::size_t dim() const { return static_cast<std::size_t>(components.rows()); }
};

struct Score {
    double value = 0.0;
};

// ---------------------------------------------------------------------------
// DICE sparsification mask.

/// 0/1 mask over `subset` that zeroes the lowest-|w| fraction p of every
/// weight matrix in the subset (biases are kept). At least one weight per
/// matrix survives.
inline Vector dice_mask(const Network& net, const ParamSubset& subset, double p) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dice p must lie in [0, 1)");
    Vector mask = Vector::Ones(static_cast<Eigen::Index>(subset.dim()));
    for (std::size_t g = 0; g < subset.groups().size(); ++g) {
        const std::size_t layer = subset.layers()[g];
        const LayerSpec& l = net.layers()[layer];
        const std::size_t n = l.in_dim * l.out_dim;
        const std::size_t offset = subset.ranges()[g].offset;
        const std::size_t local = subset.local_offsets()[g];
        const auto drop = std::min<std::size_t>(n - 1, static_cast<std::size_t>(std::llround(p * static_cast<double>(n))));
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return std::abs(net.params()[static_cast<Eigen::Index>(offset + a)]) <
                   std::abs(net.params()[static_cast<Eigen::Index>(offset + b)]);
        });
        for (std::size_t i = 0; i < drop; ++i) mask[static_cast<Eigen::Index>(local + idx[i])] = 0.0;
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Offline stage.

/// Class-mean gradients accumulated over per-class streams.
inline ClassMeanMatrix fit_class_means(const Network& net, const LabeledDataset& train, const GradPcaConfig& cfg) {
    cfg.validate();
    if (!cfg.aggregation) throw ConfigError("fit_class_means needs an aggregation mode");
    return accumulate_class_means(net, train, *cfg.aggregation, cfg.resolve_subset(net), cfg.centering,
                                  cfg.stream_batch);
}

/// PCA of the centered class means through the C x C dual matrix. `mask`,
/// when present, is applied to the class means before centering.
inline PrincipalSubspace fit_from_class_means(const ClassMeanMatrix& means, const GradPcaConfig& cfg,
                                              const std::optional<Vector>& mask = std::nullopt) {
    cfg.validate();
    if (means.num_classes() < 2) throw ValidationError("GradPCA needs at least two classes");
    Matrix g = means.means;
    Vector gbar = means.global_mean;
    if (mask) {
        if (mask->size() != g.rows()) throw DimensionError("DICE mask does not match the gradient dimension");
        g = mask->asDiagonal() * g;
        gbar = gbar.cwiseProduct(*mask);
    }
    const Matrix centered = g.colwise() - gbar;
    const double reference = g.colwise().squaredNorm().maxCoeff();
    DualPca pca = dual_pca(centered, cfg.epsilon, reference);
    PrincipalSubspace s;
    s.components = std::move(pca.components);
    s.eigenvalues = std::move(pca.eigenvalues);
    s.spectrum = std::move(pca.spectrum);
    s.retained_fraction = pca.retained_fraction;
    s.global_mean = gbar;
    s.config = cfg;
    if (cfg.aggregation) s.head = *cfg.aggregation;
    s.mask = mask;
    return s;
}

inline PrincipalSubspace fit(const Network& net, const LabeledDataset& train, const GradPcaConfig& cfg) {
    cfg.validate();
    if (cfg.variant != GradPcaVariant::class_means) {
        throw ConfigError("fit() implements the class-means variant; use the variant-specific fit");
    }
    if (train.num_classes < 2) throw ValidationError("GradPCA needs at least two classes");
    const ParamSubset subset = cfg.resolve_subset(net);
    std::optional<Vector> mask;
    if (cfg.dice_p) mask = dice_mask(net, subset, *cfg.dice_p);
    return fit_from_class_means(fit_class_means(net, train, cfg), cfg, mask);
}

/// Batch variant: PCA of N centered per-sample gradients via the N x N dual
/// (the empirical NTK of the centered gradients).
inline PrincipalSubspace fit_batch_variant(const Network& net, const LabeledDataset& batch, const GradPcaConfig& cfg) {
    cfg.validate();
    if (cfg.variant != GradPcaVariant::batch) throw ConfigError("fit_batch_variant needs variant=batch");
    if (batch.size() < 2) throw ValidationError("batch variant needs at least two samples");
    if (batch.size() > cfg.batch_cap) {
        throw CapacityError("batch of " + std::to_string(batch.size()) + " gradients exceeds the cap of " +
                            std::to_string(cfg.batch_cap));
    }
    const ParamSubset subset = cfg.resolve_subset(net);
    std::optional<Vector> mask;
    if (cfg.dice_p) mask = dice_mask(net, subset, *cfg.dice_p);
    Matrix f = per_sample_gradients(net, batch.inputs, *cfg.aggregation, subset).transpose();
    if (mask) f = mask->asDiagonal() * f;
    const Vector mean = f.rowwise().mean();
    const Matrix centered = f.colwise() - mean;
    DualPca pca = dual_pca(centered, cfg.epsilon, f.colwise().squaredNorm().maxCoeff());
    PrincipalSubspace s;
    s.components = std::move(pca.components);
    s.eigenvalues = std::move(pca.eigenvalues);
    s.spectrum = std::move(pca.spectrum);
    s.retained_fraction = pca.retained_fraction;
    s.global_mean = mean;
    s.config = cfg;
    s.head = *cfg.aggregation;
    s.mask = mask;
    return s;
}

/// Principal directions of the uncentered activation second-moment matrix
/// (1/N) A^T A for activations A (N x d), truncated at `epsilon`.
struct ActivationDirections {
    Matrix directions;  ///< d x k, orthonormal
    Vector eigenvalues;
    Vector spectrum;
    double retained_fraction = 0.0;
};

inline ActivationDirections activation_directions(const RowMatrix& acts, double epsilon) {
    if (acts.rows() == 0) throw ValidationError("activation_directions: no samples");
    const Matrix cols = acts.transpose() / std::sqrt(static_cast<double>(acts.rows()));
    ActivationDirections out;
    if (acts.rows() <= acts.cols()) {
        DualPca pca = dual_pca(cols, epsilon);
        out.directions = std::move(pca.components);
        out.eigenvalues = std::move(pca.eigenvalues);
        out.spectrum = std::move(pca.spectrum);
        out.retained_fraction = pca.retained_fraction;
        return out;
    }
    const SymmetricEigen eig = eigh_descending(cols * cols.transpose());
    const double top = eig.values(0);
    if (!(top > 0.0)) throw DegenerateFitError("activations are identically zero");
    Vector spectrum = eig.values;
    for (Eigen::Index i = 0; i < spectrum.size(); ++i) {
        if (spectrum(i) < 1e-12 * top) spectrum(i) = 0.0;
    }
    const auto k = static_cast<Eigen::Index>(select_rank(spectrum, epsilon));
    out.directions = eig.vectors.leftCols(k);
    out.eigenvalues = spectrum.head(k);
    out.spectrum = spectrum;
    out.retained_fraction = out.eigenvalues.sum() / spectrum.sum();
    return out;
}

/// GradOrth-style variant on the logit layer: principal directions of the
/// penultimate activations (augmented with a constant 1 for the bias) are
/// transferred to gradient space as {e_c (x) u : c < C, u retained}, since the
/// logit-layer gradient of any scalar of the logits is delta (x) [a; 1].
/// Scoring uses the cross-entropy gradient against the uniform label.
inline PrincipalSubspace fit_gradorth_variant(const Network& net, const LabeledDataset& train,
                                              const GradPcaConfig& cfg) {
    cfg.validate();
    if (cfg.variant != GradPcaVariant::gradorth) throw ConfigError("fit_gradorth_variant needs variant=gradorth");
    const ParamSubset subset = cfg.resolve_subset(net);
    if (subset.groups().size() != 1 || subset.groups()[0] != net.head_group()) {
        throw ConfigError("gradorth variant operates on the logit layer '" + net.head_group() + "' only");
    }
    if (train.size() == 0) throw ValidationError("gradorth variant needs training samples");
    const RowMatrix acts = penultimate_batch(net, train.inputs);
    RowMatrix aug(acts.rows(), acts.cols() + 1);
    aug.leftCols(acts.cols()) = acts;
    aug.col(acts.cols()).setOnes();
    const ActivationDirections dirs = activation_directions(aug, cfg.epsilon);

    const auto in = acts.cols();
    const auto c = static_cast<Eigen::Index>(net.num_classes());
    const auto k = dirs.directions.cols();
    PrincipalSubspace s;
    s.components = Matrix::Zero(static_cast<Eigen::Index>(subset.dim()), k * c);
    s.eigenvalues.resize(k * c);
    for (Eigen::Index j = 0; j < k; ++j) {
        for (Eigen::Index h = 0; h < c; ++h) {
            const Eigen::Index col = j * c + h;
            s.components.block(h * in, col, in, 1) = dirs.directions.col(j).head(in);
            s.components(c * in + h, col) = dirs.directions(in, j);
            s.eigenvalues(col) = dirs.eigenvalues(j);
        }
    }
    s.spectrum = dirs.spectrum;
    s.retained_fraction = dirs.retained_fraction;
    s.global_mean = Vector::Zero(static_cast<Eigen::Index>(subset.dim()));
    s.config = cfg;
    s.target = GradientTarget::uniform_loss;
    return s;
}

/// Vec variant: one class-means fit per output head, no aggregation.
inline std::vector<PrincipalSubspace> fit_vec_variant(const Network& net, const LabeledDataset& train,
                                                      const GradPcaConfig& cfg) {
    cfg.validate();
    if (cfg.variant != GradPcaVariant::vec) throw ConfigError("fit_vec_variant needs variant=vec");
    const ParamSubset subset = cfg.resolve_subset(net);
    std::optional<Vector> mask;
    if (cfg.dice_p) mask = dice_mask(net, subset, *cfg.dice_p);
    std::vector<PrincipalSubspace> states;
    for (std::size_t c = 0; c < net.num_classes(); ++c) {
        GradPcaConfig head_cfg = cfg;
        head_cfg.variant = GradPcaVariant::class_means;
        head_cfg.aggregation = AggregationMode::single_head(c);
        const ClassMeanMatrix means = accumulate_class_means(net, train, *head_cfg.aggregation, subset,
                                                             cfg.centering, cfg.stream_batch);
        PrincipalSubspace s = fit_from_class_means(means, head_cfg, mask);
        s.config = cfg;
        s.head = AggregationMode::single_head(c);
        states.push_back(std::move(s));
    }
    return states;
}

/// Dispatches on cfg.variant; non-vec variants yield a single state.
inline std::vector<PrincipalSubspace> fit_variant(const Network& net, const LabeledDataset& train,
                                                  const GradPcaConfig& cfg) {
    switch (cfg.variant) {
        case GradPcaVariant::class_means: return {fit(net, train, cfg)};
        case GradPcaVariant::batch: return {fit_batch_variant(net, train, cfg)};
        case GradPcaVariant::gradorth: return {fit_gradorth_variant(net, train, cfg)};
        case GradPcaVariant::vec: return fit_vec_variant(net, train, cfg);
    }
    throw ConfigError("unknown variant");
}

// ---------------------------------------------------------------------------
// Online stage.

/// cos of the angle between v and its projection onto span(U):
/// ||U U^T v|| / ||v|| for orthonormal U.
inline double projection_cosine(const Matrix& components, const Vector& v) {
    const double norm = v.norm();
    if (!(norm >= 1e-12)) {
        throw ZeroGradientError("centered gradient norm below 1e-12; score undefined");
    }
    const double proj = (components.transpose() * v).norm();
    return std::clamp(proj / norm, 0.0, 1.0);
}

/// Score of an already computed (unmasked, uncentered) gradient.
inline Score score_gradient(const PrincipalSubspace& state, const Vector& gradient) {
    if (static_cast<std::size_t>(gradient.size()) != state.dim()) {
        throw DimensionError("gradient has " + std::to_string(gradient.size()) + " entries, state expects " +
                             std::to_string(state.dim()));
    }
    Vector g = state.mask ? Vector(gradient.cwiseProduct(*state.mask)) : gradient;
    g -= state.global_mean;
    return {projection_cosine(state.components, g)};
}

/// The per-sample vector a state compares against its subspace.
inline Vector state_gradient(const PrincipalSubspace& state, const Network& net, const Eigen::Ref<const Vector>& x,
                             const ParamSubset& subset) {
    if (state.target == GradientTarget::uniform_loss) {
        const Vector uniform = Vector::Constant(static_cast<Eigen::Index>(net.num_classes()),
                                                1.0 / static_cast<double>(net.num_classes()));
        return per_sample_loss_gradient(net, x, uniform, subset);
    }
    return per_sample_gradient(net, x, state.head, subset);
}

inline Score score(const PrincipalSubspace& state, const Network& net, const Eigen::Ref<const Vector>& x) {
    const ParamSubset subset = state.config.resolve_subset(net);
    if (subset.dim() != state.dim()) {
        throw ConfigError("state was fitted on a parameter subset of dimension " + std::to_string(state.dim()) +
                          ", network subset has " + std::to_string(subset.dim()));
    }
    return score_gradient(state, state_gradient(state, net, x, subset));
}

/// As above, checking that `cfg` matches the configuration the state was fitted with.
inline Score score(const PrincipalSubspace& state, const Network& net, const Eigen::Ref<const Vector>& x,
                   const GradPcaConfig& cfg) {
    if (cfg.subset != state.config.subset || cfg.aggregation != state.config.aggregation ||
        cfg.variant != state.config.variant) {
        throw ConfigError("scoring configuration differs from the fitted state (subset/aggregation/variant)");
    }
    return score(state, net, x);
}

/// 1 (OOD) iff the score falls below delta.
inline int detect(const PrincipalSubspace& state, const Network& net, const Eigen::Ref<const Vector>& x,
                  double delta) {
    if (!(delta > 0.0 && delta <= 1.0)) throw ConfigError("delta must lie in (0, 1]");
    return score(state, net, x).value < delta ? 1 : 0;
}

inline int detect(const PrincipalSubspace& state, const Network& net, const Eigen::Ref<const Vector>& x) {
    return detect(state, net, x, state.config.threshold_delta);
}

/// Threshold accepting a `tpr` fraction of the given ID scores.
inline double calibrate_delta(const std::vector<double>& id_scores, double tpr = 0.95) {
    if (id_scores.empty()) throw ValidationError("calibrate_delta: no ID scores");
    std::vector<double> s = id_scores;
    std::sort(s.begin(), s.end());
    const std::size_t reject = static_cast<std::size_t>(std::floor((1.0 - tpr) * static_cast<double>(s.size()) + 1e-9));
    const double delta = s[std::min(reject, s.size() - 1)];
    return std::clamp(delta, std::nextafter(0.0, 1.0), 1.0);
}

inline std::vector<double> score_batch(const PrincipalSubspace& state, const Network& net, const RowMatrix& x,
                                       std::size_t threads = 1) {
    const ParamSubset subset = state.config.resolve_subset(net);
    std::vector<double> out(static_cast<std::size_t>(x.rows()));
    parallel_for(out.size(), threads, [&](std::size_t i) {
        out[i] = score_gradient(state, state_gradient(state, net, x.row(static_cast<Eigen::Index>(i)).transpose(),
                                                      subset))
                     .value;
    });
    return out;
}

inline double reduce_scores(const std::vector<double>& head_scores, VecReducer reducer) {
    if (head_scores.empty()) throw ConfigError("no head scores to reduce");
    if (reducer == VecReducer::max) return *std::max_element(head_scores.begin(), head_scores.end());
    return std::accumulate(head_scores.begin(), head_scores.end(), 0.0) / static_cast<double>(head_scores.size());
}

/// Per-head scores reduced post hoc.
inline Score score_vec(const std::vector<PrincipalSubspace>& states, const Network& net,
                       const Eigen::Ref<const Vector>& x, VecReducer reducer = VecReducer::max) {
    if (states.size() != net.num_classes()) {
        throw ConfigError("vec scoring needs one fitted state per head: have " + std::to_string(states.size()) +
                          ", network has " + std::to_string(net.num_classes()) + " heads");
    }
    std::vector<double> per_head;
    per_head.reserve(states.size());
    for (std::size_t c = 0; c < states.size(); ++c) {
        if (states[c].head != AggregationMode::single_head(c)) {
            throw ConfigError("missing state for head " + std::to_string(c));
        }
        per_head.push_back(score(states[c], net, x).value);
    }
    return {reduce_scores(per_head, reducer)};
}

// ---------------------------------------------------------------------------
// Detector state file: "SPPC0001", config echo, subset descriptor, state count,
// then per state: head, target, P, k, retained fraction, g_bar, sigma,
// U (column-major), optional DICE mask.

inline void write_states(const std::vector<PrincipalSubspace>& states, std::ostream& out) {
    if (states.empty()) throw ValidationError("no detector state to write");
    io::Writer w(out);
    w.magic("SPPC0001");
    w.string(states.front().config.echo());
    std::string subset;
    for (std::size_t i = 0; i < states.front().config.subset.size(); ++i) {
        subset += (i ? "," : "") + states.front().config.subset[i];
    }
    w.string(subset);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(states.size()));
    for (const PrincipalSubspace& s : states) {
        w.string(to_string(s.head));
        w.put<std::uint8_t>(static_cast<std::uint8_t>(s.target));
        w.put<std::uint64_t>(s.dim());
        w.put<std::uint32_t>(static_cast<std::uint32_t>(s.k()));
        w.put<double>(s.retained_fraction);
        w.doubles(s.global_mean.data(), s.dim());
        w.doubles(s.eigenvalues.data(), s.k());
        w.put<std::uint32_t>(static_cast<std::uint32_t>(s.spectrum.size()));
        w.doubles(s.spectrum.data(), static_cast<std::size_t>(s.spectrum.size()));
        w.doubles(s.components.data(), s.dim() * s.k());
        w.put<std::uint8_t>(s.mask ? 1 : 0);
        if (s.mask) w.doubles(s.mask->data(), s.dim());
    }
    w.check();
}

inline std::vector<PrincipalSubspace> read_states(std::istream& in, const std::string& source = "state") {
    io::Reader r(in, source);
    r.expect_magic("SPPC0001");
    const GradPcaConfig cfg = GradPcaConfig::from_echo(r.string());
    (void)r.string();  // subset descriptor, duplicated in the echo
    const auto n = r.get<std::uint32_t>();
    if (n == 0 || n > 100000) throw IoError(source + ": implausible state count");
    std::vector<PrincipalSubspace> states;
    for (std::uint32_t i = 0; i < n; ++i) {
        PrincipalSubspace s;
        s.config = cfg;
        s.head = parse_aggregation(r.string());
        const auto target = r.get<std::uint8_t>();
        if (target > 1) throw IoError(source + ": unknown gradient target");
        s.target = static_cast<GradientTarget>(target);
        const auto p = static_cast<Eigen::Index>(r.get<std::uint64_t>());
        const auto k = static_cast<Eigen::Index>(r.get<std::uint32_t>());
        if (p <= 0 || k < 0 || k > p) throw IoError(source + ": implausible dimensions");
        s.retained_fraction = r.get<double>();
        s.global_mean.resize(p);
        r.doubles(s.global_mean.data(), static_cast<std::size_t>(p));
        s.eigenvalues.resize(k);
        r.doubles(s.eigenvalues.data(), static_cast<std::size_t>(k));
        const auto ns = static_cast<Eigen::Index>(r.get<std::uint32_t>());
        s.spectrum.resize(ns);
        r.doubles(s.spectrum.data(), static_cast<std::size_t>(ns));
        s.components.resize(p, k);
        r.doubles(s.components.data(), static_cast<std::size_t>(p * k));
        if (r.get<std::uint8_t>()) {
            Vector mask(p);
            r.doubles(mask.data(), static_cast<std::size_t>(p));
            s.mask = std::move(mask);
        }
        states.push_back(std::move(s));
    }
    r.expect_end();
    return states;
}

inline void save_states(const std::vector<PrincipalSubspace>& states, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    write_states(states, out);
}

inline std::vector<PrincipalSubspace> load_states(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return read_states(in, path);
}

}  // namespace spod
