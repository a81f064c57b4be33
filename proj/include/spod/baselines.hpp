#pragma once

// Reference OOD detectors on logits and penultimate features. Every score is
// oriented so that larger means more in-distribution.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "spod/errors.hpp"
#include "spod/linalg.hpp"
#include "spod/nn.hpp"

namespace spod::baselines {

struct Defaults {
    static constexpr double odin_temperature = 1000.0;
    static constexpr double energy_temperature = 1.0;
    static constexpr double dice_p = 0.7;
    static constexpr std::size_t knn_k = 10;
    static constexpr double react_quantile = 0.9;
    static constexpr double revisited_pca_variance = 0.9;
    static constexpr std::size_t corp_features = 4096;
    static constexpr double corp_gamma = 0.5;
    static constexpr double corp_variance = 0.9;
};

inline void require_dim(const Eigen::Ref<const Vector>& z, Eigen::Index expected, const char* who) {
    if (z.size() != expected) {
        throw ValidationError(std::string(who) + ": feature dimension " + std::to_string(z.size()) +
                              " does not match fitted dimension " + std::to_string(expected));
    }
}

// ---------------------------------------------------------------------------
// Logit scores.

inline double max_logit(const Eigen::Ref<const Vector>& logits) { return logits.maxCoeff(); }

inline double msp(const Eigen::Ref<const Vector>& logits) { return softmax(logits).maxCoeff(); }

/// Max softmax probability at temperature T (no input perturbation).
inline double odin(const Eigen::Ref<const Vector>& logits, double temperature = Defaults::odin_temperature) {
    if (!(temperature > 0.0)) throw ValidationError("ODIN temperature must be positive");
    return softmax(logits, temperature).maxCoeff();
}

/// T log sum_c exp(f^c / T).
inline double energy(const Eigen::Ref<const Vector>& logits, double temperature = Defaults::energy_temperature) {
    if (!(temperature > 0.0)) throw ValidationError("energy temperature must be positive");
    return temperature * log_sum_exp(logits / temperature);
}

// ---------------------------------------------------------------------------
// DICE: magnitude-sparsified logit layer, energy score.

struct DiceState {
    RowMatrix weight;  ///< masked logit-layer weight, C x d
    Vector bias;
    double p = Defaults::dice_p;
};

/// Zeroes the lowest-|w| fraction p of logit-layer weights (at least one survives).
inline DiceState dice_fit(const Network& net, double p = Defaults::dice_p) {
    if (!(p >= 0.0 && p < 1.0)) throw ValidationError("DICE p must lie in [0, 1)");
    const std::size_t last = net.layers().size() - 1;
    DiceState s;
    s.p = p;
    s.weight = net.weight(last);
    s.bias = net.bias(last);
    const auto n = static_cast<std::size_t>(s.weight.size());
    const auto drop = std::min<std::size_t>(n - 1, static_cast<std::size_t>(std::llround(p * static_cast<double>(n))));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(s.weight.data()[a]) < std::abs(s.weight.data()[b]);
    });
    for (std::size_t i = 0; i < drop; ++i) s.weight.data()[idx[i]] = 0.0;
    return s;
}

inline Vector dice_logits(const DiceState& s, const Eigen::Ref<const Vector>& features) {
    require_dim(features, s.weight.cols(), "DICE");
    return s.weight * features + s.bias;
}

inline double dice_score(const DiceState& s, const Eigen::Ref<const Vector>& features,
                         double temperature = Defaults::energy_temperature) {
    return energy(dice_logits(s, features), temperature);
}

// ---------------------------------------------------------------------------
// Mahalanobis with class means and a shared (ridge-regularised) covariance.

struct MahalanobisState {
    RowMatrix means;  ///< C x d
    Matrix precision;
};

inline MahalanobisState mahalanobis_fit(const RowMatrix& features, const std::vector<std::uint32_t>& labels,
                                        std::size_t num_classes) {
    if (static_cast<std::size_t>(features.rows()) != labels.size() || features.rows() == 0) {
        throw ValidationError("Mahalanobis: features and labels must be nonempty and aligned");
    }
    const Eigen::Index d = features.cols();
    MahalanobisState s;
    s.means = RowMatrix::Zero(static_cast<Eigen::Index>(num_classes), d);
    std::vector<std::size_t> counts(num_classes, 0);
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        const auto y = labels[static_cast<std::size_t>(i)];
        if (y >= num_classes) throw ValidationError("Mahalanobis: label out of range");
        s.means.row(y) += features.row(i);
        ++counts[y];
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0) throw EmptyClassError("Mahalanobis: class " + std::to_string(c) + " has no samples");
        s.means.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(counts[c]);
    }
    Matrix cov = Matrix::Zero(d, d);
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        const Vector r = (features.row(i) - s.means.row(labels[static_cast<std::size_t>(i)])).transpose();
        cov.noalias() += r * r.transpose();
    }
    cov /= static_cast<double>(features.rows());
    const double ridge = 1e-6 * std::max(cov.trace(), 1e-12) / static_cast<double>(d);
    cov.diagonal().array() += ridge;
    s.precision = cov.ldlt().solve(Matrix::Identity(d, d));
    s.precision = 0.5 * (s.precision + s.precision.transpose()).eval();
    return s;
}

/// Smallest class-conditional squared Mahalanobis distance.
inline double mahalanobis_min_distance(const MahalanobisState& s, const Eigen::Ref<const Vector>& z) {
    require_dim(z, s.means.cols(), "Mahalanobis");
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < s.means.rows(); ++c) {
        const Vector r = z - s.means.row(c).transpose();
        best = std::min(best, r.dot(s.precision * r));
    }
    return best;
}

inline double mahalanobis_score(const MahalanobisState& s, const Eigen::Ref<const Vector>& z) {
    return -mahalanobis_min_distance(s, z);
}

// ---------------------------------------------------------------------------
// KNN on L2-normalised features.

struct KnnState {
    RowMatrix bank;  ///< normalised rows
    std::size_t k = Defaults::knn_k;
};

inline Vector l2_normalized(const Eigen::Ref<const Vector>& z) {
    const double n = z.norm();
    return n > 0.0 ? Vector(z / n) : Vector(z);
}

/// `max_bank` > 0 subsamples the bank deterministically with `seed`.
inline KnnState knn_fit(const RowMatrix& features, std::size_t k = Defaults::knn_k, std::size_t max_bank = 0,
                        std::uint64_t seed = 0) {
    if (k == 0) throw ValidationError("KNN: k must be positive");
    std::vector<std::size_t> rows(static_cast<std::size_t>(features.rows()));
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    if (max_bank > 0 && rows.size() > max_bank) {
        std::mt19937_64 rng(seed);
        std::shuffle(rows.begin(), rows.end(), rng);
        rows.resize(max_bank);
        std::sort(rows.begin(), rows.end());
    }
    if (k > rows.size()) {
        throw ValidationError("KNN: k=" + std::to_string(k) + " exceeds bank size " + std::to_string(rows.size()));
    }
    KnnState s;
    s.k = k;
    s.bank.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        s.bank.row(static_cast<Eigen::Index>(i)) =
            l2_normalized(features.row(static_cast<Eigen::Index>(rows[i])).transpose()).transpose();
    }
    return s;
}

/// Distance from the normalised query to its k-th nearest bank point.
inline double knn_distance(const KnnState& s, const Eigen::Ref<const Vector>& z) {
    require_dim(z, s.bank.cols(), "KNN");
    const Vector q = l2_normalized(z);
    std::vector<double> d(static_cast<std::size_t>(s.bank.rows()));
    for (Eigen::Index i = 0; i < s.bank.rows(); ++i) {
        d[static_cast<std::size_t>(i)] = (s.bank.row(i).transpose() - q).norm();
    }
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(s.k - 1), d.end());
    return d[s.k - 1];
}

inline double knn_score(const KnnState& s, const Eigen::Ref<const Vector>& z) { return -knn_distance(s, z); }

// ---------------------------------------------------------------------------
// ReAct: clip penultimate activations at an ID quantile, energy on the result.

struct ReactState {
    double threshold = 0.0;
    RowMatrix weight;
    Vector bias;
};

inline ReactState react_fit(const Network& net, const RowMatrix& id_features, double quantile_level = Defaults::react_quantile) {
    if (id_features.size() == 0) throw ValidationError("ReAct: no ID features");
    const std::size_t last = net.layers().size() - 1;
    if (id_features.cols() != static_cast<Eigen::Index>(net.penultimate_dim())) {
        throw ValidationError("ReAct: feature dimension does not match the logit layer");
    }
    std::vector<double> all(id_features.data(), id_features.data() + id_features.size());
    ReactState s;
    s.threshold = quantile(std::move(all), quantile_level);
    s.weight = net.weight(last);
    s.bias = net.bias(last);
    return s;
}

inline Vector react_logits(const ReactState& s, const Eigen::Ref<const Vector>& z) {
    require_dim(z, s.weight.cols(), "ReAct");
    return s.weight * z.cwiseMin(s.threshold) + s.bias;
}

inline double react_score(const ReactState& s, const Eigen::Ref<const Vector>& z) { return energy(react_logits(s, z)); }

// ---------------------------------------------------------------------------
// NCI (basic): projection of the centered feature onto the predicted class's
// logit-layer weight vector.

struct NciState {
    Vector global_mean;
    RowMatrix weight;
    Vector bias;
};

inline NciState nci_fit(const Network& net, const RowMatrix& id_features) {
    if (id_features.rows() == 0) throw ValidationError("NCI: no ID features");
    const std::size_t last = net.layers().size() - 1;
    if (id_features.cols() != static_cast<Eigen::Index>(net.penultimate_dim())) {
        throw ValidationError("NCI: feature dimension does not match the logit layer");
    }
    return {id_features.colwise().mean().transpose(), net.weight(last), net.bias(last)};
}

inline double nci_score(const NciState& s, const Eigen::Ref<const Vector>& z) {
    require_dim(z, s.weight.cols(), "NCI");
    const Vector logits = s.weight * z + s.bias;
    const auto c = static_cast<Eigen::Index>(argmax_lowest(logits));
    const Vector w = s.weight.row(c).transpose();
    const double wn = w.norm();
    if (!(wn > 0.0)) return 0.0;
    return w.dot(z - s.global_mean) / wn;
}

// ---------------------------------------------------------------------------
// Revisited PCA: reconstruction error of clipped features in a PCA subspace
// retaining `variance` of the spectrum, fused with the energy score.

struct RevisitedPcaState {
    Vector mean;
    Matrix components;  ///< d x k
    double clip = std::numeric_limits<double>::infinity();
    ReactState head;
};

inline RevisitedPcaState revisited_pca_fit(const Network& net, const RowMatrix& id_features,
                                           double variance = Defaults::revisited_pca_variance,
                                           double clip_quantile = Defaults::react_quantile) {
    if (id_features.rows() < 2) throw ValidationError("Revisited PCA: need at least two ID features");
    RevisitedPcaState s;
    s.head = react_fit(net, id_features, clip_quantile);
    s.clip = s.head.threshold;
    const RowMatrix clipped = id_features.cwiseMin(s.clip);
    s.mean = clipped.colwise().mean().transpose();
    const Matrix centered = (clipped.rowwise() - s.mean.transpose()).transpose();
    const Matrix cov = centered * centered.transpose() / static_cast<double>(id_features.rows());
    const SymmetricEigen eig = eigh_descending(cov);
    Vector spectrum = eig.values.cwiseMax(0.0);
    const auto k = static_cast<Eigen::Index>(select_rank(spectrum, variance));
    s.components = eig.vectors.leftCols(k);
    return s;
}

/// ||(z - mean) - P (z - mean)|| without clipping.
inline double reconstruction_error(const Vector& mean, const Matrix& components, const Eigen::Ref<const Vector>& z) {
    require_dim(z, mean.size(), "PCA reconstruction");
    const Vector c = z - mean;
    return (c - components * (components.transpose() * c)).norm();
}

/// energy(clipped logits) + log(1 - r), with r the normalised reconstruction
/// error of the clipped feature: the partition function scaled by the
/// fraction of the feature explained by the ID subspace.
inline double revisited_pca_score(const RevisitedPcaState& s, const Eigen::Ref<const Vector>& z) {
    require_dim(z, s.mean.size(), "Revisited PCA");
    const Vector clipped = z.cwiseMin(s.clip);
    const Vector c = clipped - s.mean;
    const double norm = c.norm();
    const double r = norm > 0.0 ? reconstruction_error(s.mean, s.components, clipped) / norm : 0.0;
    return energy(react_logits(s.head, z)) + std::log(std::max(1.0 - r, 1e-12));
}

// ---------------------------------------------------------------------------
// CoRP: kernel PCA with a cosine-Gaussian kernel via random Fourier features.

struct CorpState {
    RowMatrix omega;  ///< M x d, rows ~ N(0, 2 gamma I)
    Vector phase;     ///< M, uniform in [0, 2 pi)
    Vector mean;      ///< feature-space mean of the bank
    Matrix components;
    double gamma = Defaults::corp_gamma;
    bool degenerate = false;  ///< gamma so small that the features are nearly constant
};

/// sqrt(2/M) cos(omega x/||x|| + b); inner products approximate exp(-gamma ||x - y||^2).
inline Vector corp_features(const CorpState& s, const Eigen::Ref<const Vector>& z) {
    require_dim(z, s.omega.cols(), "CoRP");
    const Vector u = l2_normalized(z);
    const double scale = std::sqrt(2.0 / static_cast<double>(s.omega.rows()));
    return scale * ((s.omega * u + s.phase).array().cos()).matrix();
}

inline CorpState corp_sampler(std::size_t input_dim, std::size_t m, double gamma, std::uint64_t seed) {
    if (m == 0) throw ValidationError("CoRP: number of random features must be positive");
    if (!(gamma >= 0.0)) throw ValidationError("CoRP: gamma must be >= 0");
    CorpState s;
    s.gamma = gamma;
    s.degenerate = gamma < 1e-6;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 * gamma));
    std::uniform_real_distribution<double> uniform(0.0, 2.0 * M_PI);
    s.omega.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(input_dim));
    for (Eigen::Index i = 0; i < s.omega.size(); ++i) s.omega.data()[i] = gamma > 0.0 ? normal(rng) : 0.0;
    s.phase.resize(static_cast<Eigen::Index>(m));
    for (Eigen::Index i = 0; i < s.phase.size(); ++i) s.phase[i] = uniform(rng);
    return s;
}

/// Kernel PCA on the (at most `max_bank`) ID features, computed through the
/// bank's Gram matrix.
inline CorpState corp_fit(const RowMatrix& id_features, std::size_t m = Defaults::corp_features,
                          double gamma = Defaults::corp_gamma, double variance = Defaults::corp_variance,
                          std::uint64_t seed = 0, std::size_t max_bank = 1000) {
    if (id_features.rows() < 2) throw ValidationError("CoRP: need at least two ID features");
    CorpState s = corp_sampler(static_cast<std::size_t>(id_features.cols()), m, gamma, seed);
    std::vector<std::size_t> rows(static_cast<std::size_t>(id_features.rows()));
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    if (rows.size() > max_bank) {
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
        std::shuffle(rows.begin(), rows.end(), rng);
        rows.resize(max_bank);
        std::sort(rows.begin(), rows.end());
    }
    Matrix phi(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        phi.col(static_cast<Eigen::Index>(i)) =
            corp_features(s, id_features.row(static_cast<Eigen::Index>(rows[i])).transpose());
    }
    s.mean = phi.rowwise().mean();
    const Matrix centered = phi.colwise() - s.mean;
    if (centered.squaredNorm() <= 1e-24 * std::max(1.0, phi.squaredNorm())) {
        s.degenerate = true;
        s.components = Matrix::Zero(static_cast<Eigen::Index>(m), 0);
        return s;
    }
    s.components = dual_pca(centered, variance).components;
    return s;
}

/// Negative squared reconstruction error in random-feature space.
inline double corp_score(const CorpState& s, const Eigen::Ref<const Vector>& z) {
    const Vector c = corp_features(s, z) - s.mean;
    const Vector r = c - s.components * (s.components.transpose() * c);
    return -r.squaredNorm();
}

}  // namespace spod::baselines
