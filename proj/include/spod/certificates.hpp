#pragma once

// One-sided OOD certificates for spectral detectors and the perturbation
// bounds behind them. All functions are pure.

#include <cmath>
#include <string>

#include "spod/errors.hpp"
#include "spod/linalg.hpp"

namespace spod {

/// Certificates require margin > this to count as a strict inequality.
inline constexpr double kCertificateTolerance = 1e-9;

enum class CertificateKind { exact, robust };

struct Certificate {
    CertificateKind kind = CertificateKind::exact;
    bool holds = false;
    bool vacuous = false;  ///< robust only: lambda_C <= eps, nothing can be certified
    double margin = 0.0;   ///< threshold_used - score; positive means certified
    double threshold_used = 1.0;
    double score = 0.0;    ///< squared projection ratio ||P h||^2 / ||h||^2
};

/// Squared cosine ||P h||^2 / ||h||^2 for an orthonormal basis of the range.
inline double squared_projection_ratio(const Vector& h, const Matrix& range_basis) {
    if (range_basis.rows() != h.size()) {
        throw DimensionError("feature vector and range basis dimensions differ");
    }
    const double hn2 = h.squaredNorm();
    if (!(hn2 > 0.0)) throw ValidationError("certificate undefined for a zero feature vector");
    const double pn2 = range_basis.cols() ? (range_basis.transpose() * h).squaredNorm() : 0.0;
    return std::clamp(pn2 / hn2, 0.0, 1.0);
}

/// x is certified OOD when ||P h(x)|| < ||h(x)|| strictly, P projecting onto
/// range(S(h)). margin = 1 - ||P h||^2 / ||h||^2.
inline Certificate certify_exact(const Vector& h, const Matrix& range_basis) {
    Certificate c;
    c.kind = CertificateKind::exact;
    c.score = squared_projection_ratio(h, range_basis);
    c.threshold_used = 1.0;
    c.margin = 1.0 - c.score;
    c.holds = c.margin > kCertificateTolerance;
    return c;
}

/// Robust threshold 1 - 2 eps / (lambda_C - eps); only meaningful for lambda_C > eps.
inline double robust_threshold(double lambda_c, double eps) { return 1.0 - 2.0 * eps / (lambda_c - eps); }

/// Robust certificate for a PCA score s_PCA = ||P_C h||^2 / ||h||^2 computed
/// from an estimate S_hat with ||S - S_hat||_2 <= eps.
inline Certificate certify_robust(double s_pca, double lambda_c, double eps) {
    if (!(eps >= 0.0)) throw ValidationError("perturbation bound eps must be >= 0");
    if (!(s_pca >= 0.0 && s_pca <= 1.0)) throw ValidationError("PCA score must lie in [0, 1]");
    Certificate c;
    c.kind = CertificateKind::robust;
    c.score = s_pca;
    if (!(lambda_c > eps)) {
        c.vacuous = true;
        c.holds = false;
        c.threshold_used = -std::numeric_limits<double>::infinity();
        c.margin = -std::numeric_limits<double>::infinity();
        return c;
    }
    c.threshold_used = robust_threshold(lambda_c, eps);
    c.margin = c.threshold_used - s_pca;
    c.holds = c.margin > kCertificateTolerance;
    return c;
}

/// Second-moment model S(h) with its numerical rank, C-th eigenvalue and the
/// perturbation bound attached to an estimate of it.
struct CovarianceModel {
    Matrix matrix;
    std::size_t rank_c = 0;
    double lambda_c = 0.0;
    double perturbation_eps = 0.0;

    static CovarianceModel from_matrix(const Matrix& s, double perturbation_eps = 0.0, double rel_tol = 1e-10) {
        if (s.rows() != s.cols()) throw DimensionError("covariance must be square");
        if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, s.cwiseAbs().maxCoeff())) {
            throw ValidationError("covariance must be symmetric");
        }
        const SymmetricEigen eig = eigh_descending(s);
        const double top = eig.values.size() ? eig.values(0) : 0.0;
        if (eig.values.size() && eig.values(eig.values.size() - 1) < -1e-10 * std::max(1.0, top)) {
            throw ValidationError("covariance must be positive semidefinite");
        }
        CovarianceModel m;
        m.matrix = s;
        m.perturbation_eps = perturbation_eps;
        for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
            if (top > 0.0 && eig.values(i) > rel_tol * top) m.rank_c = static_cast<std::size_t>(i) + 1;
        }
        m.lambda_c = m.rank_c ? eig.values(static_cast<Eigen::Index>(m.rank_c) - 1) : 0.0;
        return m;
    }

    /// E[h h^T] estimated from feature rows.
    static CovarianceModel from_features(const RowMatrix& features, double perturbation_eps = 0.0) {
        if (features.rows() == 0) throw ValidationError("no feature vectors");
        const Matrix s = features.transpose() * features / static_cast<double>(features.rows());
        return from_matrix(0.5 * (s + s.transpose()), perturbation_eps);
    }

    Matrix range() const { return range_basis(matrix); }

    bool robust_nonvacuous() const { return lambda_c > perturbation_eps; }
};

/// Dimension of span{h(x)} estimated from a spanning sample (rows).
inline std::size_t feature_image_dim(const RowMatrix& features, double rel_tol = 1e-10) {
    return numerical_rank(features, rel_tol);
}

/// rank(S(h)) < dim span{h(x)}: without it no spectral detector on h has
/// nonzero sensitivity.
inline bool necessary_condition(const CovarianceModel& cov, std::size_t image_dim) { return cov.rank_c < image_dim; }

struct DavisKahanResult {
    double bound = 0.0;   ///< 2 ||E||_2 / gap
    double actual = 0.0;  ///< ||P_hat_k - P_k||_2
    double gap = 0.0;
};

/// Projector perturbation between the top-k eigenspaces of A and B = A + E.
/// gap = lambda_k(A) - lambda_{k+1}(B), the distance from A's top-k
/// eigenvalues to B's remaining spectrum.
inline DavisKahanResult davis_kahan_bound(const Matrix& a, const Matrix& b, std::size_t k) {
    if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows()) {
        throw DimensionError("davis_kahan_bound: A and B must be square and of equal size");
    }
    const auto n = static_cast<std::size_t>(a.rows());
    if (k == 0 || k > n) throw ValidationError("davis_kahan_bound: k must lie in [1, n]");
    const SymmetricEigen ea = eigh_descending(a);
    const SymmetricEigen eb = eigh_descending(b);
    const auto kk = static_cast<Eigen::Index>(k);
    DavisKahanResult r;
    r.gap = k < n ? ea.values(kk - 1) - eb.values(kk) : std::numeric_limits<double>::infinity();
    if (!(r.gap > 0.0)) {
        throw GapCollapsedError("spectral gap collapsed (lambda_k(A) <= lambda_{k+1}(B))");
    }
    const double e_norm = spectral_norm_exact(b - a);
    r.bound = k < n ? 2.0 * e_norm / r.gap : 0.0;
    r.actual = k < n ? projector_distance(ea.vectors.leftCols(kk), eb.vectors.leftCols(kk)) : 0.0;
    return r;
}

/// Universal constant used in the sample-complexity bound; the bound leaves it
/// unspecified, so it is fixed at 1 and reported alongside results.
inline constexpr double kSampleComplexityConstant = 1.0;

/// eps = (2 C R^2 / Delta) sqrt(log(N / delta) / N).
inline double sample_complexity_eps(double feature_norm_bound, std::size_t n, double delta, double spectral_gap,
                                    double constant = kSampleComplexityConstant) {
    if (n < 2) throw ValidationError("sample complexity needs N >= 2");
    if (!(delta > 0.0 && delta < 1.0)) throw ValidationError("confidence delta must lie in (0, 1)");
    if (!(spectral_gap > 0.0)) throw ValidationError("spectral gap must be positive");
    if (!(feature_norm_bound > 0.0)) throw ValidationError("feature norm bound must be positive");
    const double nn = static_cast<double>(n);
    return 2.0 * constant * feature_norm_bound * feature_norm_bound / spectral_gap * std::sqrt(std::log(nn / delta) / nn);
}

/// Score-drift bound 2 eps / (Delta - eps); infinite when eps >= Delta.
inline double score_drift_bound(double eps, double spectral_gap) {
    return eps < spectral_gap ? 2.0 * eps / (spectral_gap - eps) : std::numeric_limits<double>::infinity();
}

}  // namespace spod
