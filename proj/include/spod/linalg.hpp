#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "spod/errors.hpp"

namespace spod {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Eigenpairs of a symmetric matrix ordered by decreasing eigenvalue.
struct SymmetricEigen {
    Vector values;
    Matrix vectors;
};

inline SymmetricEigen eigh_descending(const Matrix& a) {
    if (a.rows() != a.cols()) {
        throw DimensionError("eigh_descending: matrix is not square");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
    if (solver.info() != Eigen::Success) {
        throw NumericalError("symmetric eigensolver failed to converge");
    }
    SymmetricEigen out;
    out.values = solver.eigenvalues().reverse();
    out.vectors = solver.eigenvectors().rowwise().reverse();
    return out;
}

/// Largest singular value by power iteration on A^T A.
/// Deterministic: the start vector comes from a fixed-seed generator.
inline double spectral_norm(const Matrix& a, int max_iter = 200, double tol = 1e-10) {
    if (a.size() == 0) {
        return 0.0;
    }
    std::mt19937_64 rng(0x5eed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector v(a.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v[i] = normal(rng);
    }
    v.normalize();
    double sigma = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Vector w = a.transpose() * (a * v);
        const double norm = w.norm();
        if (norm == 0.0) {
            return 0.0;
        }
        const double next = std::sqrt(norm);
        v = w / norm;
        if (std::abs(next - sigma) <= tol * std::max(1.0, next)) {
            sigma = next;
            break;
        }
        sigma = next;
    }
    return sigma;
}

/// Exact spectral norm via SVD; used where precision matters more than speed.
inline double spectral_norm_exact(const Matrix& a) {
    if (a.size() == 0) {
        return 0.0;
    }
    Eigen::JacobiSVD<Matrix> svd(a);
    return svd.singularValues()(0);
}

/// ||U U^T - W W^T||_2 for orthonormal bases U and W of equal width.
/// Computed as ||(I - U U^T) W||_2, which keeps full precision for small angles.
inline double projector_distance(const Matrix& u, const Matrix& w) {
    if (u.rows() != w.rows()) {
        throw DimensionError("projector_distance: ambient dimensions differ");
    }
    if (u.cols() != w.cols()) {
        return 1.0;
    }
    if (u.cols() == 0) {
        return 0.0;
    }
    const Matrix residual = w - u * (u.transpose() * w);
    return spectral_norm_exact(residual);
}

/// Number of singular values above rel_tol * largest.
inline std::size_t numerical_rank(const Matrix& a, double rel_tol = 1e-10) {
    if (a.size() == 0) {
        return 0;
    }
    Eigen::JacobiSVD<Matrix> svd(a);
    const Vector& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) {
        return 0;
    }
    return static_cast<std::size_t>((s.array() > rel_tol * s(0)).count());
}

/// Orthonormal basis of range(A) for a symmetric PSD matrix A.
inline Matrix range_basis(const Matrix& a, double rel_tol = 1e-10) {
    const SymmetricEigen eig = eigh_descending(a);
    const double top = eig.values.size() ? eig.values(0) : 0.0;
    Eigen::Index r = 0;
    while (r < eig.values.size() && top > 0.0 && eig.values(r) > rel_tol * top) {
        ++r;
    }
    return eig.vectors.leftCols(r);
}

/// Compensated (Neumaier) summation of vectors, element-wise.
class CompensatedSum {
public:
    CompensatedSum() = default;
    explicit CompensatedSum(Eigen::Index dim) : sum_(Vector::Zero(dim)), comp_(Vector::Zero(dim)) {}

    void add(const Eigen::Ref<const Vector>& x) {
        if (x.size() != sum_.size()) {
            throw DimensionError("CompensatedSum: dimension mismatch");
        }
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double t = sum_[i] + x[i];
            if (std::abs(sum_[i]) >= std::abs(x[i])) {
                comp_[i] += (sum_[i] - t) + x[i];
            } else {
                comp_[i] += (x[i] - t) + sum_[i];
            }
            sum_[i] = t;
        }
        ++count_;
    }

    Vector sum() const { return sum_ + comp_; }

    Vector mean() const {
        if (count_ == 0) {
            throw ValidationError("CompensatedSum: mean of zero terms");
        }
        return sum() / static_cast<double>(count_);
    }

    std::size_t count() const noexcept { return count_; }

private:
    Vector sum_;
    Vector comp_;
    std::size_t count_ = 0;
};

/// Restores orthonormality of the columns of U (modified Gram-Schmidt, two
/// passes). Span is preserved for full-rank input.
inline void reorthonormalize(Matrix& u) {
    for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index j = 0; j < u.cols(); ++j) {
            for (Eigen::Index i = 0; i < j; ++i) {
                u.col(j) -= u.col(i).dot(u.col(j)) * u.col(i);
            }
            const double n = u.col(j).norm();
            if (n == 0.0) {
                throw NumericalError("reorthonormalize: rank-deficient basis");
            }
            u.col(j) /= n;
        }
    }
}

/// Result of PCA performed through the dual (Gram) matrix of a set of
/// column vectors.
struct DualPca {
    Matrix components;        ///< ambient_dim x k, orthonormal
    Vector eigenvalues;       ///< retained eigenvalues, descending, all > 0
    Vector spectrum;          ///< full dual spectrum after zeroing, descending
    double retained_fraction = 0.0;
};

/// Smallest K whose leading eigenvalues carry at least `epsilon` of the
/// spectrum mass. `spectrum` must be descending and nonnegative.
inline std::size_t select_rank(const Vector& spectrum, double epsilon) {
    const double total = spectrum.sum();
    if (!(total > 0.0)) {
        return 0;
    }
    std::size_t nonzero = static_cast<std::size_t>((spectrum.array() > 0.0).count());
    double cum = 0.0;
    for (Eigen::Index i = 0; i < spectrum.size(); ++i) {
        cum += spectrum(i);
        if (cum / total >= epsilon) {
            return std::min<std::size_t>(static_cast<std::size_t>(i) + 1, nonzero);
        }
    }
    return nonzero;
}

/// PCA of the column set `centered` (ambient_dim x n) via eigendecomposition of
/// the n x n matrix centered^T centered, lifted back with
/// U_k = centered V_k diag(sigma_k)^(-1/2).
///
/// Eigenvalues below rel_zero * sigma_1 are treated as zero before truncation.
/// `reference_energy` (squared norm scale of the uncentered data) lets the
/// caller flag a spectrum that is pure rounding residue as rank-0.
inline DualPca dual_pca(const Matrix& centered, double epsilon, double reference_energy = 0.0,
                        double rel_zero = 1e-12) {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) {
        throw ConfigError("spectral threshold epsilon must lie in (0, 1]");
    }
    if (centered.cols() == 0 || centered.rows() == 0) {
        throw DegenerateFitError("dual_pca: empty matrix");
    }
    const Matrix gram = centered.transpose() * centered;
    SymmetricEigen eig = eigh_descending(gram);
    const double top = eig.values(0);
    if (!(top > 0.0) || !std::isfinite(top) || top <= rel_zero * rel_zero * reference_energy) {
        throw DegenerateFitError("dual matrix is numerically rank-0 (all vectors coincide)");
    }
    Vector spectrum = eig.values;
    for (Eigen::Index i = 0; i < spectrum.size(); ++i) {
        if (spectrum(i) < rel_zero * top) {
            spectrum(i) = 0.0;
        }
    }
    const std::size_t k = select_rank(spectrum, epsilon);
    DualPca out;
    out.spectrum = spectrum;
    out.eigenvalues = spectrum.head(static_cast<Eigen::Index>(k));
    out.retained_fraction = out.eigenvalues.sum() / spectrum.sum();
    const Matrix vk = eig.vectors.leftCols(static_cast<Eigen::Index>(k));
    const Vector inv_sqrt = out.eigenvalues.array().rsqrt();
    out.components = centered * vk * inv_sqrt.asDiagonal();
    const Matrix defect = out.components.transpose() * out.components -
                          Matrix::Identity(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    if (defect.cwiseAbs().maxCoeff() > 1e-10) {
        reorthonormalize(out.components);
    }
    return out;
}

/// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> values, double q) {
    if (values.empty()) {
        throw ValidationError("quantile of empty sample");
    }
    if (!(q >= 0.0 && q <= 1.0)) {
        throw ValidationError("quantile level must lie in [0, 1]");
    }
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace spod
