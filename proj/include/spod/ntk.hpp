#pragma once

// Empirical NTK on a labelled batch and its class-block analysis.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "spod/class_means.hpp"
#include "spod/data.hpp"
#include "spod/nn.hpp"
#include "spod/parallel.hpp"

namespace spod {

/// How a C-output network is reduced to a kernel.
enum class NtkHeadMode {
    aggregated,  ///< kernel of the gradient of the aggregated scalar output
    head_sum,    ///< sum over heads c of <grad f^c(x_i), grad f^c(x_j)>
};

/// Symmetric N x N kernel matrix with rows sorted by class, then by original
/// index (diagonal blocks are within-class).
struct NtkMatrix {
    Matrix values;
    std::vector<std::uint32_t> sample_labels;
    std::vector<std::size_t> source_index;  ///< original row of each sorted sample
};

/// Row order sorting a dataset by (label, original index).
inline std::vector<std::size_t> class_sorted_order(const LabeledDataset& d) {
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return d.labels[a] < d.labels[b]; });
    return order;
}

/// First `per_class` samples of each class, in dataset order.
inline LabeledDataset balanced_subset(const LabeledDataset& d, std::size_t per_class) {
    if (!d.labeled) throw ValidationError("balanced subset needs labelled data");
    if (per_class == 0) throw ValidationError("per-class sample count must be positive");
    std::vector<std::size_t> rows;
    std::vector<std::size_t> taken(d.num_classes, 0);
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (taken[d.labels[i]] < per_class) {
            ++taken[d.labels[i]];
            rows.push_back(i);
        }
    }
    return d.select(rows);
}

/// Per-sample gradients (rows) of the class-sorted batch.
inline RowMatrix sorted_gradients(const Network& net, const LabeledDataset& batch, const AggregationMode& head,
                                  const ParamSubset& subset, const std::vector<std::size_t>& order,
                                  std::size_t threads = 1) {
    RowMatrix f(static_cast<Eigen::Index>(order.size()), static_cast<Eigen::Index>(subset.dim()));
    parallel_for(order.size(), threads, [&](std::size_t i) {
        f.row(static_cast<Eigen::Index>(i)) =
            per_sample_gradient(net, batch.inputs.row(static_cast<Eigen::Index>(order[i])).transpose(), head, subset)
                .transpose();
    });
    return f;
}

/// Theta_ij = <grad f(x_i), grad f(x_j)> over `subset`.
inline NtkMatrix empirical_ntk(const Network& net, const LabeledDataset& batch, const AggregationMode& head,
                               const ParamSubset& subset, std::size_t threads = 1) {
    if (batch.size() == 0) throw ValidationError("empirical_ntk: empty batch");
    NtkMatrix out;
    out.source_index = class_sorted_order(batch);
    for (auto i : out.source_index) out.sample_labels.push_back(batch.labels[i]);
    const RowMatrix f = sorted_gradients(net, batch, head, subset, out.source_index, threads);
    out.values = f * f.transpose();
    out.values = 0.5 * (out.values + out.values.transpose()).eval();
    return out;
}

/// Sum over the C output heads of the per-head kernels.
inline NtkMatrix empirical_ntk_head_sum(const Network& net, const LabeledDataset& batch, const ParamSubset& subset,
                                        std::size_t threads = 1) {
    if (batch.size() == 0) throw ValidationError("empirical_ntk: empty batch");
    NtkMatrix out;
    out.source_index = class_sorted_order(batch);
    for (auto i : out.source_index) out.sample_labels.push_back(batch.labels[i]);
    const auto n = static_cast<Eigen::Index>(batch.size());
    out.values = Matrix::Zero(n, n);
    for (std::size_t c = 0; c < net.num_classes(); ++c) {
        const RowMatrix f =
            sorted_gradients(net, batch, AggregationMode::single_head(c), subset, out.source_index, threads);
        out.values += f * f.transpose();
    }
    out.values = 0.5 * (out.values + out.values.transpose()).eval();
    return out;
}

inline NtkMatrix empirical_ntk(const Network& net, const LabeledDataset& batch, NtkHeadMode mode,
                               const AggregationMode& head, const ParamSubset& subset, std::size_t threads = 1) {
    return mode == NtkHeadMode::head_sum ? empirical_ntk_head_sum(net, batch, subset, threads)
                                         : empirical_ntk(net, batch, head, subset, threads);
}

struct BlockStructureReport {
    Matrix gram_means;          ///< G^T G, C x C
    double residual_norm = 0;   ///< ||Theta - G^T G (x) 1_m 1_m^T||_2
    double leading_norm = 0;    ///< ||G^T G (x) 1_m 1_m^T||_2
    double ntk_norm = 0;        ///< ||Theta||_2
    double alignment_ratio = 0;                ///< within-class (off-diagonal) mean / between-class mean
    double alignment_ratio_with_diagonal = 0;  ///< same, whole diagonal blocks
    Matrix heatmap;             ///< Theta / max(Theta), negatives clipped to 0
};

/// Kronecker product A (x) 1_m 1_m^T.
inline Matrix kron_ones(const Matrix& a, std::size_t m) {
    const auto mm = static_cast<Eigen::Index>(m);
    Matrix out(a.rows() * mm, a.cols() * mm);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out.block(i * mm, j * mm, mm, mm).setConstant(a(i, j));
        }
    }
    return out;
}

/// Max-normalised kernel with negative entries clipped to zero.
inline Matrix ntk_heatmap(const Matrix& values) {
    const double top = values.maxCoeff();
    if (!(top > 0.0)) return Matrix::Zero(values.rows(), values.cols());
    return (values / top).cwiseMax(0.0).cwiseMin(1.0);
}

/// Splits Theta into the block term built from the class means and the
/// residual xi. Requires exactly m rows per class, class-sorted.
inline BlockStructureReport block_structure(const NtkMatrix& ntk, const ClassMeanMatrix& class_means, std::size_t m) {
    const std::size_t c = class_means.num_classes();
    const auto n = static_cast<std::size_t>(ntk.values.rows());
    if (m == 0 || n != c * m || ntk.sample_labels.size() != n) {
        throw ValidationError("block structure undefined: need exactly m=" + std::to_string(m) +
                              " samples for each of C=" + std::to_string(c) + " classes, got N=" + std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (ntk.sample_labels[i] != i / m) {
            throw ValidationError("block structure undefined: classes are unbalanced or rows are not class-sorted");
        }
    }
    BlockStructureReport r;
    r.gram_means = class_means.means.transpose() * class_means.means;
    const Matrix leading = kron_ones(r.gram_means, m);
    r.residual_norm = spectral_norm(ntk.values - leading);
    r.leading_norm = spectral_norm(leading);
    r.ntk_norm = spectral_norm(ntk.values);

    double within = 0.0, within_diag = 0.0, between = 0.0;
    std::size_t n_within = 0, n_within_diag = 0, n_between = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double v = ntk.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            if (ntk.sample_labels[i] == ntk.sample_labels[j]) {
                within_diag += v;
                ++n_within_diag;
                if (i != j) {
                    within += v;
                    ++n_within;
                }
            } else {
                between += v;
                ++n_between;
            }
        }
    }
    const double inf = std::numeric_limits<double>::infinity();
    const double between_mean = n_between ? between / static_cast<double>(n_between) : 0.0;
    const double within_mean = n_within ? within / static_cast<double>(n_within) : 0.0;
    const double within_diag_mean = n_within_diag ? within_diag / static_cast<double>(n_within_diag) : 0.0;
    r.alignment_ratio = between_mean > 0.0 ? within_mean / between_mean : inf;
    r.alignment_ratio_with_diagonal = between_mean > 0.0 ? within_diag_mean / between_mean : inf;
    r.heatmap = ntk_heatmap(ntk.values);
    return r;
}

/// Convenience: class means of the batch's own gradients, then block_structure.
inline BlockStructureReport block_structure_of_batch(const Network& net, const LabeledDataset& batch,
                                                     const AggregationMode& head, const ParamSubset& subset) {
    const auto counts = batch.class_counts();
    if (counts.empty() || std::any_of(counts.begin(), counts.end(), [&](auto k) { return k != counts[0]; })) {
        throw ValidationError("block structure undefined: classes are unbalanced");
    }
    NtkMatrix ntk;
    ntk.source_index = class_sorted_order(batch);
    for (auto i : ntk.source_index) ntk.sample_labels.push_back(batch.labels[i]);
    const RowMatrix f = sorted_gradients(net, batch, head, subset, ntk.source_index);
    ntk.values = f * f.transpose();
    const ClassMeanMatrix means = class_means_from_rows(f, ntk.sample_labels, batch.num_classes);
    return block_structure(ntk, means, counts[0]);
}

/// head_sum: the kernel is a sum of per-head kernels, so the leading term
/// uses the per-head class means stacked vertically (G^T G sums the heads).
inline BlockStructureReport block_structure_of_batch(const Network& net, const LabeledDataset& batch, NtkHeadMode mode,
                                                     const AggregationMode& head, const ParamSubset& subset) {
    if (mode == NtkHeadMode::aggregated) return block_structure_of_batch(net, batch, head, subset);
    const auto counts = batch.class_counts();
    if (counts.empty() || std::any_of(counts.begin(), counts.end(), [&](auto k) { return k != counts[0]; })) {
        throw ValidationError("block structure undefined: classes are unbalanced");
    }
    NtkMatrix ntk;
    ntk.source_index = class_sorted_order(batch);
    for (auto i : ntk.source_index) ntk.sample_labels.push_back(batch.labels[i]);
    const auto n = static_cast<Eigen::Index>(batch.size());
    const auto p = static_cast<Eigen::Index>(subset.dim());
    const auto c = static_cast<Eigen::Index>(net.num_classes());
    ntk.values = Matrix::Zero(n, n);
    ClassMeanMatrix stacked;
    stacked.means = Matrix::Zero(p * c, static_cast<Eigen::Index>(batch.num_classes));
    for (Eigen::Index h = 0; h < c; ++h) {
        const RowMatrix f = sorted_gradients(net, batch, AggregationMode::single_head(static_cast<std::size_t>(h)),
                                             subset, ntk.source_index);
        ntk.values += f * f.transpose();
        const ClassMeanMatrix m = class_means_from_rows(f, ntk.sample_labels, batch.num_classes);
        stacked.means.middleRows(h * p, p) = m.means;
        stacked.counts = m.counts;
    }
    return block_structure(ntk, stacked, counts[0]);
}

}  // namespace spod
