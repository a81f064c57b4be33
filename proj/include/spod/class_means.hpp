#pragma once

#include <vector>

#include "spod/data.hpp"
#include "spod/nn.hpp"

namespace spod {

/// How the global mean used for centering weights the classes. Only matters
/// when classes are unbalanced.
enum class CenteringMode { class_weighted, sample_weighted };

inline const char* to_string(CenteringMode m) {
    return m == CenteringMode::class_weighted ? "class_weighted" : "sample_weighted";
}

inline CenteringMode parse_centering(const std::string& s) {
    if (s == "class_weighted" || s == "class") return CenteringMode::class_weighted;
    if (s == "sample_weighted" || s == "sample") return CenteringMode::sample_weighted;
    throw ConfigError("unknown centering mode '" + s + "'");
}

/// Class-mean gradients [g^1 ... g^C] (P_sub x C), the global mean and the
/// per-class sample counts.
struct ClassMeanMatrix {
    Matrix means;
    Vector global_mean;
    std::vector<std::size_t> counts;

    std::size_t num_classes() const { return static_cast<std::size_t>(means.cols()); }
    std::size_t dim() const { return static_cast<std::size_t>(means.rows()); }

    Matrix centered() const { return means.colwise() - global_mean; }
};

inline Vector global_mean_of(const Matrix& means, const std::vector<std::size_t>& counts, CenteringMode mode) {
    if (mode == CenteringMode::class_weighted) {
        return means.rowwise().mean();
    }
    Vector acc = Vector::Zero(means.rows());
    std::size_t total = 0;
    for (Eigen::Index k = 0; k < means.cols(); ++k) {
        acc += static_cast<double>(counts[static_cast<std::size_t>(k)]) * means.col(k);
        total += counts[static_cast<std::size_t>(k)];
    }
    return acc / static_cast<double>(total);
}

/// Class means of precomputed gradient rows (N x P) grouped by `labels`.
inline ClassMeanMatrix class_means_from_rows(const RowMatrix& rows, const std::vector<std::uint32_t>& labels,
                                             std::size_t num_classes,
                                             CenteringMode mode = CenteringMode::class_weighted) {
    if (static_cast<std::size_t>(rows.rows()) != labels.size()) {
        throw DimensionError("class_means_from_rows: label count mismatch");
    }
    std::vector<CompensatedSum> sums(num_classes, CompensatedSum(rows.cols()));
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        const auto y = labels[static_cast<std::size_t>(i)];
        if (y >= num_classes) throw ValidationError("label out of range");
        sums[y].add(rows.row(i).transpose());
    }
    ClassMeanMatrix out;
    out.means.resize(rows.cols(), static_cast<Eigen::Index>(num_classes));
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (sums[k].count() == 0) {
            throw EmptyClassError("class " + std::to_string(k) + " has no samples");
        }
        out.means.col(static_cast<Eigen::Index>(k)) = sums[k].mean();
        out.counts.push_back(sums[k].count());
    }
    out.global_mean = global_mean_of(out.means, out.counts, mode);
    return out;
}

/// Streams each class through per_class_loader and accumulates per-sample
/// gradients with compensated summation; the N gradients are never stored.
inline ClassMeanMatrix accumulate_class_means(const Network& net, const LabeledDataset& train,
                                              const AggregationMode& head, const ParamSubset& subset,
                                              CenteringMode mode = CenteringMode::class_weighted,
                                              std::size_t batch_size = 256) {
    if (subset.empty()) throw ConfigError("parameter subset is empty");
    if (train.input_dim() != net.input_dim()) {
        throw DimensionError("dataset has " + std::to_string(train.input_dim()) + " features, network expects " +
                             std::to_string(net.input_dim()));
    }
    const std::size_t c = train.num_classes;
    ClassMeanMatrix out;
    out.means.resize(static_cast<Eigen::Index>(subset.dim()), static_cast<Eigen::Index>(c));
    for (std::size_t k = 0; k < c; ++k) {
        ClassBatchStream stream = per_class_loader(train, k, batch_size);
        CompensatedSum acc(static_cast<Eigen::Index>(subset.dim()));
        while (auto batch = stream.next()) {
            for (Eigen::Index i = 0; i < batch->rows(); ++i) {
                acc.add(per_sample_gradient(net, batch->row(i).transpose(), head, subset));
            }
        }
        out.means.col(static_cast<Eigen::Index>(k)) = acc.mean();
        out.counts.push_back(acc.count());
    }
    out.global_mean = global_mean_of(out.means, out.counts, mode);
    return out;
}

}  // namespace spod
