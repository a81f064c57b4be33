#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spod/errors.hpp"
#include "spod/io.hpp"
#include "spod/linalg.hpp"

namespace spod {

/// Inputs (N x input_dim, row-major) with class labels in [0, C).
/// Unlabeled sets (OOD) carry dummy zero labels and `labeled == false`.
struct LabeledDataset {
    RowMatrix inputs;
    std::vector<std::uint32_t> labels;
    std::size_t num_classes = 0;
    std::string name;
    bool labeled = true;

    std::size_t size() const noexcept { return static_cast<std::size_t>(inputs.rows()); }
    std::size_t input_dim() const noexcept { return static_cast<std::size_t>(inputs.cols()); }

    void validate() const {
        if (labels.size() != size()) {
            throw ValidationError("dataset '" + name + "': " + std::to_string(labels.size()) + " labels for " +
                                  std::to_string(size()) + " samples");
        }
        for (auto y : labels) {
            if (y >= num_classes) {
                throw ValidationError("dataset '" + name + "': label " + std::to_string(y) + " >= C=" +
                                      std::to_string(num_classes));
            }
        }
        if (!inputs.allFinite()) {
            throw ValidationError("dataset '" + name + "': non-finite input values");
        }
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(num_classes, 0);
        for (auto y : labels) ++counts[y];
        return counts;
    }

    /// Subset by row indices, preserving the given order.
    LabeledDataset select(const std::vector<std::size_t>& rows) const {
        LabeledDataset out;
        out.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
        out.labels.reserve(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(rows[i]));
            out.labels.push_back(labels.at(rows[i]));
        }
        out.num_classes = num_classes;
        out.name = name;
        out.labeled = labeled;
        return out;
    }
};

// ---------------------------------------------------------------------------
// Dataset file: "SPDT0001", u64 N, u32 input_dim, u32 C, u8 has_labels,
// then N*input_dim f64 inputs (row-major), then N u32 labels if has_labels.

inline void write_dataset(const LabeledDataset& d, std::ostream& out) {
    d.validate();
    io::Writer w(out);
    w.magic("SPDT0001");
    w.put<std::uint64_t>(d.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d.input_dim()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d.num_classes));
    w.put<std::uint8_t>(d.labeled ? 1 : 0);
    w.doubles(d.inputs.data(), static_cast<std::size_t>(d.inputs.size()));
    if (d.labeled) {
        for (auto y : d.labels) w.put<std::uint32_t>(y);
    }
    w.check();
}

inline LabeledDataset read_dataset(std::istream& in, const std::string& source = "dataset") {
    io::Reader r(in, source);
    r.expect_magic("SPDT0001");
    const auto n = r.get<std::uint64_t>();
    const auto dim = r.get<std::uint32_t>();
    const auto c = r.get<std::uint32_t>();
    const auto flag = r.get<std::uint8_t>();
    if (flag > 1) {
        throw IoError(source + ": invalid label flag");
    }
    if (dim == 0 || c == 0 || n > (1ull << 32)) {
        throw IoError(source + ": implausible header");
    }
    LabeledDataset d;
    d.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    r.doubles(d.inputs.data(), static_cast<std::size_t>(n) * dim);
    d.labels.assign(static_cast<std::size_t>(n), 0);
    d.labeled = flag == 1;
    if (d.labeled) {
        for (auto& y : d.labels) {
            y = r.get<std::uint32_t>();
            if (y >= c) throw IoError(source + ": label out of range");
        }
    }
    r.expect_end();
    d.num_classes = c;
    d.name = source;
    return d;
}

inline std::string dataset_stem(const std::string& path) {
    const auto slash = path.find_last_of('/');
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    const auto dot = base.find_last_of('.');
    return dot == std::string::npos ? base : base.substr(0, dot);
}

inline void save_dataset(const LabeledDataset& d, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    write_dataset(d, out);
}

inline LabeledDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    LabeledDataset d = read_dataset(in, path);
    d.name = dataset_stem(path);
    return d;
}

// ---------------------------------------------------------------------------
// Per-class streaming.

/// Read-only cursor over the samples of one class, in dataset order.
class ClassBatchStream {
public:
    ClassBatchStream(const LabeledDataset& data, std::size_t class_id, std::size_t batch_size)
        : data_(&data), batch_size_(batch_size) {
        if (class_id >= data.num_classes) {
            throw ValidationError("class id " + std::to_string(class_id) + " >= C=" + std::to_string(data.num_classes));
        }
        if (batch_size == 0) {
            throw ConfigError("batch size must be positive");
        }
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (data.labels[i] == class_id) indices_.push_back(i);
        }
        if (indices_.empty()) {
            throw EmptyClassError("class " + std::to_string(class_id) + " of dataset '" + data.name +
                                  "' has no samples");
        }
    }

    /// Next batch, or nullopt once the class is exhausted.
    std::optional<RowMatrix> next() {
        if (pos_ >= indices_.size()) return std::nullopt;
        const std::size_t n = std::min(batch_size_, indices_.size() - pos_);
        RowMatrix batch(static_cast<Eigen::Index>(n), data_->inputs.cols());
        for (std::size_t i = 0; i < n; ++i) {
            batch.row(static_cast<Eigen::Index>(i)) = data_->inputs.row(static_cast<Eigen::Index>(indices_[pos_ + i]));
        }
        pos_ += n;
        return batch;
    }

    std::size_t class_size() const noexcept { return indices_.size(); }
    const std::vector<std::size_t>& indices() const noexcept { return indices_; }

private:
    const LabeledDataset* data_;
    std::size_t batch_size_;
    std::vector<std::size_t> indices_;
    std::size_t pos_ = 0;
};

inline ClassBatchStream per_class_loader(const LabeledDataset& data, std::size_t class_id, std::size_t batch_size) {
    return ClassBatchStream(data, class_id, batch_size);
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian-blob benchmark.

enum class OodMode { shifted_means, uniform_box, orthogonal_subspace };

inline const char* to_string(OodMode m) {
    switch (m) {
        case OodMode::shifted_means: return "shifted_means";
        case OodMode::uniform_box: return "uniform_box";
        case OodMode::orthogonal_subspace: return "orthogonal_subspace";
    }
    return "?";
}

inline OodMode parse_ood_mode(const std::string& s) {
    if (s == "shifted_means") return OodMode::shifted_means;
    if (s == "uniform_box") return OodMode::uniform_box;
    if (s == "orthogonal_subspace") return OodMode::orthogonal_subspace;
    throw ConfigError("unknown OOD mode '" + s + "'");
}

struct SyntheticSpec {
    std::size_t num_classes = 5;
    std::size_t input_dim = 32;
    double per_class_mean_scale = 6.0;
    double noise_sigma = 1.0;
    std::size_t samples_per_class = 200;
    OodMode ood_mode = OodMode::shifted_means;
    /// OOD centres sit at this multiple of the ID mean scale (shifted_means, uniform_box).
    double ood_scale_factor = 4.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_classes < 1) throw ValidationError("synthetic spec: need at least one class");
        if (input_dim < 1) throw ValidationError("synthetic spec: input_dim must be positive");
        if (samples_per_class < 1) throw ValidationError("synthetic spec: samples_per_class must be >= 1");
        if (!(noise_sigma > 0.0)) throw ValidationError("synthetic spec: noise_sigma must be > 0");
        if (!(per_class_mean_scale > 0.0)) throw ValidationError("synthetic spec: mean scale must be > 0");
        if (ood_mode == OodMode::orthogonal_subspace && input_dim <= num_classes) {
            throw ValidationError("synthetic spec: orthogonal_subspace needs input_dim > num_classes");
        }
    }
};

struct SyntheticSplits {
    LabeledDataset id_train;
    LabeledDataset id_test;
    LabeledDataset ood;
    RowMatrix class_means;  ///< C x input_dim
};

namespace detail {

inline Vector gaussian_vector(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector v(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
    return v;
}

inline Vector random_direction(std::mt19937_64& rng, std::size_t dim) {
    Vector v = gaussian_vector(rng, dim);
    return v / v.norm();
}

inline LabeledDataset blobs(std::mt19937_64& rng, const RowMatrix& means, double sigma, std::size_t per_class,
                            std::size_t num_classes, const std::string& name) {
    const auto c = static_cast<std::size_t>(means.rows());
    LabeledDataset d;
    d.inputs.resize(static_cast<Eigen::Index>(c * per_class), means.cols());
    d.labels.resize(c * per_class);
    std::size_t row = 0;
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t j = 0; j < per_class; ++j, ++row) {
            d.inputs.row(static_cast<Eigen::Index>(row)) =
                means.row(static_cast<Eigen::Index>(k)) +
                sigma * gaussian_vector(rng, static_cast<std::size_t>(means.cols())).transpose();
            d.labels[row] = static_cast<std::uint32_t>(k % num_classes);
        }
    }
    d.num_classes = num_classes;
    d.name = name;
    return d;
}

}  // namespace detail

/// Orthonormal basis (input_dim x r) of the span of the class means.
inline Matrix class_mean_span(const RowMatrix& means) {
    const Matrix m = means.transpose();
    Eigen::ColPivHouseholderQR<Matrix> qr(m);
    const auto r = qr.rank();
    return Matrix(qr.householderQ()).leftCols(r);
}

/// ID classes are Gaussian blobs around C random means of norm
/// per_class_mean_scale; the OOD set has C * samples_per_class points drawn
/// per `ood_mode`. Deterministic given the seed.
inline SyntheticSplits generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const std::size_t c = spec.num_classes;
    const std::size_t d = spec.input_dim;
    const std::size_t m = spec.samples_per_class;

    RowMatrix means(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < c; ++k) {
        means.row(static_cast<Eigen::Index>(k)) = spec.per_class_mean_scale * detail::random_direction(rng, d).transpose();
    }

    SyntheticSplits out;
    out.class_means = means;
    out.id_train = detail::blobs(rng, means, spec.noise_sigma, m, c, "id_train");
    out.id_test = detail::blobs(rng, means, spec.noise_sigma, m, c, "id_test");

    LabeledDataset ood;
    ood.num_classes = c;
    ood.labeled = false;
    ood.name = std::string("ood_") + to_string(spec.ood_mode);
    ood.inputs.resize(static_cast<Eigen::Index>(c * m), static_cast<Eigen::Index>(d));
    ood.labels.assign(c * m, 0);

    switch (spec.ood_mode) {
        case OodMode::shifted_means: {
            RowMatrix shifted(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(d));
            for (std::size_t k = 0; k < c; ++k) {
                shifted.row(static_cast<Eigen::Index>(k)) =
                    spec.ood_scale_factor * spec.per_class_mean_scale * detail::random_direction(rng, d).transpose();
            }
            LabeledDataset tmp = detail::blobs(rng, shifted, spec.noise_sigma, m, c, ood.name);
            ood.inputs = std::move(tmp.inputs);
            break;
        }
        case OodMode::uniform_box: {
            // Uniform in [-B, B]^d, rejecting points inside any ID blob
            // (closer than 3 sigma sqrt(d) to a class mean).
            const double half = spec.ood_scale_factor * spec.per_class_mean_scale;
            const double exclusion = 3.0 * spec.noise_sigma * std::sqrt(static_cast<double>(d));
            std::uniform_real_distribution<double> box(-half, half);
            std::size_t row = 0;
            std::size_t attempts = 0;
            while (row < c * m) {
                if (++attempts > 1000 * c * m) {
                    throw ValidationError("uniform_box: ID blobs cover the box; increase ood_scale_factor");
                }
                Vector x(static_cast<Eigen::Index>(d));
                for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = box(rng);
                double nearest = std::numeric_limits<double>::infinity();
                for (std::size_t k = 0; k < c; ++k) {
                    nearest = std::min(nearest, (x.transpose() - means.row(static_cast<Eigen::Index>(k))).norm());
                }
                if (nearest > exclusion) {
                    ood.inputs.row(static_cast<Eigen::Index>(row++)) = x.transpose();
                }
            }
            break;
        }
        case OodMode::orthogonal_subspace: {
            // Blobs of the same scale whose points are projected onto the
            // orthogonal complement of span(class means).
            const Matrix q = class_mean_span(means);
            for (std::size_t row = 0; row < c * m; ++row) {
                Vector centre = spec.per_class_mean_scale * detail::random_direction(rng, d);
                centre -= q * (q.transpose() * centre);
                if (centre.norm() > 0.0) centre *= spec.per_class_mean_scale / centre.norm();
                Vector x = centre + spec.noise_sigma * detail::gaussian_vector(rng, d);
                x -= q * (q.transpose() * x);
                ood.inputs.row(static_cast<Eigen::Index>(row)) = x.transpose();
            }
            break;
        }
    }
    out.ood = std::move(ood);
    return out;
}

// ---------------------------------------------------------------------------
// Label noise.

struct LabelNoiseSpec {
    double fraction = 0.0;
    std::uint64_t seed = 0;
};

/// Corrupts exactly round(fraction * N) labels, each replaced by a class drawn
/// uniformly from the other C - 1 classes.
inline LabeledDataset inject_label_noise(const LabeledDataset& data, const LabelNoiseSpec& spec) {
    if (!(spec.fraction >= 0.0 && spec.fraction < 1.0)) {
        throw ValidationError("label noise fraction must lie in [0, 1)");
    }
    LabeledDataset out = data;
    const auto n_flip = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(data.size())));
    if (n_flip == 0) return out;
    if (data.num_classes < 2) {
        throw ValidationError("label noise needs at least two classes");
    }
    std::mt19937_64 rng(spec.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<std::uint32_t> other(0, static_cast<std::uint32_t>(data.num_classes - 2));
    for (std::size_t i = 0; i < n_flip; ++i) {
        const std::size_t idx = order[i];
        std::uint32_t y = other(rng);
        if (y >= data.labels[idx]) ++y;
        out.labels[idx] = y;
    }
    return out;
}

}  // namespace spod
