#pragma once

// Minimal feed-forward network: dense layers with relu/tanh activations,
// float64 parameters in a single flat buffer, reverse-mode gradients of
// scalar heads and of the softmax cross-entropy loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "spod/errors.hpp"
#include "spod/io.hpp"
#include "spod/linalg.hpp"

namespace spod {

enum class LayerKind : std::uint8_t { dense = 0, relu = 1, tanh = 2 };

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::relu: return "relu";
        case LayerKind::tanh: return "tanh";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::string group_name;  // empty for activation layers
};

/// Offset range of one parameter group inside the flat parameter vector.
/// Dense groups hold the weight matrix (out x in, row-major) followed by the bias.
struct ParamRange {
    std::size_t offset = 0;
    std::size_t size = 0;
};

/// Scalar function of the logits that gets differentiated.
struct AggregationMode {
    enum class Kind { max_logit, sum_logits, single_head };
    Kind kind = Kind::max_logit;
    std::size_t head = 0;

    static AggregationMode max_logit() { return {Kind::max_logit, 0}; }
    static AggregationMode sum_logits() { return {Kind::sum_logits, 0}; }
    static AggregationMode single_head(std::size_t c) { return {Kind::single_head, c}; }

    friend bool operator==(const AggregationMode&, const AggregationMode&) = default;
};

inline std::string to_string(const AggregationMode& m) {
    switch (m.kind) {
        case AggregationMode::Kind::max_logit: return "max";
        case AggregationMode::Kind::sum_logits: return "sum";
        case AggregationMode::Kind::single_head: return "head:" + std::to_string(m.head);
    }
    return "?";
}

inline AggregationMode parse_aggregation(const std::string& s) {
    if (s == "max" || s == "max_logit") return AggregationMode::max_logit();
    if (s == "sum" || s == "sum_logits") return AggregationMode::sum_logits();
    if (s.rfind("head:", 0) == 0) {
        try {
            return AggregationMode::single_head(std::stoul(s.substr(5)));
        } catch (const std::exception&) {
        }
    }
    throw ConfigError("unknown aggregation '" + s + "' (expected max, sum or head:<c>)");
}

/// Index of the largest logit; ties resolve to the lowest index.
inline std::size_t argmax_lowest(const Eigen::Ref<const Vector>& v) {
    std::size_t best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i) {
        if (v[i] > v[static_cast<Eigen::Index>(best)]) {
            best = static_cast<std::size_t>(i);
        }
    }
    return best;
}

class Network {
public:
    Network() = default;

    Network(std::size_t input_dim, std::vector<LayerSpec> layers) : input_dim_(input_dim), layers_(std::move(layers)) {
        if (input_dim_ == 0) {
            throw ConfigError("network input dimension must be positive");
        }
        if (layers_.empty() || layers_.back().kind != LayerKind::dense) {
            throw ConfigError("network must end with a dense logit layer");
        }
        std::size_t width = input_dim_;
        std::size_t offset = 0;
        std::set<std::string> seen;
        offsets_.resize(layers_.size());
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            LayerSpec& l = layers_[i];
            if (l.in_dim != width) {
                throw DimensionError("layer " + std::to_string(i) + " expects input width " + std::to_string(l.in_dim) +
                                     " but receives " + std::to_string(width));
            }
            if (l.kind == LayerKind::dense) {
                if (l.out_dim == 0) {
                    throw ConfigError("dense layer " + std::to_string(i) + " has zero outputs");
                }
                if (l.group_name.empty()) {
                    l.group_name = "dense_" + std::to_string(i);
                }
                if (!seen.insert(l.group_name).second) {
                    throw ConfigError("duplicate parameter group name '" + l.group_name + "'");
                }
                const std::size_t size = l.out_dim * l.in_dim + l.out_dim;
                offsets_[i] = offset;
                groups_.emplace(l.group_name, ParamRange{offset, size});
                group_order_.push_back(l.group_name);
                offset += size;
            } else {
                if (l.out_dim != l.in_dim) {
                    throw DimensionError("activation layer " + std::to_string(i) + " must preserve width");
                }
                if (!l.group_name.empty()) {
                    throw ConfigError("activation layer " + std::to_string(i) + " cannot own a parameter group");
                }
                offsets_[i] = offset;
            }
            width = l.out_dim;
        }
        num_classes_ = layers_.back().out_dim;
        params_ = Vector::Zero(static_cast<Eigen::Index>(offset));
    }

    /// input -> [dense, act] x hidden.size() -> dense(num_classes).
    /// Groups are named dense_0 ... dense_L; weights use He (relu) or Glorot (tanh)
    /// uniform initialisation, biases start at zero.
    static Network mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t num_classes,
                       LayerKind activation, std::uint64_t seed) {
        if (activation == LayerKind::dense) {
            throw ConfigError("mlp activation must be relu or tanh");
        }
        std::vector<LayerSpec> specs;
        std::size_t width = input_dim;
        std::size_t g = 0;
        for (std::size_t h : hidden) {
            specs.push_back({LayerKind::dense, width, h, "dense_" + std::to_string(g++)});
            specs.push_back({activation, h, h, ""});
            width = h;
        }
        specs.push_back({LayerKind::dense, width, num_classes, "dense_" + std::to_string(g)});
        Network net(input_dim, std::move(specs));
        net.initialize(seed);
        return net;
    }

    void initialize(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const LayerSpec& l = layers_[i];
            if (l.kind != LayerKind::dense) {
                continue;
            }
            const bool feeds_tanh = i + 1 < layers_.size() && layers_[i + 1].kind == LayerKind::tanh;
            const double bound = feeds_tanh ? std::sqrt(6.0 / static_cast<double>(l.in_dim + l.out_dim))
                                            : std::sqrt(6.0 / static_cast<double>(l.in_dim));
            std::uniform_real_distribution<double> dist(-bound, bound);
            const std::size_t off = offsets_[i];
            for (std::size_t j = 0; j < l.out_dim * l.in_dim; ++j) {
                params_[static_cast<Eigen::Index>(off + j)] = dist(rng);
            }
            for (std::size_t j = 0; j < l.out_dim; ++j) {
                params_[static_cast<Eigen::Index>(off + l.out_dim * l.in_dim + j)] = 0.0;
            }
        }
    }

    std::size_t input_dim() const noexcept { return input_dim_; }
    std::size_t num_classes() const noexcept { return num_classes_; }
    std::size_t num_params() const noexcept { return static_cast<std::size_t>(params_.size()); }
    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    std::size_t layer_offset(std::size_t i) const { return offsets_.at(i); }

    const Vector& params() const noexcept { return params_; }
    Vector& params() noexcept { return params_; }

    void set_params(const Vector& p) {
        if (p.size() != params_.size()) {
            throw DimensionError("set_params: expected " + std::to_string(params_.size()) + " values, got " +
                                 std::to_string(p.size()));
        }
        params_ = p;
    }

    const std::vector<std::string>& group_names() const noexcept { return group_order_; }

    const ParamRange& group(const std::string& name) const {
        auto it = groups_.find(name);
        if (it == groups_.end()) {
            throw ConfigError("unknown parameter group '" + name + "'");
        }
        return it->second;
    }

    bool has_group(const std::string& name) const { return groups_.count(name) != 0; }

    /// Name of the final (logit) dense layer.
    const std::string& head_group() const { return layers_.back().group_name; }

    /// Width of the activation feeding the logit layer.
    std::size_t penultimate_dim() const { return layers_.back().in_dim; }

    /// Layer index owning a parameter group.
    std::size_t layer_of_group(const std::string& name) const {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (layers_[i].kind == LayerKind::dense && layers_[i].group_name == name) {
                return i;
            }
        }
        throw ConfigError("unknown parameter group '" + name + "'");
    }

    Eigen::Map<const RowMatrix> weight(std::size_t layer) const {
        const LayerSpec& l = layers_.at(layer);
        return {params_.data() + offsets_[layer], static_cast<Eigen::Index>(l.out_dim),
                static_cast<Eigen::Index>(l.in_dim)};
    }

    Eigen::Map<RowMatrix> weight(std::size_t layer) {
        const LayerSpec& l = layers_.at(layer);
        return {params_.data() + offsets_[layer], static_cast<Eigen::Index>(l.out_dim),
                static_cast<Eigen::Index>(l.in_dim)};
    }

    Eigen::Map<const Vector> bias(std::size_t layer) const {
        const LayerSpec& l = layers_.at(layer);
        return {params_.data() + offsets_[layer] + l.out_dim * l.in_dim, static_cast<Eigen::Index>(l.out_dim)};
    }

    Eigen::Map<Vector> bias(std::size_t layer) {
        const LayerSpec& l = layers_.at(layer);
        return {params_.data() + offsets_[layer] + l.out_dim * l.in_dim, static_cast<Eigen::Index>(l.out_dim)};
    }

private:
    std::size_t input_dim_ = 0;
    std::size_t num_classes_ = 0;
    std::vector<LayerSpec> layers_;
    std::vector<std::size_t> offsets_;
    std::map<std::string, ParamRange> groups_;
    std::vector<std::string> group_order_;
    Vector params_;
};

/// A set of parameter groups whose gradients are kept, flattened in layer order.
class ParamSubset {
public:
    ParamSubset() = default;

    ParamSubset(const Network& net, std::vector<std::string> groups) {
        if (groups.empty()) {
            throw ConfigError("parameter subset is empty");
        }
        std::set<std::string> unique(groups.begin(), groups.end());
        if (unique.size() != groups.size()) {
            throw ConfigError("parameter subset lists a group twice");
        }
        for (const auto& g : net.group_names()) {
            if (unique.count(g)) {
                const ParamRange& r = net.group(g);
                groups_.push_back(g);
                layers_.push_back(net.layer_of_group(g));
                ranges_.push_back({r.offset, r.size});
                local_offsets_.push_back(dim_);
                dim_ += r.size;
                unique.erase(g);
            }
        }
        if (!unique.empty()) {
            throw ConfigError("unknown parameter group '" + *unique.begin() + "'");
        }
    }

    static ParamSubset all(const Network& net) { return ParamSubset(net, net.group_names()); }
    static ParamSubset head(const Network& net) { return ParamSubset(net, {net.head_group()}); }

    /// Parse "a,b,c"; "all" and "head" are shorthands.
    static ParamSubset parse(const Network& net, const std::string& spec) {
        if (spec.empty() || spec == "head") return head(net);
        if (spec == "all") return all(net);
        std::vector<std::string> names;
        std::size_t start = 0;
        while (start <= spec.size()) {
            const std::size_t comma = spec.find(',', start);
            const std::string tok = spec.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
            if (!tok.empty()) names.push_back(tok);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        return ParamSubset(net, names);
    }

    std::size_t dim() const noexcept { return dim_; }
    bool empty() const noexcept { return dim_ == 0; }
    const std::vector<std::string>& groups() const noexcept { return groups_; }
    const std::vector<std::size_t>& layers() const noexcept { return layers_; }
    const std::vector<ParamRange>& ranges() const noexcept { return ranges_; }
    const std::vector<std::size_t>& local_offsets() const noexcept { return local_offsets_; }

    std::string descriptor() const {
        std::string s;
        for (std::size_t i = 0; i < groups_.size(); ++i) {
            if (i) s += ',';
            s += groups_[i];
        }
        return s;
    }

    /// Position of a layer's block in the subset vector, if the layer is included.
    std::optional<std::size_t> local_offset_of_layer(std::size_t layer) const {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (layers_[i] == layer) return local_offsets_[i];
        }
        return std::nullopt;
    }

    std::size_t lowest_layer() const { return layers_.empty() ? 0 : layers_.front(); }

    Vector gather(const Vector& full) const {
        Vector out(static_cast<Eigen::Index>(dim_));
        for (std::size_t i = 0; i < ranges_.size(); ++i) {
            out.segment(static_cast<Eigen::Index>(local_offsets_[i]), static_cast<Eigen::Index>(ranges_[i].size)) =
                full.segment(static_cast<Eigen::Index>(ranges_[i].offset), static_cast<Eigen::Index>(ranges_[i].size));
        }
        return out;
    }

    friend bool operator==(const ParamSubset& a, const ParamSubset& b) { return a.groups_ == b.groups_; }

private:
    std::vector<std::string> groups_;
    std::vector<std::size_t> layers_;
    std::vector<ParamRange> ranges_;
    std::vector<std::size_t> local_offsets_;
    std::size_t dim_ = 0;
};

/// Activations recorded during a batched forward pass. inputs[i] is the
/// (batch x in_dim) input of layer i; outputs.back() holds the logits.
struct ForwardCache {
    std::vector<RowMatrix> inputs;
    RowMatrix logits;
};

inline void require_finite(const RowMatrix& m, const char* what) {
    if (!m.allFinite()) {
        throw NumericalError(std::string("non-finite values in ") + what);
    }
}

inline ForwardCache forward_batch(const Network& net, const RowMatrix& x) {
    if (static_cast<std::size_t>(x.cols()) != net.input_dim()) {
        throw DimensionError("input has " + std::to_string(x.cols()) + " features, network expects " +
                             std::to_string(net.input_dim()));
    }
    ForwardCache cache;
    cache.inputs.reserve(net.layers().size());
    RowMatrix h = x;
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        const LayerSpec& l = net.layers()[i];
        cache.inputs.push_back(h);
        switch (l.kind) {
            case LayerKind::dense: {
                RowMatrix z = h * net.weight(i).transpose();
                z.rowwise() += net.bias(i).transpose();
                h = std::move(z);
                break;
            }
            case LayerKind::relu: h = h.cwiseMax(0.0); break;
            case LayerKind::tanh: h = h.array().tanh().matrix(); break;
        }
    }
    require_finite(h, "logits");
    cache.logits = std::move(h);
    return cache;
}

struct ForwardResult {
    Vector logits;
    Vector penultimate;
};

inline ForwardResult forward(const Network& net, const Eigen::Ref<const Vector>& x) {
    if (static_cast<std::size_t>(x.size()) != net.input_dim()) {
        throw DimensionError("input has " + std::to_string(x.size()) + " features, network expects " +
                             std::to_string(net.input_dim()));
    }
    RowMatrix row = x.transpose();
    ForwardCache cache = forward_batch(net, row);
    return {cache.logits.row(0).transpose(), cache.inputs.back().row(0).transpose()};
}

/// Penultimate activations for a batch (rows = samples).
inline RowMatrix penultimate_batch(const Network& net, const RowMatrix& x) {
    return forward_batch(net, x).inputs.back();
}

/// Back-propagates `seed` (batch x C, the derivative of a scalar w.r.t. the
/// logits of each row) and returns the batch-summed gradient restricted to
/// `subset`. Layers below the lowest subset layer are not visited.
inline Vector backward_batch(const Network& net, const ForwardCache& cache, const RowMatrix& seed,
                             const ParamSubset& subset) {
    if (subset.empty()) {
        throw ConfigError("gradient requested over an empty parameter subset");
    }
    Vector grad = Vector::Zero(static_cast<Eigen::Index>(subset.dim()));
    RowMatrix delta = seed;
    const std::size_t lowest = subset.lowest_layer();
    for (std::size_t ii = net.layers().size(); ii-- > lowest;) {
        const LayerSpec& l = net.layers()[ii];
        const RowMatrix& in = cache.inputs[ii];
        switch (l.kind) {
            case LayerKind::dense: {
                if (auto off = subset.local_offset_of_layer(ii)) {
                    const auto out = static_cast<Eigen::Index>(l.out_dim);
                    const auto inn = static_cast<Eigen::Index>(l.in_dim);
                    Eigen::Map<RowMatrix> gw(grad.data() + *off, out, inn);
                    gw.noalias() = delta.transpose() * in;
                    grad.segment(static_cast<Eigen::Index>(*off) + out * inn, out) = delta.colwise().sum().transpose();
                }
                if (ii > lowest) {
                    delta = delta * net.weight(ii);
                }
                break;
            }
            case LayerKind::relu: delta = delta.cwiseProduct((in.array() > 0.0).cast<double>().matrix()); break;
            case LayerKind::tanh: {
                const RowMatrix t = in.array().tanh().matrix();
                delta = delta.cwiseProduct((1.0 - t.array().square()).matrix());
                break;
            }
        }
    }
    return grad;
}

/// Derivative of the aggregated scalar output w.r.t. the logits.
inline Vector aggregation_seed(const Eigen::Ref<const Vector>& logits, const AggregationMode& head) {
    Vector seed = Vector::Zero(logits.size());
    switch (head.kind) {
        case AggregationMode::Kind::max_logit: seed[static_cast<Eigen::Index>(argmax_lowest(logits))] = 1.0; break;
        case AggregationMode::Kind::sum_logits: seed.setOnes(); break;
        case AggregationMode::Kind::single_head:
            if (head.head >= static_cast<std::size_t>(logits.size())) {
                throw ConfigError("head index " + std::to_string(head.head) + " out of range");
            }
            seed[static_cast<Eigen::Index>(head.head)] = 1.0;
            break;
    }
    return seed;
}

/// Gradient of max_c f^c, sum_c f^c, or f^c (per `head`) w.r.t. the subset.
/// max_logit differentiates the attained branch, lowest index on ties.
inline Vector per_sample_gradient(const Network& net, const Eigen::Ref<const Vector>& x, const AggregationMode& head,
                                  const ParamSubset& subset) {
    if (subset.empty()) {
        throw ConfigError("gradient requested over an empty parameter subset");
    }
    if (static_cast<std::size_t>(x.size()) != net.input_dim()) {
        throw DimensionError("input has " + std::to_string(x.size()) + " features, network expects " +
                             std::to_string(net.input_dim()));
    }
    RowMatrix row = x.transpose();
    const ForwardCache cache = forward_batch(net, row);
    const Vector seed = aggregation_seed(cache.logits.row(0).transpose(), head);
    return backward_batch(net, cache, seed.transpose(), subset);
}

/// Rows are per-sample gradients for each row of `x`.
inline RowMatrix per_sample_gradients(const Network& net, const RowMatrix& x, const AggregationMode& head,
                                      const ParamSubset& subset) {
    RowMatrix out(x.rows(), static_cast<Eigen::Index>(subset.dim()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        out.row(i) = per_sample_gradient(net, x.row(i).transpose(), head, subset).transpose();
    }
    return out;
}

inline Vector softmax(const Eigen::Ref<const Vector>& z, double temperature = 1.0) {
    const Vector s = z / temperature;
    const double m = s.maxCoeff();
    Vector e = (s.array() - m).exp().matrix();
    return e / e.sum();
}

inline double log_sum_exp(const Eigen::Ref<const Vector>& z) {
    const double m = z.maxCoeff();
    return m + std::log((z.array() - m).exp().sum());
}

/// Gradient of the cross-entropy -sum_c t_c log softmax(f(x))_c.
inline Vector per_sample_loss_gradient(const Network& net, const Eigen::Ref<const Vector>& x,
                                       const Eigen::Ref<const Vector>& target, const ParamSubset& subset) {
    if (static_cast<std::size_t>(target.size()) != net.num_classes()) {
        throw DimensionError("target has " + std::to_string(target.size()) + " entries, network has " +
                             std::to_string(net.num_classes()) + " classes");
    }
    if ((target.array() < 0.0).any() || std::abs(target.sum() - 1.0) > 1e-9) {
        throw ValidationError("target must be a probability vector summing to 1 (tolerance 1e-9)");
    }
    if (static_cast<std::size_t>(x.size()) != net.input_dim()) {
        throw DimensionError("input has " + std::to_string(x.size()) + " features, network expects " +
                             std::to_string(net.input_dim()));
    }
    RowMatrix row = x.transpose();
    const ForwardCache cache = forward_batch(net, row);
    const Vector seed = softmax(cache.logits.row(0).transpose()) - target;
    return backward_batch(net, cache, seed.transpose(), subset);
}

// ---------------------------------------------------------------------------
// Checkpoints: "SPOD0001", u32 input_dim, u32 layer count, per layer
// (u8 kind, u32 in, u32 out, string group), u64 parameter count, f64 blob.

inline void write_checkpoint(const Network& net, std::ostream& out) {
    io::Writer w(out);
    w.magic("SPOD0001");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(net.input_dim()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(net.layers().size()));
    for (const LayerSpec& l : net.layers()) {
        w.put<std::uint8_t>(static_cast<std::uint8_t>(l.kind));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(l.in_dim));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(l.out_dim));
        w.string(l.group_name);
    }
    w.put<std::uint64_t>(net.num_params());
    w.doubles(net.params().data(), net.num_params());
    w.check();
}

inline Network read_checkpoint(std::istream& in, const std::string& source = "checkpoint") {
    io::Reader r(in, source);
    r.expect_magic("SPOD0001");
    const auto input_dim = r.get<std::uint32_t>();
    const auto n_layers = r.get<std::uint32_t>();
    if (n_layers == 0 || n_layers > 4096) {
        throw IoError(source + ": implausible layer count");
    }
    std::vector<LayerSpec> specs;
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        LayerSpec l;
        const auto kind = r.get<std::uint8_t>();
        if (kind > 2) {
            throw IoError(source + ": unknown layer kind " + std::to_string(kind));
        }
        l.kind = static_cast<LayerKind>(kind);
        l.in_dim = r.get<std::uint32_t>();
        l.out_dim = r.get<std::uint32_t>();
        l.group_name = r.string(4096);
        specs.push_back(std::move(l));
    }
    Network net(input_dim, std::move(specs));
    const auto count = r.get<std::uint64_t>();
    if (count != net.num_params()) {
        throw IoError(source + ": parameter count mismatch");
    }
    Vector p(static_cast<Eigen::Index>(count));
    r.doubles(p.data(), count);
    r.expect_end();
    net.set_params(p);
    return net;
}

inline void save_checkpoint(const Network& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    write_checkpoint(net, out);
}

inline Network load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return read_checkpoint(in, path);
}

}  // namespace spod
