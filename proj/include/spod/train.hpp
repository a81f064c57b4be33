#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "spod/data.hpp"
#include "spod/nn.hpp"

namespace spod {

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 120;
    double lr = 0.05;
    double momentum = 0.9;  // Nesterov; 0 gives plain SGD
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double loss = 0.0;      ///< mean cross-entropy over the full set after the epoch
    double accuracy = 0.0;  ///< argmax accuracy over the full set after the epoch

    friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainLog {
    std::vector<EpochStats> epochs;

    double final_accuracy() const { return epochs.empty() ? 0.0 : epochs.back().accuracy; }
    friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

/// Mean softmax cross-entropy and accuracy of `net` on `data`.
inline EpochStats evaluate_classifier(const Network& net, const LabeledDataset& data) {
    const ForwardCache cache = forward_batch(net, data.inputs);
    double loss = 0.0;
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < cache.logits.rows(); ++i) {
        const Vector z = cache.logits.row(i).transpose();
        const auto y = static_cast<Eigen::Index>(data.labels[static_cast<std::size_t>(i)]);
        loss += log_sum_exp(z) - z[y];
        if (static_cast<Eigen::Index>(argmax_lowest(z)) == y) ++correct;
    }
    EpochStats s;
    s.loss = loss / static_cast<double>(data.size());
    s.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return s;
}

/// Mini-batch SGD on softmax cross-entropy with Nesterov momentum and L2
/// weight decay (applied to every parameter). Updates `net` in place.
inline TrainLog train_sgd(Network& net, const LabeledDataset& data, const TrainConfig& cfg) {
    data.validate();
    if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ValidationError("learning rate must be >= 0");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
    if (!(cfg.weight_decay >= 0.0)) throw ValidationError("weight decay must be >= 0");
    if (cfg.batch_size == 0) throw ValidationError("batch size must be positive");
    if (data.size() == 0) throw ValidationError("cannot train on an empty dataset");
    if (data.input_dim() != net.input_dim()) {
        throw DimensionError("dataset has " + std::to_string(data.input_dim()) + " features, network expects " +
                             std::to_string(net.input_dim()));
    }
    if (data.num_classes != net.num_classes()) {
        throw DimensionError("dataset has " + std::to_string(data.num_classes) + " classes, network has " +
                             std::to_string(net.num_classes()));
    }

    const ParamSubset everything = ParamSubset::all(net);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Vector velocity = Vector::Zero(static_cast<Eigen::Index>(net.num_params()));

    TrainLog log;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - start);
            RowMatrix x(static_cast<Eigen::Index>(n), data.inputs.cols());
            for (std::size_t i = 0; i < n; ++i) {
                x.row(static_cast<Eigen::Index>(i)) = data.inputs.row(static_cast<Eigen::Index>(order[start + i]));
            }
            ForwardCache cache;
            try {
                cache = forward_batch(net, x);
            } catch (const NumericalError&) {
                throw TrainingDivergedError(epoch, "non-finite logits");
            }
            RowMatrix seed(static_cast<Eigen::Index>(n), cache.logits.cols());
            for (std::size_t i = 0; i < n; ++i) {
                const auto r = static_cast<Eigen::Index>(i);
                Vector p = softmax(cache.logits.row(r).transpose());
                p[static_cast<Eigen::Index>(data.labels[order[start + i]])] -= 1.0;
                seed.row(r) = p.transpose() / static_cast<double>(n);
            }
            Vector grad = backward_batch(net, cache, seed, everything);
            grad += cfg.weight_decay * net.params();
            if (!grad.allFinite()) {
                throw TrainingDivergedError(epoch, "non-finite gradient");
            }
            if (cfg.momentum > 0.0) {
                velocity = cfg.momentum * velocity + grad;
                net.params() -= cfg.lr * (grad + cfg.momentum * velocity);
            } else {
                net.params() -= cfg.lr * grad;
            }
        }
        EpochStats stats;
        try {
            stats = evaluate_classifier(net, data);
        } catch (const NumericalError&) {
            throw TrainingDivergedError(epoch, "non-finite logits");
        }
        if (!std::isfinite(stats.loss)) {
            throw TrainingDivergedError(epoch, "loss is NaN");
        }
        stats.epoch = epoch;
        log.epochs.push_back(stats);
    }
    return log;
}

}  // namespace spod
