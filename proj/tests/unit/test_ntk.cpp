#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "spod/spod.hpp"

using namespace spod;

namespace {

LabeledDataset labelled(const RowMatrix& x, std::vector<std::uint32_t> labels, std::size_t c) {
    LabeledDataset d;
    d.inputs = x;
    d.labels = std::move(labels);
    d.num_classes = c;
    return d;
}

}  // namespace

TEST(EmpiricalNtk, LinearModelGivesInputGram) {
    Network net(3, {{LayerKind::dense, 3, 1, "w"}});
    std::mt19937_64 rng(1);
    const RowMatrix x = oracle::random_matrix(rng, 5, 3);
    const LabeledDataset d = labelled(x, {0, 0, 0, 0, 0}, 1);
    const ParamSubset w = ParamSubset::all(net);
    const NtkMatrix k = empirical_ntk(net, d, AggregationMode::sum_logits(), w);
    const Matrix expected = x * x.transpose() + Matrix::Ones(5, 5);  // bias contributes 1
    EXPECT_LT((k.values - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EmpiricalNtk, SingleSampleIsSquaredGradientNorm) {
    const Network net = Network::mlp(3, {4}, 2, LayerKind::tanh, 2);
    const RowMatrix x = RowMatrix::Constant(1, 3, 0.3);
    const NtkMatrix k = empirical_ntk(net, labelled(x, {1}, 2), AggregationMode::max_logit(), ParamSubset::all(net));
    const Vector g = per_sample_gradient(net, x.row(0).transpose(), AggregationMode::max_logit(), ParamSubset::all(net));
    ASSERT_EQ(k.values.rows(), 1);
    EXPECT_NEAR(k.values(0, 0), g.squaredNorm(), 1e-12);
}

TEST(EmpiricalNtk, MatchesDenseJacobianOracle) {
    const Network net = Network::mlp(3, {5}, 3, LayerKind::tanh, 3);
    std::mt19937_64 rng(4);
    const RowMatrix x = oracle::random_matrix(rng, 6, 3);
    const LabeledDataset d = labelled(x, {2, 0, 1, 0, 2, 1}, 3);
    const ParamSubset all = ParamSubset::all(net);
    const NtkMatrix k = empirical_ntk(net, d, AggregationMode::single_head(1), all);

    std::vector<std::size_t> idx(net.num_params());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Matrix jac(static_cast<Eigen::Index>(net.num_params()), 6);
    for (Eigen::Index i = 0; i < 6; ++i) {
        const Vector xi = x.row(i).transpose();
        jac.col(i) = oracle::finite_difference([&](const Vector& p) { return oracle::logits(net, p, xi)[1]; },
                                               net.params(), idx, 1e-6);
    }
    const Matrix dense = jac.transpose() * jac;
    // rows are class-sorted: reorder the oracle accordingly
    Matrix sorted(6, 6);
    for (Eigen::Index i = 0; i < 6; ++i) {
        for (Eigen::Index j = 0; j < 6; ++j) {
            sorted(i, j) = dense(static_cast<Eigen::Index>(k.source_index[static_cast<std::size_t>(i)]),
                                 static_cast<Eigen::Index>(k.source_index[static_cast<std::size_t>(j)]));
        }
    }
    EXPECT_LT((k.values - sorted).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, dense.cwiseAbs().maxCoeff()));
    EXPECT_EQ(k.sample_labels, (std::vector<std::uint32_t>{0, 0, 1, 1, 2, 2}));
    EXPECT_EQ(k.source_index, (std::vector<std::size_t>{1, 3, 2, 5, 0, 4}));
}

TEST(EmpiricalNtk, SymmetricPsdAndSpectrumMatchesPrimal) {
    const Network net = Network::mlp(4, {6}, 3, LayerKind::relu, 5);
    std::mt19937_64 rng(6);
    const RowMatrix x = oracle::random_matrix(rng, 9, 4);
    const LabeledDataset d = labelled(x, {0, 1, 2, 0, 1, 2, 0, 1, 2}, 3);
    const ParamSubset sub = ParamSubset::parse(net, "dense_1");
    const NtkMatrix k = empirical_ntk(net, d, AggregationMode::max_logit(), sub);
    EXPECT_LT((k.values - k.values.transpose()).cwiseAbs().maxCoeff(), 1e-9);
    const Vector dual = oracle::eigenvalues_descending(k.values);
    EXPECT_GE(dual(dual.size() - 1), -1e-8 * dual(0));

    const RowMatrix f = per_sample_gradients(net, x, AggregationMode::max_logit(), sub);
    const Vector primal = oracle::eigenvalues_descending(f.transpose() * f);
    for (Eigen::Index i = 0; i < dual.size(); ++i) {
        if (dual(i) > 1e-10 * dual(0)) {
            EXPECT_NEAR(dual(i), primal(i), 1e-8 * dual(0));
        }
    }
}

TEST(EmpiricalNtk, HeadSumIsSumOfHeadKernels) {
    const Network net = Network::mlp(3, {4}, 3, LayerKind::tanh, 7);
    std::mt19937_64 rng(8);
    const LabeledDataset d = labelled(oracle::random_matrix(rng, 4, 3), {0, 1, 2, 1}, 3);
    const ParamSubset all = ParamSubset::all(net);
    const NtkMatrix sum = empirical_ntk(net, d, NtkHeadMode::head_sum, AggregationMode::max_logit(), all);
    Matrix expected = Matrix::Zero(4, 4);
    for (std::size_t c = 0; c < 3; ++c) expected += empirical_ntk(net, d, AggregationMode::single_head(c), all).values;
    EXPECT_LT((sum.values - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EmpiricalNtk, EmptyBatchRejected) {
    const Network net = Network::mlp(2, {2}, 2, LayerKind::relu, 0);
    LabeledDataset d;
    d.num_classes = 2;
    d.inputs = RowMatrix(0, 2);
    EXPECT_THROW(empirical_ntk(net, d, AggregationMode::max_logit(), ParamSubset::all(net)), ValidationError);
}

TEST(BlockStructure, KroneckerLeadingTerm) {
    const Matrix k = kron_ones(Matrix::Identity(2, 2), 2);
    Matrix expected = Matrix::Zero(4, 4);
    expected.topLeftCorner(2, 2).setOnes();
    expected.bottomRightCorner(2, 2).setOnes();
    EXPECT_EQ(k, expected);
}

TEST(BlockStructure, PerfectAlignmentHasZeroResidual) {
    std::mt19937_64 rng(9);
    const Matrix means = oracle::random_matrix(rng, 7, 3);
    const std::size_t m = 4;
    RowMatrix f(12, 7);
    std::vector<std::uint32_t> labels;
    for (Eigen::Index i = 0; i < 12; ++i) {
        f.row(i) = means.col(i / 4).transpose();
        labels.push_back(static_cast<std::uint32_t>(i / 4));
    }
    NtkMatrix ntk;
    ntk.values = f * f.transpose();
    ntk.sample_labels = labels;
    const ClassMeanMatrix cm = class_means_from_rows(f, labels, 3);
    const BlockStructureReport r = block_structure(ntk, cm, m);
    EXPECT_LT(r.residual_norm, 1e-9 * r.leading_norm);
    EXPECT_LE(r.residual_norm, r.ntk_norm + r.leading_norm + 1e-9);
    EXPECT_GE(r.heatmap.minCoeff(), 0.0);
    EXPECT_LE(r.heatmap.maxCoeff(), 1.0);
}

TEST(BlockStructure, UnbalancedOrUnsortedRejected) {
    NtkMatrix ntk;
    ntk.values = Matrix::Identity(3, 3);
    ntk.sample_labels = {0, 0, 1};
    ClassMeanMatrix cm;
    cm.means = Matrix::Identity(2, 2);
    cm.global_mean = Vector::Zero(2);
    EXPECT_THROW(block_structure(ntk, cm, 2), ValidationError);
    ntk.values = Matrix::Identity(4, 4);
    ntk.sample_labels = {0, 1, 0, 1};
    EXPECT_THROW(block_structure(ntk, cm, 2), ValidationError);
}

TEST(BlockStructure, AlignmentRatioDefinitions) {
    NtkMatrix ntk;
    ntk.values = (Matrix(4, 4) << 5, 2, 1, 1, 2, 5, 1, 1, 1, 1, 5, 2, 1, 1, 2, 5).finished();
    ntk.sample_labels = {0, 0, 1, 1};
    ClassMeanMatrix cm;
    cm.means = Matrix::Identity(2, 2);
    cm.global_mean = Vector::Zero(2);
    const BlockStructureReport r = block_structure(ntk, cm, 2);
    EXPECT_DOUBLE_EQ(r.alignment_ratio, 2.0);
    EXPECT_DOUBLE_EQ(r.alignment_ratio_with_diagonal, 3.5);
    EXPECT_DOUBLE_EQ(r.heatmap(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(r.heatmap(0, 1), 0.4);
}

TEST(BlockStructure, HeatmapClipsNegatives) {
    const Matrix h = ntk_heatmap((Matrix(2, 2) << 2.0, -1.0, -1.0, 4.0).finished());
    EXPECT_EQ(h(0, 1), 0.0);
    EXPECT_EQ(h(1, 1), 1.0);
    EXPECT_EQ(h(0, 0), 0.5);
}

TEST(BlockStructure, OfBatchNeedsBalance) {
    const Network net = Network::mlp(2, {3}, 2, LayerKind::tanh, 0);
    const LabeledDataset d = labelled(RowMatrix::Random(3, 2), {0, 0, 1}, 2);
    EXPECT_THROW(block_structure_of_batch(net, d, AggregationMode::max_logit(), ParamSubset::all(net)),
                 ValidationError);
}
