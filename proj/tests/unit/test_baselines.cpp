#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "spod/spod.hpp"

using namespace spod;
using namespace spod::baselines;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

}  // namespace

TEST(LogitScores, ClosedForms) {
    const Vector z = vec({1.0, 2.0, 0.5});
    EXPECT_EQ(max_logit(z), 2.0);
    EXPECT_NEAR(msp(z), oracle::softmax_max(z), 1e-15);
    EXPECT_NEAR(energy(z), oracle::log_sum_exp(z), 1e-14);
    EXPECT_NEAR(energy(z, 2.0), 2.0 * oracle::log_sum_exp(z / 2.0), 1e-14);
}

TEST(LogitScores, OdinAtUnitTemperatureIsMsp) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
        const Vector z = 4.0 * oracle::random_vector(rng, 5);
        EXPECT_NEAR(odin(z, 1.0), msp(z), 1e-15);
        EXPECT_NEAR(odin(z, 1000.0), oracle::softmax_max(z, 1000.0), 1e-15);
    }
    EXPECT_THROW(odin(vec({1.0}), 0.0), ValidationError);
}

TEST(LogitScores, EnergyIsStableForLargeLogits) {
    EXPECT_NEAR(energy(vec({1000.0, 1000.0})), 1000.0 + std::log(2.0), 1e-10);
    EXPECT_TRUE(std::isfinite(energy(vec({-1000.0, -2000.0}))));
}

TEST(Dice, SparsifiesLowestMagnitudeLogitWeights) {
    Network net(2, {{LayerKind::dense, 2, 2, "w"}});
    net.params() << 0.1, -0.4, 0.3, -0.2, 0.0, 0.0;
    const DiceState s = dice_fit(net, 0.5);
    EXPECT_EQ(s.weight, (RowMatrix(2, 2) << 0.0, -0.4, 0.3, 0.0).finished());
    EXPECT_EQ(dice_fit(net, 0.99).weight.cwiseAbs().sum(), 0.4);
    EXPECT_NEAR(dice_score(s, vec({1.0, 1.0})), oracle::log_sum_exp(vec({-0.4, 0.3})), 1e-14);
    EXPECT_THROW(dice_fit(net, 1.0), ValidationError);
    EXPECT_THROW(dice_score(s, vec({1.0})), ValidationError);
}

TEST(Mahalanobis, MatchesDirectFormula) {
    std::mt19937_64 rng(2);
    RowMatrix f = oracle::random_matrix(rng, 60, 3);
    std::vector<std::uint32_t> labels;
    for (Eigen::Index i = 0; i < 60; ++i) {
        labels.push_back(static_cast<std::uint32_t>(i % 2));
        f(i, 0) += i % 2 ? 5.0 : -5.0;
    }
    const MahalanobisState s = mahalanobis_fit(f, labels, 2);
    Matrix cov = Matrix::Zero(3, 3);
    for (Eigen::Index i = 0; i < 60; ++i) {
        const Vector r = (f.row(i) - s.means.row(labels[static_cast<std::size_t>(i)])).transpose();
        cov += r * r.transpose() / 60.0;
    }
    const Vector z = vec({5.0, 0.3, -0.2});
    const Vector r = z - s.means.row(1).transpose();
    EXPECT_NEAR(mahalanobis_min_distance(s, z), r.dot(cov.inverse() * r), 1e-4);
    EXPECT_GT(mahalanobis_score(s, z), mahalanobis_score(s, vec({0.0, 10.0, 0.0})));
    EXPECT_THROW(mahalanobis_fit(f, {0, 1}, 2), ValidationError);
    EXPECT_THROW(mahalanobis_fit(f, labels, 3), EmptyClassError);
}

TEST(Knn, KthNeighbourDistanceOnUnitSphere) {
    const RowMatrix bank = (RowMatrix(3, 2) << 1, 0, 0, 2, -3, 0).finished();
    const KnnState s = knn_fit(bank, 2);
    EXPECT_NEAR(knn_distance(s, vec({5.0, 0.0})), std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(knn_score(s, vec({0.0, 1.0})), -std::sqrt(2.0), 1e-15);
    EXPECT_THROW(knn_fit(bank, 4), ValidationError);
    EXPECT_THROW(knn_fit(bank, 0), ValidationError);
    EXPECT_THROW(knn_distance(s, vec({1.0, 0.0, 0.0})), ValidationError);
}

TEST(Knn, BankSubsamplingIsSeeded) {
    std::mt19937_64 rng(3);
    const RowMatrix f = oracle::random_matrix(rng, 100, 4);
    EXPECT_EQ(knn_fit(f, 3, 20, 7).bank, knn_fit(f, 3, 20, 7).bank);
    EXPECT_EQ(knn_fit(f, 3, 20, 7).bank.rows(), 20);
    EXPECT_THROW(knn_fit(f, 30, 20, 7), ValidationError);
}

TEST(React, ClipsAtActivationQuantile) {
    Network net(2, {{LayerKind::dense, 2, 1, "w"}});
    net.params() << 1.0, 1.0, 0.0;
    RowMatrix feats(5, 2);
    feats << 0, 1, 2, 3, 4, 5, 6, 7, 8, 9;
    const ReactState s = react_fit(net, feats, 0.5);
    EXPECT_DOUBLE_EQ(s.threshold, quantile(std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 0.5));
    EXPECT_DOUBLE_EQ(react_logits(s, vec({100.0, 1.0}))(0), s.threshold + 1.0);
    EXPECT_THROW(react_fit(net, RowMatrix::Ones(2, 3)), ValidationError);
}

TEST(Nci, ProjectionOnPredictedClassWeight) {
    Network net(2, {{LayerKind::dense, 2, 2, "w"}});
    net.params() << 3.0, 0.0, 0.0, 1.0, 0.0, 0.0;
    const NciState s = nci_fit(net, (RowMatrix(2, 2) << 1, 1, -1, -1).finished());
    EXPECT_DOUBLE_EQ(nci_score(s, vec({2.0, 0.5})), 2.0);
    EXPECT_DOUBLE_EQ(nci_score(s, vec({0.1, 4.0})), 4.0);
}

TEST(RevisitedPca, ReconstructionErrorOracle) {
    const Matrix comps = Matrix::Identity(3, 1);
    EXPECT_DOUBLE_EQ(reconstruction_error(Vector::Zero(3), comps, vec({1.0, 3.0, 4.0})), 5.0);
    EXPECT_DOUBLE_EQ(reconstruction_error(Vector::Ones(3), comps, vec({1.0, 1.0, 1.0})), 0.0);
}

TEST(RevisitedPca, InSubspaceScoresHigherThanOrthogonal) {
    Network net = Network::mlp(4, {6}, 3, LayerKind::relu, 4);
    std::mt19937_64 rng(5);
    RowMatrix feats(80, 6);
    const Matrix basis = oracle::random_orthonormal(rng, 6, 2);
    for (Eigen::Index i = 0; i < 80; ++i) feats.row(i) = (basis * oracle::random_vector(rng, 2)).transpose();
    const RevisitedPcaState s = revisited_pca_fit(net, feats);
    EXPECT_LE(s.components.cols(), 2);
    const Vector in = basis * vec({0.1, 0.05});
    Vector out = Vector::Ones(6) * 0.05;
    out -= basis * (basis.transpose() * out);
    EXPECT_GT(revisited_pca_score(s, in) - energy(react_logits(s.head, in)),
              revisited_pca_score(s, out) - energy(react_logits(s.head, out)));
}

TEST(Corp, RandomFeaturesApproximateGaussianKernel) {
    const double gamma = 0.5;
    const CorpState s = corp_sampler(5, 4096, gamma, 6);
    std::mt19937_64 rng(7);
    for (int i = 0; i < 50; ++i) {
        const Vector x = oracle::random_vector(rng, 5);
        const Vector y = oracle::random_vector(rng, 5);
        const double approx = corp_features(s, x).dot(corp_features(s, y));
        const double exact = oracle::gaussian_kernel(x / x.norm(), y / y.norm(), gamma);
        EXPECT_NEAR(approx, exact, 0.05);
    }
}

TEST(Corp, DegenerateGammaFlagged) {
    EXPECT_TRUE(corp_sampler(3, 16, 0.0, 1).degenerate);
    std::mt19937_64 rng(8);
    const CorpState s = corp_fit(oracle::random_matrix(rng, 20, 3), 16, 0.0);
    EXPECT_TRUE(s.degenerate);
    EXPECT_TRUE(std::isfinite(corp_score(s, vec({1.0, 2.0, 3.0}))));
    EXPECT_THROW(corp_sampler(3, 0, 0.5, 1), ValidationError);
}

TEST(Corp, InDistributionScoresHigher) {
    std::mt19937_64 rng(9);
    RowMatrix f(200, 4);
    for (Eigen::Index i = 0; i < 200; ++i) f.row(i) = (vec({1.0, 0.0, 0.0, 0.0}) + 0.05 * oracle::random_vector(rng, 4)).transpose();
    const CorpState s = corp_fit(f, 512, 0.5, 0.9, 10);
    EXPECT_GT(corp_score(s, vec({1.0, 0.01, 0.0, 0.0})), corp_score(s, vec({0.0, 0.0, 1.0, 0.0})));
    EXPECT_THROW(corp_score(s, vec({1.0, 0.0})), ValidationError);
}
