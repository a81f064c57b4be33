#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "spod/spod.hpp"

using namespace spod;

namespace {

PipelineConfig small_pipeline(std::uint64_t seed) {
    PipelineConfig cfg;
    cfg.data.num_classes = 3;
    cfg.data.input_dim = 8;
    cfg.data.samples_per_class = 40;
    cfg.hidden = {16};
    cfg.train.epochs = 15;
    cfg.train.batch_size = 30;
    cfg.seed = seed;
    return cfg;
}

LabeledDataset rows_of(std::initializer_list<double> v, const std::string& name) {
    LabeledDataset d;
    d.name = name;
    d.labeled = false;
    d.inputs = RowMatrix(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) d.inputs(i++, 0) = x;
    return d;
}

}  // namespace

TEST(Auroc, WorkedExample) {
    EXPECT_DOUBLE_EQ(auroc({{0.9, 0.8}, {0.85, 0.1}, true}), 0.75);
    EXPECT_DOUBLE_EQ(auroc({{1.0, 2.0}, {3.0, 4.0}, true}), 0.0);
    EXPECT_DOUBLE_EQ(auroc({{0.5}, {0.5}, true}), 0.5);
    EXPECT_DOUBLE_EQ(auroc({{0.9, 0.8}, {0.85, 0.1}, false}), 0.25);
}

TEST(Auroc, MatchesPairwiseOracleWithTies) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> small(0, 5);
    std::uniform_int_distribution<int> size(1, 40);
    for (int t = 0; t < 200; ++t) {
        ScoredSet s;
        for (int i = size(rng); i > 0; --i) s.id_scores.push_back(small(rng) * 0.5);
        for (int i = size(rng); i > 0; --i) s.ood_scores.push_back(small(rng) * 0.5 - 0.5);
        EXPECT_EQ(auroc(s), oracle::auroc(s.id_scores, s.ood_scores));
    }
}

TEST(Auroc, InvariantUnderMonotoneTransform) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    ScoredSet s;
    for (int i = 0; i < 50; ++i) s.id_scores.push_back(n(rng) + 1.0);
    for (int i = 0; i < 30; ++i) s.ood_scores.push_back(n(rng));
    ScoredSet t = s;
    for (auto* v : {&t.id_scores, &t.ood_scores}) {
        for (double& x : *v) x = std::exp(3.0 * x) + 2.0;
    }
    EXPECT_EQ(auroc(s), auroc(t));
    EXPECT_EQ(fpr_at_tpr(s), fpr_at_tpr(t));
    ScoredSet swapped{s.ood_scores, s.id_scores, true};
    EXPECT_NEAR(auroc(swapped), 1.0 - auroc(s), 1e-15);
}

TEST(Auroc, UndefinedInputs) {
    EXPECT_THROW(auroc({{}, {1.0}, true}), MetricError);
    EXPECT_THROW(auroc({{1.0}, {std::nan("")}, true}), MetricError);
    EXPECT_THROW(fpr_at_tpr({{1.0}, {0.0}, true}, 0.0), MetricError);
    EXPECT_THROW(fpr_at_tpr({{1.0}, {0.0}, true}, 1.5), MetricError);
}

TEST(Fpr, EvenlySpacedExample) {
    ScoredSet s;
    for (int i = 1; i <= 20; ++i) s.id_scores.push_back(static_cast<double>(i));
    for (int i = 0; i < 20; ++i) s.ood_scores.push_back(static_cast<double>(i) + 0.5);
    // 19 of 20 ID scores at or above 2 -> OOD 2.5..19.5 pass: 18 of 20
    EXPECT_DOUBLE_EQ(fpr_at_tpr(s), 0.9);
    EXPECT_DOUBLE_EQ(fpr_at_tpr(s), oracle::fpr_threshold_scan(s.id_scores, s.ood_scores, 0.95));
    EXPECT_EQ(required_id_count(0.95, 20), 19u);
    EXPECT_EQ(required_id_count(0.95, 21), 20u);
    EXPECT_EQ(required_id_count(1.0, 7), 7u);
}

TEST(Fpr, MatchesThresholdScanOracle) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> small(0, 8);
    std::uniform_int_distribution<int> size(1, 60);
    for (int t = 0; t < 200; ++t) {
        ScoredSet s;
        for (int i = size(rng); i > 0; --i) s.id_scores.push_back(small(rng));
        for (int i = size(rng); i > 0; --i) s.ood_scores.push_back(small(rng) - 2);
        for (double tpr : {0.5, 0.9, 0.95, 1.0}) {
            EXPECT_EQ(fpr_at_tpr(s, tpr), oracle::fpr_threshold_scan(s.id_scores, s.ood_scores, tpr));
        }
    }
}

TEST(Benchmark, FailingDetectorIsIsolated) {
    Detector good{"identity", [](const Eigen::Ref<const Vector>& x) { return x(0); }, std::nullopt};
    Detector bad{"fragile", [](const Eigen::Ref<const Vector>& x) {
                     if (x(0) < 0.0) throw NumericalError("negative input");
                     return x(0);
                 },
                 std::nullopt};
    LabeledDataset id = rows_of({1.0, 2.0, 3.0, 4.0}, "id_test");
    const EvalReport r =
        run_benchmark({good, bad}, id, {rows_of({0.5, 1.5}, "near"), rows_of({-1.0, 0.0}, "far")});
    ASSERT_EQ(r.rows.size(), 3u);
    ASSERT_EQ(r.failures.size(), 1u);
    EXPECT_EQ(r.failures[0].detector, "fragile");
    EXPECT_EQ(r.failures[0].dataset, "far");
    EXPECT_DOUBLE_EQ(r.find("identity", "near")->auroc, 0.875);
    EXPECT_DOUBLE_EQ(r.find("identity", "far")->auroc, 1.0);
}

TEST(Benchmark, NonFiniteScoresFailTheRow) {
    Detector nan{"nan", [](const Eigen::Ref<const Vector>&) { return std::nan(""); }, std::nullopt};
    const EvalReport r = run_benchmark({nan}, rows_of({1.0}, "id"), {rows_of({2.0}, "ood")});
    EXPECT_TRUE(r.rows.empty());
    EXPECT_EQ(r.failures.size(), 1u);
}

TEST(Baselines, UnknownMethodRejected) {
    auto net = std::make_shared<const Network>(Network::mlp(2, {3}, 2, LayerKind::relu, 1));
    LabeledDataset train = rows_of({1.0}, "t");
    EXPECT_THROW(make_baseline("nope", net, train), ConfigError);
    EXPECT_EQ(baseline_methods().size(), 11u);
}

TEST(Seeds, DerivedStreamsDiffer) {
    EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
    EXPECT_NE(derive_seed(1, 1), derive_seed(2, 1));
    EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
}

TEST(Pipeline, RerunIsByteIdentical) {
    const PipelineConfig cfg = small_pipeline(11);
    std::ostringstream a;
    std::ostringstream b;
    write_report_csv(run_pipeline(cfg).report, a);
    write_report_csv(run_pipeline(cfg).report, b);
    EXPECT_EQ(a.str(), b.str());
    EXPECT_NE(a.str().find("# schema: spod.report.csv/1"), std::string::npos);
    EXPECT_NE(a.str().find("gradpca,ood_shifted_means"), std::string::npos);
    EXPECT_NE(a.str().find("NA,NA"), std::string::npos);
}

TEST(Pipeline, ReportJsonCarriesScores) {
    const PipelineResult r = run_pipeline(small_pipeline(12));
    const nlohmann::json j = report_json(r.report);
    EXPECT_EQ(j["schema"], "spod.report.json/1");
    ASSERT_FALSE(j["rows"].empty());
    EXPECT_EQ(j["rows"][0]["id_scores"].size(), r.report.rows[0].n_id);
    for (const auto& row : r.report.rows) {
        EXPECT_GE(row.auroc, 0.0);
        EXPECT_LE(row.auroc, 1.0);
    }
}

TEST(Sweep, EpsilonRankNondecreasing) {
    const EvalReport r = sweep(SweepParam::epsilon, {"0.5", "0.8", "0.95", "0.99", "1"}, small_pipeline(13));
    EXPECT_TRUE(r.failures.empty());
    std::size_t prev = 0;
    for (const char* v : {"0.5", "0.8", "0.95", "0.99", "1"}) {
        const ReportRow* row = r.find("gradpca", "ood_shifted_means", v);
        ASSERT_NE(row, nullptr);
        EXPECT_GE(*row->retained_k, prev);
        prev = *row->retained_k;
    }
}

TEST(Sweep, BadValueIsolated) {
    const EvalReport r = sweep(SweepParam::epsilon, {"0.9", "abc", "2"}, small_pipeline(14));
    EXPECT_NE(r.find("gradpca", "ood_shifted_means", "0.9"), nullptr);
    EXPECT_EQ(r.failures.size(), 2u);
    EXPECT_THROW(parse_sweep_param("depth"), ConfigError);
}
