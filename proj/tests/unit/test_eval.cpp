#include <gtest/gtest.h>

#include <random>

#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"
#include "malcl/eval.hpp"

using namespace malcl;

namespace {

std::vector<std::vector<double>> random_matrix(std::mt19937_64& rng, std::size_t T) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> P(T, std::vector<double>(T));
  for (auto& row : P)
    for (auto& v : row) v = u(rng);
  return P;
}

}  // namespace

TEST(Metrics, WorkedExamples) {
  EXPECT_DOUBLE_EQ(*accuracy({9, 1, 89, 1}), 0.98);
  EXPECT_DOUBLE_EQ(*sensitivity({8, 0, 0, 2}), 0.8);
  EXPECT_FALSE(sensitivity({0, 3, 4, 0}).has_value());
  EXPECT_FALSE(specificity({3, 0, 0, 4}).has_value());
  EXPECT_FALSE(accuracy({}).has_value());
}

TEST(Metrics, AccuracyIsBetweenSensitivityAndSpecificity) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    Confusion c{static_cast<long>(rng() % 50), static_cast<long>(rng() % 50), static_cast<long>(rng() % 50),
                static_cast<long>(rng() % 50)};
    const auto a = accuracy(c), se = sensitivity(c), sp = specificity(c);
    if (!se || !sp) continue;
    EXPECT_GE(*a, std::min(*se, *sp) - 1e-12);
    EXPECT_LE(*a, std::max(*se, *sp) + 1e-12);
  }
}

TEST(ImageConfusion, CountsAndErrors) {
  EXPECT_EQ(image_confusion({true, false}, {true, false}), (Confusion{1, 0, 1, 0}));
  EXPECT_EQ(image_confusion({true, true, true}, {false, false, false}), (Confusion{0, 3, 0, 0}));
  EXPECT_THROW(image_confusion({true}, {true, false}), Error);
  std::mt19937_64 rng(3);
  std::vector<bool> p, t;
  Confusion want;
  for (int i = 0; i < 20; ++i) {
    p.push_back(rng() & 1);
    t.push_back(rng() & 1);
    want.tp += p.back() && t.back();
    want.fp += p.back() && !t.back();
    want.tn += !p.back() && !t.back();
    want.fn += !p.back() && t.back();
  }
  EXPECT_EQ(image_confusion(p, t), want);
}

TEST(MatchRbc, WorkedCases) {
  const BoundingBox a(0.3, 0.3, 0.1, 0.1), b(0.7, 0.7, 0.1, 0.1);
  std::vector<Annotation> truth{{a, CellClass::RbcAny}, {a, CellClass::RbcInfected}, {b, CellClass::RbcAny}};
  std::vector<CellVerdict> v{{a, true, 0.9, 0, 0}, {b, false, 0.8, 1, -1}};
  EXPECT_EQ(match_rbc(v, truth), (Confusion{1, 0, 1, 0}));
  // a missed infected cell is a false negative, a missed healthy cell is ignored
  EXPECT_EQ(match_rbc(std::vector<CellVerdict>{}, truth), (Confusion{0, 0, 0, 1}));
  // a spurious infected verdict is a false positive
  std::vector<CellVerdict> extra{{BoundingBox(0.1, 0.9, 0.05, 0.05), true, 0.5, -1, 0}};
  EXPECT_EQ(match_rbc(extra, truth), (Confusion{0, 1, 0, 1}));
}

TEST(MatchRbc, AgreesWithExhaustiveOracle) {
  std::mt19937_64 rng(21);
  const std::vector<BoundingBox> anchors{{0.3, 0.3, 0.12, 0.12}, {0.34, 0.32, 0.12, 0.1}, {0.7, 0.7, 0.1, 0.1}};
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<Annotation> truth;
    const int nt = static_cast<int>(rng() % 4);
    for (int i = 0; i < nt; ++i)
      truth.push_back({oracle::random_box(rng, anchors), rng() % 3 ? CellClass::RbcAny : CellClass::RbcInfected});
    std::vector<CellVerdict> v;
    const int nv = static_cast<int>(rng() % 4);
    for (int i = 0; i < nv; ++i)
      v.push_back({oracle::random_box(rng, anchors), static_cast<bool>(rng() & 1), oracle::random_confidence(rng), -1, -1});
    EXPECT_EQ(match_rbc(v, truth), oracle::match(v, truth, 0.5)) << "trial " << trial;
  }
}

TEST(Transfer, WorkedExamples) {
  PerformanceMatrix P(2);
  P.set(0, 0, 0.9);
  P.set(1, 0, 0.8);
  P.set(1, 1, 0.7);
  EXPECT_NEAR(*backward_transfer(P).value, -0.1, 1e-12);
  PerformanceMatrix Q(3);
  Q.set(0, 1, 0.6);
  Q.set(1, 2, 0.7);
  std::vector<Metric> b{std::nullopt, 0.5, 0.5};
  EXPECT_NEAR(*forward_transfer(Q, b).value, 0.15, 1e-12);
  EXPECT_THROW(forward_transfer(Q, std::vector<Metric>{0.5}), Error);
  PerformanceMatrix R(5);
  for (int i = 0; i < 5; ++i) R.set(4, i, 0.9 - 0.1 * i);
  EXPECT_NEAR(*average_performance(R).value, 0.7, 1e-12);
  EXPECT_FALSE(backward_transfer(PerformanceMatrix(1)).value.has_value());
  EXPECT_FALSE(forward_transfer(PerformanceMatrix(1), std::vector<Metric>{0.5}).value.has_value());
}

TEST(Transfer, MatchesClosedFormOnRandomMatrices) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const auto P = random_matrix(rng, 5);
    const auto b = random_matrix(rng, 1)[0];
    std::vector<double> bb(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : bb) v = u(rng);
    const auto M = oracle::to_matrix(P);
    std::vector<Metric> bm(bb.begin(), bb.end());
    EXPECT_NEAR(*average_performance(M).value, oracle::average(P), 1e-12);
    EXPECT_NEAR(*backward_transfer(M).value, oracle::bwt(P), 1e-12);
    EXPECT_NEAR(*forward_transfer(M, bm).value, oracle::fwt(P, bb), 1e-12);
    (void)b;
  }
}

TEST(Transfer, UnchangedDiagonalGivesZeroBwt) {
  std::mt19937_64 rng(4);
  auto P = random_matrix(rng, 5);
  for (int i = 0; i < 5; ++i) P[4][i] = P[i][i];
  EXPECT_EQ(*backward_transfer(oracle::to_matrix(P)).value, 0.0);
}

TEST(Transfer, UndefinedEntriesAreSkippedAndCounted) {
  PerformanceMatrix P(3);
  P.set(2, 0, 0.5);
  P.set(2, 1, std::nullopt);
  P.set(2, 2, 0.7);
  const auto av = average_performance(P);
  EXPECT_NEAR(*av.value, 0.6, 1e-12);
  EXPECT_EQ(av.skipped, 1);
  PerformanceMatrix U(2);
  U.set(1, 0, std::nullopt);
  U.set(1, 1, std::nullopt);
  EXPECT_FALSE(average_performance(U).value.has_value());
  EXPECT_EQ(average_performance(U).skipped, 2);
}

TEST(Matrix, BaselineFillsRowOneAndEvaluationIsPure) {
  const auto s = fixture::tiny_stream(2, 3);
  StrategyRun run;
  run.strategy = Strategy::Baseline;
  run.pipelines.push_back(build_reference_pipeline(1, 64));
  PipelineConfig cfg;
  const auto P = build_matrix(run, s, MetricKind::Accuracy, Level::Image, cfg);
  EXPECT_TRUE(P.filled(0, 0) && P.filled(0, 1));
  EXPECT_FALSE(P.filled(1, 0));
  EXPECT_EQ(evaluate_run(run, s, cfg).at(0, 1), evaluate_run(run, s, cfg).at(0, 1));
  // a silent random detector predicts every image negative
  const auto& test = s.tasks[1].test;
  long neg = 0;
  for (const auto& r : test) neg += !r.positive();
  EXPECT_DOUBLE_EQ(*P.at(0, 1), static_cast<double>(neg) / static_cast<double>(test.size()));
  StrategyRun joint;
  joint.strategy = Strategy::Joint;
  joint.pipelines = run.pipelines;
  EXPECT_THROW(build_matrix(joint, s, MetricKind::Accuracy, Level::Image, cfg), Error);
}

TEST(RandomBaseline, DeterministicPerSeeds) {
  const auto s = fixture::tiny_stream(2, 3);
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto a = random_baseline(s, seeds, PipelineConfig{}, 64);
  const auto b = random_baseline(s, seeds, PipelineConfig{}, 64);
  for (Level l : kAllLevels)
    for (MetricKind m : kAllMetrics) {
      const auto x = a.get(l, m), y = b.get(l, m);
      ASSERT_EQ(x.size(), 2u);
      EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
    }
}
