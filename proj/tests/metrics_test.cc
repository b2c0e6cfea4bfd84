/*
 * Copyright 2026 The medcf Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "medcf/metrics.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>
#include <random>

#include "medcf/error.h"
#include "test_util.h"

namespace medcf {
namespace {

// Pair-count oracle: O(n^2) over every (positive, negative) pair.
double PairCountAuc(const std::vector<double>& s,
                    const std::vector<double>& y) {
  double good = 0, pairs = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (y[i] < 0.5) continue;
    for (size_t j = 0; j < s.size(); ++j) {
      if (y[j] > 0.5) continue;
      pairs += 1;
      good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return good / pairs;
}

TEST(RocAucTest, HandFixture) {
  const std::vector<double> s = {0.9, 0.8, 0.7, 0.6};
  const std::vector<double> y = {1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(RocAuc(s, y), 0.75);
  EXPECT_DOUBLE_EQ(
      RocAuc(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0}), 0.5);
  EXPECT_THROW(RocAuc(std::vector<double>{0.1, 0.2}, std::vector<double>{1, 1}),
               NumericError);
}

TEST(RocAucTest, MatchesPairCountWithTies) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> level(0, 9);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(300), y(300);
    for (size_t i = 0; i < s.size(); ++i) {
      s[i] = level(rng) / 10.0;
      y[i] = coin(rng);
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_NEAR(RocAuc(s, y), PairCountAuc(s, y), 1e-12);
  }
}

TEST(RocAucTest, RandomScoresNearHalf) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> s(20000), y(20000);
  for (size_t i = 0; i < s.size(); ++i) {
    s[i] = u(rng);
    y[i] = coin(rng);
  }
  EXPECT_NEAR(RocAuc(s, y), 0.5, 0.02);
}

TEST(AveragePrecisionTest, HandFixtures) {
  const std::vector<double> s = {0.9, 0.8, 0.7, 0.6};
  EXPECT_NEAR(AveragePrecision(s, std::vector<double>{1, 0, 1, 0}),
              0.5 * 1.0 + 0.5 * (2.0 / 3.0), 1e-15);
  EXPECT_EQ(AveragePrecision(s, std::vector<double>{1, 1, 0, 0}), 1.0);
  // One tied block: precision 1/2 at recall 1.
  EXPECT_EQ(AveragePrecision(std::vector<double>{0.3, 0.3},
                             std::vector<double>{1, 0}),
            0.5);
}

TEST(RankMetricsTest, MacroSkipsSingleClassLabels) {
  Matrix s(4, 2), y(4, 2);
  s << 0.9, 0.1, 0.8, 0.2, 0.7, 0.3, 0.6, 0.4;
  y << 1, 1, 0, 1, 1, 1, 0, 1;
  const RankMetrics macro = ComputeRankMetrics(s, y, true);
  EXPECT_DOUBLE_EQ(macro.roc_auc, 0.75);
  EXPECT_THROW(ComputeRankMetrics(s, Matrix::Zero(3, 2)), ShapeError);
}

TEST(SetMetricsTest, HandFixture) {
  const std::vector<MedicationSet> pred = {
      MedicationSet::FromIndices(4, {0, 1})};
  const std::vector<MedicationSet> truth = {
      MedicationSet::FromIndices(4, {1, 2})};
  const SetMetrics m = ComputeSetMetrics(pred, truth);
  EXPECT_NEAR(m.jaccard, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(m.precision, 0.5);
  EXPECT_EQ(m.recall, 0.5);
  EXPECT_EQ(m.f1, 0.5);
}

TEST(SetMetricsTest, EmptyConventions) {
  const std::vector<MedicationSet> empty = {MedicationSet(4)};
  const SetMetrics both = ComputeSetMetrics(empty, empty);
  EXPECT_EQ(both.jaccard, 1.0);
  EXPECT_EQ(both.precision, 0.0);
  EXPECT_EQ(both.recall, 0.0);
  EXPECT_EQ(both.f1, 0.0);
  const std::vector<MedicationSet> one = {MedicationSet::FromIndices(4, {2})};
  EXPECT_EQ(ComputeSetMetrics(empty, one).jaccard, 0.0);
  EXPECT_THROW(ComputeSetMetrics(empty, std::vector<MedicationSet>{}),
               ShapeError);
}

TEST(DdiRateTest, HandFixture) {
  const std::set<DdiPair> ddi = {MakeDdiPair(1, 0)};
  const std::vector<MedicationSet> pred = {
      MedicationSet::FromIndices(4, {0, 1, 2}),
      MedicationSet::FromIndices(4, {3})};
  EXPECT_NEAR(DdiRate(pred, ddi), (1.0 / 3.0 + 0.0) / 2.0, 1e-15);
  EXPECT_EQ(DdiRate(std::vector<MedicationSet>{}, ddi), 0.0);
}

TEST(TTestTest, HandFixtures) {
  const TTestResult zero =
      PairedTTest(std::vector<double>{1, 2, 3}, std::vector<double>{2, 2, 2});
  EXPECT_EQ(zero.t, 0.0);
  EXPECT_NEAR(zero.p, 1.0, 1e-12);
  // Differences {-2, -3, -4}: mean -3, sd 1, t = -3 sqrt 3. With two
  // degrees of freedom p = 1 - |t| / sqrt(2 + t^2).
  const TTestResult r =
      PairedTTest(std::vector<double>{1, 2, 3}, std::vector<double>{3, 5, 7});
  EXPECT_NEAR(r.t, -3.0 * std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(r.p, 1.0 - std::sqrt(27.0) / std::sqrt(29.0), 1e-12);
  EXPECT_EQ(r.n, 3);
}

TEST(TTestTest, MatchesBoostStudentT) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int n : {2, 3, 5, 8, 30, 200}) {
    for (double shift : {0.0, 0.3, 2.0}) {
      std::vector<double> a(n), b(n);
      for (int i = 0; i < n; ++i) {
        a[i] = noise(rng) + shift;
        b[i] = noise(rng);
      }
      const TTestResult r = PairedTTest(a, b);
      std::vector<double> d(n);
      for (int i = 0; i < n; ++i) d[i] = a[i] - b[i];
      const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
      double ss = 0;
      for (double x : d) ss += (x - mean) * (x - mean);
      const double t = mean / std::sqrt(ss / (n - 1) / n);
      const boost::math::students_t dist(n - 1);
      const double p =
          2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
      EXPECT_NEAR(r.t, t, 1e-9 * std::max(1.0, std::abs(t)));
      EXPECT_NEAR(r.p, p, 1e-10);
      EXPECT_NEAR(StudentTCdf(t, n - 1), boost::math::cdf(dist, t), 1e-12);
    }
  }
}

TEST(TTestTest, Degenerate) {
  EXPECT_THROW(
      PairedTTest(std::vector<double>{1, 2, 3}, std::vector<double>{0, 1, 2}),
      NumericError);
  EXPECT_THROW(PairedTTest(std::vector<double>{1}, std::vector<double>{0}),
               InvalidArgument);
}

TEST(EvaluateTest, OracleProbabilitiesScorePerfectly) {
  const Cohort c = testing::SmallCohort(60, 4);
  std::vector<const HospitalizationRecord*> recs;
  for (const auto& r : c.records) recs.push_back(&r);
  const Matrix labels = EncodeTargets(recs, c.vocab.n_medications());
  const auto idx = RetrievalIndex::Build(c, "test");
  const Evaluation ev = EvaluateProbabilities(labels, c, idx, EvalConfig{});
  EXPECT_EQ(ev.report.jaccard, 1.0);
  EXPECT_EQ(ev.report.recall, 1.0);
  EXPECT_EQ(ev.report.precision, 1.0);
  EXPECT_EQ(ev.report.roc_auc, 1.0);
  EXPECT_EQ(ev.report.pr_auc, 1.0);
  EXPECT_EQ(ev.report.n_samples, static_cast<std::int64_t>(c.records.size()));
}

TEST(EvaluateTest, InvariantToRecordOrder) {
  const Cohort c = testing::SmallCohort(80, 5);
  const ModelParams p = InitParams(ModelConfig::ForVocab(c.vocab, 8, 2, 16), 2);
  const auto idx = RetrievalIndex::Build(c, "test");
  const EvalReport a = Evaluate(p, c, idx, EvalConfig{}).report;
  Cohort shuffled = c;
  std::mt19937_64 rng(9);
  std::shuffle(shuffled.records.begin(), shuffled.records.end(), rng);
  const EvalReport b = Evaluate(p, shuffled, idx, EvalConfig{}).report;
  EXPECT_NEAR(a.elos, b.elos, 1e-9);
  EXPECT_NEAR(a.roc_auc, b.roc_auc, 1e-12);
  EXPECT_NEAR(a.pr_auc, b.pr_auc, 1e-12);
  EXPECT_NEAR(a.jaccard, b.jaccard, 1e-12);
  EXPECT_NEAR(a.ddi_rate, b.ddi_rate, 1e-12);
  EXPECT_EQ(a.n_elos, b.n_elos);
}

TEST(ReportTest, KeyValueAndCsvLayout) {
  EvalReport r;
  r.elos = 7.5;
  r.n_samples = 3;
  const std::string kv = ReportToKeyValue(r);
  EXPECT_EQ(kv.substr(0, 11), "elos = 7.5\n");
  EXPECT_NE(kv.find("n_samples = 3\n"), std::string::npos);
  const std::string header = ReportCsvHeader();
  const std::string row = ReportCsvRow(4, r);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','),
            std::count(row.begin(), row.end(), ','));
  EXPECT_EQ(row.substr(0, 6), "4,7.5,");
}

}  // namespace
}  // namespace medcf
