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

#ifndef MEDCF_METRICS_H_
#define MEDCF_METRICS_H_

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "medcf/autodiff.h"
#include "medcf/cohort.h"
#include "medcf/predictor.h"
#include "medcf/retrieval.h"

namespace medcf {

// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
// (positive, negative) pairs ordered correctly, ties counting one half.
// Throws NumericError when either class is absent.
double RocAuc(std::span<const double> scores, std::span<const double> labels);

// Average precision: sum over distinct thresholds of
// (recall_k - recall_{k-1}) * precision_k. Tied scores form one threshold.
double AveragePrecision(std::span<const double> scores,
                        std::span<const double> labels);

struct RankMetrics {
  double roc_auc = 0.0;
  double pr_auc = 0.0;
};

// Micro-averaged over every (sample, label) cell; with `macro` the metrics
// are averaged over labels that have both classes present.
RankMetrics ComputeRankMetrics(const Matrix& scores, const Matrix& labels,
                               bool macro = false);

struct SetMetrics {
  double jaccard = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  // Harmonic mean of the averaged precision and recall.
  double f1 = 0.0;
};

SetMetrics ComputeSetMetrics(std::span<const MedicationSet> predicted,
                             std::span<const MedicationSet> truth);

// Mean over samples of the fraction of predicted unordered medication pairs
// that appear in the interaction table. Samples with fewer than two
// medications count as 0.
double DdiRate(std::span<const MedicationSet> predicted,
               const std::set<DdiPair>& ddi_pairs);

// Regularized incomplete beta I_x(a, b), evaluated by continued fraction.
double RegularizedIncompleteBeta(double a, double b, double x);
// Student-t cumulative distribution function.
double StudentTCdf(double t, double dof);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;  // two-sided
  int n = 0;
};

// Paired t-test on a - b. Throws NumericError when the differences have zero
// variance and a nonzero mean, where t is undefined.
TTestResult PairedTTest(std::span<const double> a, std::span<const double> b);

struct EvalConfig {
  double threshold = 0.5;
  RetrievalConfig retrieval{.empty_pool = EmptyPoolPolicy::kZeroReward};
  bool macro_auc = false;
};

struct EvalReport {
  double elos = 0.0;
  double roc_auc = 0.0;
  double pr_auc = 0.0;
  double jaccard = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  double ddi_rate = 0.0;
  std::int64_t n_samples = 0;
  std::int64_t n_elos = 0;  // samples with a nonempty neighbor set

  bool operator==(const EvalReport&) const = default;
};

struct Evaluation {
  EvalReport report;
  std::vector<MedicationSet> predictions;
  Matrix probabilities;
};

// Scores precomputed probabilities against `test`.
Evaluation EvaluateProbabilities(const Matrix& probabilities,
                                 const Cohort& test,
                                 const RetrievalIndex& eval_index,
                                 const EvalConfig& config);

// Forward pass over `test`, then EvaluateProbabilities.
Evaluation Evaluate(const ModelParams& params, const Cohort& test,
                    const RetrievalIndex& eval_index, const EvalConfig& config);

// `key = value` lines in a fixed order.
std::string ReportToKeyValue(const EvalReport& report);
std::string ReportCsvHeader();
std::string ReportCsvRow(std::int64_t seed, const EvalReport& report);

}  // namespace medcf

#endif  // MEDCF_METRICS_H_
