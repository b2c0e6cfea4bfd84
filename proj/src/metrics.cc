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

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "medcf/error.h"

namespace medcf {

namespace {

void CheckAligned(size_t a, size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": inputs are not aligned");
}

// Indices ordered by descending score; stable so equal scores keep input
// order, which only matters for grouping below.
std::vector<size_t> DescendingOrder(std::span<const double> scores) {
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  return order;
}

void CountClasses(std::span<const double> labels, double* pos, double* neg) {
  *pos = 0;
  *neg = 0;
  for (double y : labels) {
    if (y > 0.5) {
      *pos += 1;
    } else {
      *neg += 1;
    }
  }
  if (*pos == 0 || *neg == 0) {
    throw NumericError(
        "ranking metric undefined: labels contain a single class");
  }
}

}  // namespace

double RocAuc(std::span<const double> scores, std::span<const double> labels) {
  CheckAligned(scores.size(), labels.size(), "RocAuc");
  double pos, neg;
  CountClasses(labels, &pos, &neg);
  // Walk tie groups from the highest score down: each positive in a group
  // beats every negative below it and half-beats the negatives in its group.
  const auto order = DescendingOrder(scores);
  double correct = 0.0;
  double neg_below = neg;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    double group_pos = 0, group_neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] > 0.5) {
        group_pos += 1;
      } else {
        group_neg += 1;
      }
      ++j;
    }
    neg_below -= group_neg;
    correct += group_pos * (neg_below + 0.5 * group_neg);
    i = j;
  }
  return correct / (pos * neg);
}

double AveragePrecision(std::span<const double> scores,
                        std::span<const double> labels) {
  CheckAligned(scores.size(), labels.size(), "AveragePrecision");
  double pos, neg;
  CountClasses(labels, &pos, &neg);
  const auto order = DescendingOrder(scores);
  double tp = 0, fp = 0, prev_recall = 0, ap = 0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] > 0.5) {
        tp += 1;
      } else {
        fp += 1;
      }
      ++j;
    }
    const double recall = tp / pos;
    const double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

RankMetrics ComputeRankMetrics(const Matrix& scores, const Matrix& labels,
                               bool macro) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols()) {
    throw ShapeError("rank metrics: scores and labels differ in shape");
  }
  RankMetrics out;
  if (!macro) {
    std::span<const double> s(scores.data(), scores.size());
    std::span<const double> y(labels.data(), labels.size());
    out.roc_auc = RocAuc(s, y);
    out.pr_auc = AveragePrecision(s, y);
    return out;
  }
  int used = 0;
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    std::vector<double> s(scores.rows()), y(scores.rows());
    double pos = 0;
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
      s[r] = scores(r, c);
      y[r] = labels(r, c);
      pos += y[r] > 0.5;
    }
    if (pos == 0 || pos == static_cast<double>(scores.rows())) continue;
    out.roc_auc += RocAuc(s, y);
    out.pr_auc += AveragePrecision(s, y);
    ++used;
  }
  if (used == 0)
    throw NumericError("macro AUC undefined: no label has both classes");
  out.roc_auc /= used;
  out.pr_auc /= used;
  return out;
}

SetMetrics ComputeSetMetrics(std::span<const MedicationSet> predicted,
                             std::span<const MedicationSet> truth) {
  CheckAligned(predicted.size(), truth.size(), "SetMetrics");
  SetMetrics out;
  if (predicted.empty()) return out;
  for (size_t i = 0; i < predicted.size(); ++i) {
    const double inter = predicted[i].Intersect(truth[i]);
    const double np = predicted[i].Count();
    const double nt = truth[i].Count();
    const double uni = np + nt - inter;
    out.jaccard += uni == 0 ? 1.0 : inter / uni;
    out.precision += np == 0 ? 0.0 : inter / np;
    out.recall += nt == 0 ? 0.0 : inter / nt;
  }
  const double n = static_cast<double>(predicted.size());
  out.jaccard /= n;
  out.precision /= n;
  out.recall /= n;
  const double denom = out.precision + out.recall;
  out.f1 = denom == 0 ? 0.0 : 2.0 * out.precision * out.recall / denom;
  return out;
}

double DdiRate(std::span<const MedicationSet> predicted,
               const std::set<DdiPair>& ddi_pairs) {
  if (predicted.empty()) return 0.0;
  double total = 0.0;
  for (const auto& set : predicted) {
    const auto meds = set.Indices();
    if (meds.size() < 2) continue;
    double hits = 0, pairs = 0;
    for (size_t a = 0; a < meds.size(); ++a) {
      for (size_t b = a + 1; b < meds.size(); ++b) {
        pairs += 1;
        hits += ddi_pairs.count({meds[a], meds[b]});
      }
    }
    total += hits / pairs;
  }
  return total / static_cast<double>(predicted.size());
}

namespace {

// Continued fraction for I_x(a, b), modified Lentz evaluation.
double BetaContinuedFraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace

double RegularizedIncompleteBeta(double a, double b, double x) {
  if (!(a > 0 && b > 0))
    throw InvalidArgument("incomplete beta needs a, b > 0");
  if (!(x >= 0 && x <= 1))
    throw InvalidArgument("incomplete beta needs x in [0,1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) -
                           std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * BetaContinuedFraction(a, b, x) / a;
  }
  return 1.0 - front * BetaContinuedFraction(b, a, 1.0 - x) / b;
}

double StudentTCdf(double t, double dof) {
  if (!(dof > 0)) throw InvalidArgument("degrees of freedom must be > 0");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = dof / (dof + t * t);
  const double tail = 0.5 * RegularizedIncompleteBeta(0.5 * dof, 0.5, x);
  return t > 0 ? 1.0 - tail : tail;
}

TTestResult PairedTTest(std::span<const double> a, std::span<const double> b) {
  CheckAligned(a.size(), b.size(), "PairedTTest");
  const size_t n = a.size();
  if (n < 2) throw InvalidArgument("paired t-test needs at least 2 pairs");
  std::vector<double> d(n);
  for (size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  // Differences equal up to rounding count as constant.
  const double scale = std::max(1.0, std::abs(mean));
  if (sd <= 1e-12 * scale) {
    throw NumericError(
        "paired t-test degenerate: differences have zero variance");
  }
  TTestResult r;
  r.n = static_cast<int>(n);
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double dof = static_cast<double>(n - 1);
  r.p = RegularizedIncompleteBeta(0.5 * dof, 0.5, dof / (dof + r.t * r.t));
  return r;
}

Evaluation EvaluateProbabilities(const Matrix& probabilities,
                                 const Cohort& test,
                                 const RetrievalIndex& eval_index,
                                 const EvalConfig& config) {
  const auto n = static_cast<Eigen::Index>(test.records.size());
  if (n == 0) throw InvalidArgument("cannot evaluate an empty cohort");
  if (probabilities.rows() != n ||
      probabilities.cols() != test.vocab.n_medications()) {
    throw ShapeError("probabilities do not match the test cohort");
  }
  Evaluation ev;
  ev.probabilities = probabilities;
  ev.predictions = PredictSets(probabilities, config.threshold);

  std::vector<const HospitalizationRecord*> recs;
  std::vector<MedicationSet> truth;
  for (const auto& r : test.records) {
    recs.push_back(&r);
    truth.push_back(r.medications);
  }
  const Matrix labels = EncodeTargets(recs, test.vocab.n_medications());
  const RankMetrics rank =
      ComputeRankMetrics(probabilities, labels, config.macro_auc);
  const SetMetrics sets = ComputeSetMetrics(ev.predictions, truth);
  const BatchReward reward =
      ComputeBatchReward(recs, ev.predictions, eval_index, config.retrieval);

  EvalReport& rep = ev.report;
  rep.n_samples = n;
  rep.n_elos = reward.n_included;
  rep.elos = reward.n_included > 0 ? reward.sum_elos / reward.n_included : 0.0;
  rep.roc_auc = rank.roc_auc;
  rep.pr_auc = rank.pr_auc;
  rep.jaccard = sets.jaccard;
  rep.precision = sets.precision;
  rep.recall = sets.recall;
  rep.f1 = sets.f1;
  rep.ddi_rate = DdiRate(ev.predictions, test.ddi_pairs);
  return ev;
}

Evaluation Evaluate(const ModelParams& params, const Cohort& test,
                    const RetrievalIndex& eval_index,
                    const EvalConfig& config) {
  if (!params.config().Compatible(test.vocab)) {
    throw SchemaError("checkpoint vocabulary does not match the test cohort");
  }
  const EncodedBatch batch = EncodeRecords(test.records, params.config());
  return EvaluateProbabilities(PredictProbabilities(params, batch), test,
                               eval_index, config);
}

std::string ReportToKeyValue(const EvalReport& r) {
  return fmt::format(
      "elos = {:.17g}\nroc_auc = {:.17g}\npr_auc = {:.17g}\njaccard = {:.17g}\n"
      "recall = {:.17g}\nprecision = {:.17g}\nf1 = {:.17g}\nddi_rate = "
      "{:.17g}\n"
      "n_samples = {}\nn_elos = {}\n",
      r.elos, r.roc_auc, r.pr_auc, r.jaccard, r.recall, r.precision, r.f1,
      r.ddi_rate, r.n_samples, r.n_elos);
}

std::string ReportCsvHeader() {
  return "seed,elos,roc_auc,pr_auc,jaccard,recall,precision,f1,ddi_rate,"
         "n_samples,n_elos\n";
}

std::string ReportCsvRow(std::int64_t seed, const EvalReport& r) {
  return fmt::format(
      "{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},"
      "{:.17g},{:.17g},{},{}\n",
      seed, r.elos, r.roc_auc, r.pr_auc, r.jaccard, r.recall, r.precision, r.f1,
      r.ddi_rate, r.n_samples, r.n_elos);
}

}  // namespace medcf
