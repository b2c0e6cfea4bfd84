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

// Two-phase training.
//
// Every batch starts with a supervised step on the binary cross-entropy.
// The predicted medication sets are scored by retrieval; the batch reward
// is the mean of (recorded stay - ELOS of the prediction). When the reward
// reaches the gate threshold delta, the batch loss is damped to
// lambda * BCE, one update is applied, and the batch enters an inner loop
// that repeatedly
//   - computes the perturbation P = ln(1 + gamma * reward / sum(ELOS)),
//   - forms the blended objective L' = eps (1 - lambda) L + (1 - eps) P,
//   - applies one update along grad L',
//   - re-predicts, re-retrieves and recomputes the reward and L,
// until the reward turns negative or a step cap is reached. P depends on
// the parameters only through retrieval, which is not differentiable, so
// grad L' is eps (1 - lambda) grad L; the perturbation acts through the
// gating and the number of inner steps.

#ifndef MEDCF_TRAINER_H_
#define MEDCF_TRAINER_H_

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "medcf/cohort.h"
#include "medcf/predictor.h"
#include "medcf/retrieval.h"

namespace medcf {

struct TrainConfig {
  double lambda = 0.9;   // decay factor
  double delta = 0.2;    // gate threshold on the batch reward
  double gamma = 0.5;    // reinforcement confidence
  double epsilon = 0.2;  // blend factor
  double learning_rate = 1e-3;
  int batch_size = 128;
  int max_epochs = 50;
  int early_stop_start = 5;
  int patience = 3;
  int max_inner_steps = 20;
  std::uint64_t seed = 0;

  double threshold = 0.5;  // set decoding
  int d_model = 64;
  int n_heads = 2;
  int d_ff = 128;
  RetrievalConfig retrieval;  // self_fallback during training

  void Validate() const;
  // Gate that never opens; turns the trainer into the supervised baseline.
  static constexpr double kGateOff = std::numeric_limits<double>::infinity();
};

struct GatedLoss {
  double loss = 0.0;
  bool gate = false;
};

// gate = (mean_reward >= delta); loss = lambda * l_bce when the gate is open.
GatedLoss ComputeGatedLoss(double l_bce, double mean_reward,
                           const TrainConfig& config);

// ln(1 + gamma * mean_reward / sum_elos), argument clamped below at 1e-6.
// Throws InvalidArgument when sum_elos <= 0.
double Perturbation(double mean_reward, double sum_elos, double gamma);

// epsilon * (1 - lambda) * loss + (1 - epsilon) * perturbation.
double PerturbedObjective(double loss, double perturbation,
                          const TrainConfig& config);

// Factor applied to grad(BCE) in one inner step: d L'/d theta =
// eps (1 - lambda) * (lambda if the gate is open else 1) * grad(BCE).
double InnerStepGradientScale(bool gate, const TrainConfig& config);

// Adam with bias-corrected moments.
class AdamOptimizer {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamOptimizer() = default;
  explicit AdamOptimizer(Options options) : options_(options) {}

  // params[i] -= lr * m_hat / (sqrt(v_hat) + eps). Throws NumericError
  // (leaving params and state untouched) when a gradient is not finite.
  void Step(std::span<Matrix> params, std::span<const Matrix> grads, double lr);
  void Step(ModelParams& params, const ModelParams& grads, double lr);

  std::int64_t step_count() const { return step_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

 private:
  Options options_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::int64_t step_ = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_reward = 0.0;
  double val_elos = 0.0;
  std::int64_t gate_entries = 0;
  std::int64_t inner_steps = 0;
  std::int64_t excluded_batches = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  int early_stop_epoch = 0;  // 0 when training ran to max_epochs
};

std::string HistoryToCsv(const TrainHistory& history);

struct TrainResult {
  ModelParams best_params;   // lowest validation loss
  ModelParams final_params;  // after the last epoch
  TrainHistory history;
};

// Called after every parameter update with (epoch, batch, params).
using StepObserver =
    std::function<void(int epoch, int batch, const ModelParams& params)>;

// The two-phase trainer. The reward index is built from `train` only.
TrainResult Train(const Cohort& train, const Cohort& val,
                  const TrainConfig& config,
                  const StepObserver& observer = nullptr);

// Plain supervised training with the same architecture, initialization,
// batching and early stopping, without retrieval or gating.
TrainResult TrainSupervised(const Cohort& train, const Cohort& val,
                            const TrainConfig& config,
                            const StepObserver& observer = nullptr);

// Mean BCE of `params` over `cohort`, evaluated in chunks.
double CohortLoss(const ModelParams& params, const Cohort& cohort,
                  int chunk = 512);

}  // namespace medcf

#endif  // MEDCF_TRAINER_H_
