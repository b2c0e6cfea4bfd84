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

#include "medcf/trainer.h"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include "medcf/error.h"

namespace medcf {

void TrainConfig::Validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw InvalidArgument("lambda must lie in [0,1]");
  if (!(epsilon >= 0.0 && epsilon <= 1.0))
    throw InvalidArgument("epsilon must lie in [0,1]");
  if (!(gamma >= 0.0)) throw InvalidArgument("gamma must be >= 0");
  if (!(learning_rate > 0.0))
    throw InvalidArgument("learning rate must be > 0");
  if (std::isnan(delta)) throw InvalidArgument("delta must not be NaN");
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  if (max_epochs < 1) throw InvalidArgument("max_epochs must be >= 1");
  if (early_stop_start < 1 || patience < 1) {
    throw InvalidArgument("early stopping start and patience must be >= 1");
  }
  if (max_inner_steps < 0)
    throw InvalidArgument("max_inner_steps must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw InvalidArgument("threshold must lie in (0,1)");
  retrieval.Validate();
}

GatedLoss ComputeGatedLoss(double l_bce, double mean_reward,
                           const TrainConfig& config) {
  GatedLoss out;
  out.gate = mean_reward >= config.delta;
  out.loss = out.gate ? config.lambda * l_bce : l_bce;
  return out;
}

double Perturbation(double mean_reward, double sum_elos, double gamma) {
  if (!(sum_elos > 0.0)) {
    throw InvalidArgument("perturbation denominator sum(ELOS) must be > 0");
  }
  const double arg = std::max(1.0 + gamma * (mean_reward / sum_elos), 1e-6);
  return std::log(arg);
}

double PerturbedObjective(double loss, double perturbation,
                          const TrainConfig& config) {
  return config.epsilon * (1.0 - config.lambda) * loss +
         (1.0 - config.epsilon) * perturbation;
}

double InnerStepGradientScale(bool gate, const TrainConfig& config) {
  return config.epsilon * (1.0 - config.lambda) * (gate ? config.lambda : 1.0);
}

// ---------------------------------------------------------------------------
// Adam

void AdamOptimizer::Step(std::span<Matrix> params,
                         std::span<const Matrix> grads, double lr) {
  if (params.size() != grads.size())
    throw ShapeError("Adam: gradient count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != grads[i].rows() ||
        params[i].cols() != grads[i].cols()) {
      throw ShapeError("Adam: gradient " + std::to_string(i) +
                       " shape mismatch");
    }
    if (!grads[i].allFinite()) {
      throw NumericError("Adam: non-finite gradient in tensor " +
                         std::to_string(i) + " at step " +
                         std::to_string(step_ + 1));
    }
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  } else if (m_.size() != params.size()) {
    throw ShapeError("Adam: parameter set changed between steps");
  }
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i].cwiseAbs2();
    params[i].array() -= lr * (m_[i].array() / c1) /
                         ((v_[i].array() / c2).sqrt() + options_.eps);
  }
}

void AdamOptimizer::Step(ModelParams& params, const ModelParams& grads,
                         double lr) {
  auto& pt = params.tensors();
  const auto& gt = grads.tensors();
  if (pt.size() != gt.size()) throw ShapeError("Adam: gradient count mismatch");
  std::vector<Matrix> values;
  std::vector<Matrix> g;
  values.reserve(pt.size());
  g.reserve(gt.size());
  for (size_t i = 0; i < pt.size(); ++i) {
    values.push_back(std::move(pt[i].value));
    g.push_back(gt[i].value);
  }
  try {
    Step(std::span<Matrix>(values), std::span<const Matrix>(g), lr);
  } catch (...) {
    for (size_t i = 0; i < pt.size(); ++i) pt[i].value = std::move(values[i]);
    throw;
  }
  for (size_t i = 0; i < pt.size(); ++i) pt[i].value = std::move(values[i]);
}

// ---------------------------------------------------------------------------
// Training loop

std::string HistoryToCsv(const TrainHistory& history) {
  std::string out =
      "epoch,train_loss,val_loss,val_reward,val_elos,gate_entries,inner_"
      "steps\n";
  for (const auto& e : history.epochs) {
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{},{}\n", e.epoch,
                       e.train_loss, e.val_loss, e.val_reward, e.val_elos,
                       e.gate_entries, e.inner_steps);
  }
  return out;
}

double CohortLoss(const ModelParams& params, const Cohort& cohort, int chunk) {
  if (cohort.records.empty()) return 0.0;
  double weighted = 0.0;
  const size_t n = cohort.records.size();
  for (size_t start = 0; start < n; start += chunk) {
    const size_t end = std::min(n, start + static_cast<size_t>(chunk));
    std::vector<const HospitalizationRecord*> recs;
    for (size_t i = start; i < end; ++i) recs.push_back(&cohort.records[i]);
    const Matrix probs =
        PredictProbabilities(params, EncodeRecords(recs, params.config()));
    weighted +=
        BceLoss(probs, EncodeTargets(recs, params.config().n_medications)) *
        static_cast<double>(end - start);
  }
  return weighted / static_cast<double>(n);
}

namespace {

enum class Mode { kTwoPhase, kSupervised };

struct BatchData {
  std::vector<const HospitalizationRecord*> records;
  EncodedBatch inputs;
  Matrix targets;
};

class TrainingRun {
 public:
  TrainingRun(const Cohort& train, const Cohort& val, const TrainConfig& config,
              Mode mode, const StepObserver& observer)
      : train_(train),
        val_(val),
        config_(config),
        mode_(mode),
        observer_(observer) {}

  TrainResult Run() {
    config_.Validate();
    if (train_.records.empty())
      throw InvalidArgument("training split is empty");
    if (!val_.records.empty() && !(val_.vocab == train_.vocab)) {
      throw SchemaError("train and validation vocabularies differ");
    }
    const ModelConfig model_config = ModelConfig::ForVocab(
        train_.vocab, config_.d_model, config_.n_heads, config_.d_ff);
    params_ = InitParams(model_config, config_.seed);
    index_ = RetrievalIndex::Build(train_, "train");
    std::mt19937_64 rng(config_.seed);

    std::vector<size_t> order(train_.records.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    result.best_params = params_;
    for (int epoch = 1; epoch <= config_.max_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      EpochStats stats;
      stats.epoch = epoch;
      double loss_sum = 0.0;
      int n_batches = 0;
      for (size_t start = 0; start < order.size();
           start += config_.batch_size) {
        const size_t end = std::min(order.size(), start + config_.batch_size);
        BatchData batch = MakeBatch(order, start, end);
        loss_sum += RunBatch(batch, epoch, n_batches, stats);
        ++n_batches;
      }
      stats.train_loss = loss_sum / n_batches;
      Validate(stats);
      result.history.epochs.push_back(stats);
      spdlog::info(
          "epoch {} train_loss {:.6f} val_loss {:.6f} val_elos {:.4f} "
          "gates {} inner {}",
          epoch, stats.train_loss, stats.val_loss, stats.val_elos,
          stats.gate_entries, stats.inner_steps);

      if (val_.records.empty()) {
        result.best_params = params_;
        result.history.best_epoch = epoch;
        continue;
      }
      if (stats.val_loss < best_val) {
        best_val = stats.val_loss;
        since_best = 0;
        result.best_params = params_;
        result.history.best_epoch = epoch;
      } else {
        ++since_best;
      }
      if (epoch >= config_.early_stop_start && since_best >= config_.patience) {
        result.history.early_stop_epoch = epoch;
        break;
      }
    }
    result.final_params = params_;
    return result;
  }

 private:
  BatchData MakeBatch(const std::vector<size_t>& order, size_t start,
                      size_t end) {
    BatchData b;
    for (size_t i = start; i < end; ++i)
      b.records.push_back(&train_.records[order[i]]);
    b.inputs = EncodeRecords(b.records, params_.config());
    b.targets = EncodeTargets(b.records, params_.config().n_medications);
    return b;
  }

  void Update(const ModelParams& grads, int epoch, int batch) {
    optimizer_.Step(params_, grads, config_.learning_rate);
    params_.RoundToFloat();
    if (observer_) observer_(epoch, batch, params_);
  }

  BatchReward Reward(const BatchData& batch, const Matrix& probs) {
    const auto alphas = PredictSets(probs, config_.threshold);
    return ComputeBatchReward(batch.records, alphas, index_, config_.retrieval);
  }

  // Returns the batch BCE at the parameters the batch started from.
  double RunBatch(const BatchData& batch, int epoch, int batch_index,
                  EpochStats& stats) {
    ForwardPass pass(params_, batch.inputs);
    const double l_bce = pass.AttachBceLoss(batch.targets);
    if (mode_ == Mode::kSupervised) {
      Update(pass.Backward(1.0), epoch, batch_index);
      return l_bce;
    }

    BatchReward reward = Reward(batch, pass.probabilities());
    if (reward.all_excluded()) {
      ++stats.excluded_batches;
      spdlog::debug("epoch {} batch {}: every sample excluded from the reward",
                    epoch, batch_index);
      Update(pass.Backward(1.0), epoch, batch_index);
      return l_bce;
    }
    const GatedLoss gated =
        ComputeGatedLoss(l_bce, reward.mean_reward, config_);
    if (!gated.gate) {
      Update(pass.Backward(1.0), epoch, batch_index);
      return l_bce;
    }

    ++stats.gate_entries;
    Update(pass.Backward(config_.lambda), epoch, batch_index);

    double mean_reward = reward.mean_reward;
    double sum_elos = reward.sum_elos;
    int steps = 0;
    // The pass at the current parameters provides both the gradient of the
    // next step and the predictions that refresh the reward after the previous
    // one.
    std::unique_ptr<ForwardPass> current;
    while (mean_reward >= 0.0 && steps < config_.max_inner_steps) {
      if (!current)
        current = std::make_unique<ForwardPass>(params_, batch.inputs);
      const double l_now = current->AttachBceLoss(batch.targets);
      const GatedLoss l = ComputeGatedLoss(l_now, mean_reward, config_);
      const double perturbation =
          Perturbation(mean_reward, sum_elos, config_.gamma);
      const double objective =
          PerturbedObjective(l.loss, perturbation, config_);
      spdlog::trace(
          "inner step {} reward {:.4f} perturbation {:.6f} objective {:.6f}",
          steps, mean_reward, perturbation, objective);
      Update(current->Backward(InnerStepGradientScale(l.gate, config_)), epoch,
             batch_index);
      ++steps;

      current = std::make_unique<ForwardPass>(params_, batch.inputs);
      reward = Reward(batch, current->probabilities());
      if (reward.all_excluded()) {
        ++stats.excluded_batches;
        break;
      }
      mean_reward = reward.mean_reward;
      sum_elos = reward.sum_elos;
    }
    stats.inner_steps += steps;
    return l_bce;
  }

  void Validate(EpochStats& stats) {
    if (val_.records.empty()) return;
    stats.val_loss = CohortLoss(params_, val_);
    std::vector<const HospitalizationRecord*> recs;
    for (const auto& r : val_.records) recs.push_back(&r);
    const Matrix probs =
        PredictProbabilities(params_, EncodeRecords(recs, params_.config()));
    const auto alphas = PredictSets(probs, config_.threshold);
    const BatchReward reward =
        ComputeBatchReward(recs, alphas, index_, config_.retrieval);
    stats.val_reward = reward.mean_reward;
    stats.val_elos =
        reward.n_included ? reward.sum_elos / reward.n_included : 0.0;
  }

  const Cohort& train_;
  const Cohort& val_;
  TrainConfig config_;
  Mode mode_;
  StepObserver observer_;
  ModelParams params_;
  AdamOptimizer optimizer_;
  RetrievalIndex index_;
};

}  // namespace

TrainResult Train(const Cohort& train, const Cohort& val,
                  const TrainConfig& config, const StepObserver& observer) {
  return TrainingRun(train, val, config, Mode::kTwoPhase, observer).Run();
}

TrainResult TrainSupervised(const Cohort& train, const Cohort& val,
                            const TrainConfig& config,
                            const StepObserver& observer) {
  return TrainingRun(train, val, config, Mode::kSupervised, observer).Run();
}

}  // namespace medcf
