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

// Multi-label medication predictor.
//
// Each of the four feature groups (diagnoses, procedures, labs,
// demographics) is projected to one d_model token and shifted by a learned
// per-group position offset. The four tokens pass through one post-norm
// transformer encoder layer, are concatenated and mapped by a linear head
// to one logistic output per medication.

#ifndef MEDCF_PREDICTOR_H_
#define MEDCF_PREDICTOR_H_

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "medcf/autodiff.h"
#include "medcf/cohort.h"

namespace medcf {

struct ModelConfig {
  int n_diagnoses = 0;
  int n_procedures = 0;
  int n_lab_codes = 0;
  int n_ethnicities = 0;
  int n_medications = 0;
  int d_model = 64;
  int n_heads = 2;
  int d_ff = 128;

  static ModelConfig ForVocab(const Vocabularies& vocab, int d_model = 64,
                              int n_heads = 2, int d_ff = 128);
  // Demographic vector: scaled age, gender one-hot, ethnicity one-hot,
  // scaled admission sequence.
  int n_demographics() const { return 2 + n_ethnicities + 2; }
  void Validate() const;
  bool Compatible(const Vocabularies& vocab) const;

  bool operator==(const ModelConfig&) const = default;
};

// The state s_i of a batch: one row per sample in each group.
struct EncodedBatch {
  Matrix diagnoses;     // multi-hot
  Matrix procedures;    // multi-hot
  Matrix labs;          // +1 normal, -1 abnormal, 0 not measured
  Matrix demographics;  // see ModelConfig::n_demographics
  int size() const { return static_cast<int>(diagnoses.rows()); }
};

EncodedBatch EncodeRecords(
    std::span<const HospitalizationRecord* const> records,
    const ModelConfig& config);
EncodedBatch EncodeRecords(const std::vector<HospitalizationRecord>& records,
                           const ModelConfig& config);
// Row i = medication bits of record i.
Matrix EncodeTargets(std::span<const HospitalizationRecord* const> records,
                     int n_medications);

// Named parameter tensors. The same type carries gradients.
class ModelParams {
 public:
  struct Tensor {
    std::string name;
    Matrix value;
    bool operator==(const Tensor& o) const {
      return name == o.name && value.rows() == o.value.rows() &&
             value.cols() == o.value.cols() && value == o.value;
    }
  };

  ModelParams() = default;
  explicit ModelParams(const ModelConfig& config);  // zero-filled

  const ModelConfig& config() const { return config_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  Matrix& Get(const std::string& name);
  const Matrix& Get(const std::string& name) const;
  int IndexOf(const std::string& name) const;
  std::int64_t NumValues() const;

  bool AllFinite() const;
  // Snaps every value to the nearest IEEE-754 binary32 number so that the
  // 32-bit checkpoint format stores parameters exactly.
  void RoundToFloat();
  // Same names and shapes, all zeros.
  ModelParams ZerosLike() const;

  bool operator==(const ModelParams& o) const {
    return config_ == o.config_ && tensors_ == o.tensors_;
  }

 private:
  void Add(const std::string& name, int rows, int cols);

  ModelConfig config_;
  std::vector<Tensor> tensors_;
};

// Xavier-uniform matrices, unit layer-norm gains, zero biases, small
// position offsets. Values lie on the binary32 grid.
ModelParams InitParams(const ModelConfig& config, std::uint64_t seed);

// One recorded forward pass. Owns the tape needed for Backward().
class ForwardPass {
 public:
  ForwardPass(const ModelParams& params, const EncodedBatch& batch);

  // batch x n_medications, every entry strictly inside (0, 1).
  const Matrix& probabilities() const { return probabilities_; }

  // Appends the mean BCE against `targets` to the tape and returns it.
  double AttachBceLoss(const Matrix& targets);
  // Reverse pass from the attached loss scaled by `seed`. Gradients have the
  // names and shapes of the parameters. A pass can be differentiated once.
  ModelParams Backward(double seed = 1.0);

  Tape& tape() { return *tape_; }

 private:
  const ModelParams* params_;
  std::unique_ptr<Tape> tape_;
  Tape::NodeId probs_node_ = -1;
  Tape::NodeId loss_node_ = -1;
  Matrix probabilities_;
};

// Convenience forward without keeping the tape.
Matrix PredictProbabilities(const ModelParams& params,
                            const EncodedBatch& batch);

// Mean over samples and labels of -[y ln p + (1-y) ln(1-p)] with p clamped to
// [1e-7, 1 - 1e-7].
double BceLoss(const Matrix& probabilities, const Matrix& targets);

// Bit i set iff p_i >= threshold; an empty result falls back to the argmax.
MedicationSet PredictSet(std::span<const double> probabilities,
                         double threshold = 0.5);
std::vector<MedicationSet> PredictSets(const Matrix& probabilities,
                                       double threshold = 0.5);

// Checkpoint: one JSON manifest line followed by the tensors as contiguous
// little-endian binary32 arrays (row-major) in manifest order. `extras`
// carries scalar settings stored alongside the weights.
struct Checkpoint {
  ModelParams params;
  std::map<std::string, double> extras;
};

void SaveCheckpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint LoadCheckpoint(const std::string& path);

}  // namespace medcf

#endif  // MEDCF_PREDICTOR_H_
