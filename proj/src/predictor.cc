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

#include "medcf/predictor.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "medcf/error.h"
#include "medcf/record_json.h"

namespace medcf {

namespace {

constexpr char kCheckpointFormat[] = "medcf-checkpoint";
constexpr int kCheckpointVersion = 1;
constexpr int kTokens = 4;

const char* const kGroupNames[kTokens] = {"embed.diagnoses", "embed.procedures",
                                          "embed.labs", "embed.demographics"};

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::ForVocab(const Vocabularies& vocab, int d_model,
                                  int n_heads, int d_ff) {
  ModelConfig c;
  c.n_diagnoses = vocab.n_diagnoses();
  c.n_procedures = vocab.n_procedures();
  c.n_lab_codes = vocab.n_lab_codes();
  c.n_ethnicities = vocab.n_ethnicities;
  c.n_medications = vocab.n_medications();
  c.d_model = d_model;
  c.n_heads = n_heads;
  c.d_ff = d_ff;
  c.Validate();
  return c;
}

void ModelConfig::Validate() const {
  if (n_diagnoses < 1 || n_procedures < 1 || n_lab_codes < 1 ||
      n_ethnicities < 1 || n_medications < 1) {
    throw InvalidArgument("model input/output sizes must be >= 1");
  }
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0 || d_ff < 1) {
    throw InvalidArgument("d_model must be a positive multiple of n_heads");
  }
}

bool ModelConfig::Compatible(const Vocabularies& vocab) const {
  return n_diagnoses == vocab.n_diagnoses() &&
         n_procedures == vocab.n_procedures() &&
         n_lab_codes == vocab.n_lab_codes() &&
         n_ethnicities == vocab.n_ethnicities &&
         n_medications == vocab.n_medications();
}

// ---------------------------------------------------------------------------
// Encoding

EncodedBatch EncodeRecords(
    std::span<const HospitalizationRecord* const> records,
    const ModelConfig& config) {
  const auto n = static_cast<Eigen::Index>(records.size());
  EncodedBatch b;
  b.diagnoses = Matrix::Zero(n, config.n_diagnoses);
  b.procedures = Matrix::Zero(n, config.n_procedures);
  b.labs = Matrix::Zero(n, config.n_lab_codes);
  b.demographics = Matrix::Zero(n, config.n_demographics());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = *records[i];
    for (int d : r.diagnoses) {
      if (d < 0 || d >= config.n_diagnoses)
        throw ShapeError("diagnosis index out of range");
      b.diagnoses(i, d) = 1.0;
    }
    for (int p : r.procedures) {
      if (p < 0 || p >= config.n_procedures)
        throw ShapeError("procedure index out of range");
      b.procedures(i, p) = 1.0;
    }
    for (const auto& lab : r.lab_events) {
      if (lab.code < 0 || lab.code >= config.n_lab_codes)
        throw ShapeError("lab index out of range");
      b.labs(i, lab.code) = lab.abnormal ? -1.0 : 1.0;
    }
    const auto& demo = r.demographics;
    if (demo.ethnicity < 0 || demo.ethnicity >= config.n_ethnicities) {
      throw ShapeError("ethnicity index out of range");
    }
    b.demographics(i, 0) = std::clamp((demo.age - 18) / 72.0, 0.0, 1.0);
    b.demographics(i, demo.gender == Gender::kFemale ? 1 : 2) = 1.0;
    b.demographics(i, 3 + demo.ethnicity) = 1.0;
    b.demographics(i, 3 + config.n_ethnicities) =
        std::min(demo.admission_seq, 10) / 10.0;
  }
  return b;
}

EncodedBatch EncodeRecords(const std::vector<HospitalizationRecord>& records,
                           const ModelConfig& config) {
  std::vector<const HospitalizationRecord*> ptrs;
  ptrs.reserve(records.size());
  for (const auto& r : records) ptrs.push_back(&r);
  return EncodeRecords(ptrs, config);
}

Matrix EncodeTargets(std::span<const HospitalizationRecord* const> records,
                     int n_medications) {
  Matrix y =
      Matrix::Zero(static_cast<Eigen::Index>(records.size()), n_medications);
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& meds = records[i]->medications;
    if (meds.size() != n_medications)
      throw ShapeError("target length mismatch");
    for (int m : meds.Indices()) y(static_cast<Eigen::Index>(i), m) = 1.0;
  }
  return y;
}

// ---------------------------------------------------------------------------
// ModelParams

ModelParams::ModelParams(const ModelConfig& config) : config_(config) {
  config.Validate();
  const int d = config.d_model;
  Add("embed.diagnoses", config.n_diagnoses, d);
  Add("embed.procedures", config.n_procedures, d);
  Add("embed.labs", config.n_lab_codes, d);
  Add("embed.demographics", config.n_demographics(), d);
  Add("embed.position", kTokens, d);
  for (const char* proj : {"query", "key", "value", "output"}) {
    Add(std::string("attn.") + proj, d, d);
    Add(std::string("attn.") + proj + "_bias", 1, d);
  }
  Add("norm1.gain", 1, d);
  Add("norm1.bias", 1, d);
  Add("ffn.hidden", d, config.d_ff);
  Add("ffn.hidden_bias", 1, config.d_ff);
  Add("ffn.output", config.d_ff, d);
  Add("ffn.output_bias", 1, d);
  Add("norm2.gain", 1, d);
  Add("norm2.bias", 1, d);
  Add("head.weight", kTokens * d, config.n_medications);
  Add("head.bias", 1, config.n_medications);
}

void ModelParams::Add(const std::string& name, int rows, int cols) {
  tensors_.push_back({name, Matrix::Zero(rows, cols)});
}

int ModelParams::IndexOf(const std::string& name) const {
  for (size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

Matrix& ModelParams::Get(const std::string& name) {
  const int i = IndexOf(name);
  if (i < 0) throw InvalidArgument("unknown parameter '" + name + "'");
  return tensors_[i].value;
}

const Matrix& ModelParams::Get(const std::string& name) const {
  const int i = IndexOf(name);
  if (i < 0) throw InvalidArgument("unknown parameter '" + name + "'");
  return tensors_[i].value;
}

std::int64_t ModelParams::NumValues() const {
  std::int64_t n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

bool ModelParams::AllFinite() const {
  for (const auto& t : tensors_) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

void ModelParams::RoundToFloat() {
  for (auto& t : tensors_) {
    t.value = t.value.unaryExpr(
        [](double x) { return static_cast<double>(static_cast<float>(x)); });
  }
}

ModelParams ModelParams::ZerosLike() const {
  ModelParams z = *this;
  for (auto& t : z.tensors_) t.value.setZero();
  return z;
}

ModelParams InitParams(const ModelConfig& config, std::uint64_t seed) {
  ModelParams params(config);
  std::mt19937_64 rng(seed);
  for (auto& t : params.tensors()) {
    const std::string& name = t.name;
    if (name.ends_with("gain")) {
      t.value.setOnes();
    } else if (name.ends_with("bias")) {
      t.value.setZero();
    } else if (name == "embed.position") {
      std::normal_distribution<double> dist(0.0, 0.02);
      for (Eigen::Index i = 0; i < t.value.size(); ++i)
        t.value.data()[i] = dist(rng);
    } else {
      const double limit =
          std::sqrt(6.0 / static_cast<double>(t.value.rows() + t.value.cols()));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index i = 0; i < t.value.size(); ++i)
        t.value.data()[i] = dist(rng);
    }
  }
  params.RoundToFloat();
  return params;
}

// ---------------------------------------------------------------------------
// Forward / backward

ForwardPass::ForwardPass(const ModelParams& params, const EncodedBatch& batch)
    : params_(&params), tape_(std::make_unique<Tape>()) {
  const ModelConfig& c = params.config();
  const int n = batch.size();
  if (n < 1) throw ShapeError("empty batch");
  if (batch.diagnoses.cols() != c.n_diagnoses ||
      batch.procedures.cols() != c.n_procedures ||
      batch.labs.cols() != c.n_lab_codes ||
      batch.demographics.cols() != c.n_demographics() ||
      batch.procedures.rows() != n || batch.labs.rows() != n ||
      batch.demographics.rows() != n) {
    throw ShapeError("batch does not match model input sizes");
  }
  if (!params.AllFinite()) throw NumericError("non-finite model parameter");

  Tape& t = *tape_;
  std::vector<Tape::NodeId> p(params.tensors().size());
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] = t.Variable(params.tensors()[i].value, static_cast<int>(i));
  }
  auto P = [&](const char* name) { return p[params.IndexOf(name)]; };

  const Matrix* inputs[kTokens] = {&batch.diagnoses, &batch.procedures,
                                   &batch.labs, &batch.demographics};
  std::vector<Tape::NodeId> tokens;
  for (int g = 0; g < kTokens; ++g) {
    const auto x = t.Constant(*inputs[g]);
    const auto projected = t.MatMul(x, P(kGroupNames[g]));
    tokens.push_back(t.AddTableRow(projected, P("embed.position"), g));
  }
  const auto seq = t.StackRows(tokens);

  auto linear = [&](Tape::NodeId x, const char* w, const char* b) {
    return t.AddRowBroadcast(t.MatMul(x, P(w)), P(b));
  };
  const auto q = linear(seq, "attn.query", "attn.query_bias");
  const auto k = linear(seq, "attn.key", "attn.key_bias");
  const auto v = linear(seq, "attn.value", "attn.value_bias");
  const auto attended = t.GroupAttention(q, k, v, kTokens, c.n_heads);
  const auto attn_out = linear(attended, "attn.output", "attn.output_bias");
  const auto h1 =
      t.LayerNorm(t.Add(seq, attn_out), P("norm1.gain"), P("norm1.bias"));
  const auto ff = linear(t.Relu(linear(h1, "ffn.hidden", "ffn.hidden_bias")),
                         "ffn.output", "ffn.output_bias");
  const auto h2 = t.LayerNorm(t.Add(h1, ff), P("norm2.gain"), P("norm2.bias"));

  std::vector<Tape::NodeId> per_token;
  for (int g = 0; g < kTokens; ++g)
    per_token.push_back(t.SliceRows(h2, g * n, n));
  const auto joined = t.ConcatCols(per_token);
  const auto logits = linear(joined, "head.weight", "head.bias");
  probs_node_ = t.Sigmoid(logits);

  constexpr double kLow = std::numeric_limits<double>::denorm_min();
  const double kHigh = std::nextafter(1.0, 0.0);
  probabilities_ = t.value(probs_node_).cwiseMax(kLow).cwiseMin(kHigh);
}

double ForwardPass::AttachBceLoss(const Matrix& targets) {
  if (loss_node_ >= 0) throw InvalidArgument("loss already attached");
  loss_node_ = tape_->BceMean(probs_node_, targets);
  return tape_->value(loss_node_)(0, 0);
}

ModelParams ForwardPass::Backward(double seed) {
  if (loss_node_ < 0) throw InvalidArgument("attach a loss before Backward()");
  tape_->Backward(loss_node_, seed);
  ModelParams grads = params_->ZerosLike();
  for (const auto& [node, slot] : tape_->variables()) {
    grads.tensors()[slot].value = tape_->Gradient(node);
  }
  return grads;
}

Matrix PredictProbabilities(const ModelParams& params,
                            const EncodedBatch& batch) {
  ForwardPass pass(params, batch);
  return pass.probabilities();
}

double BceLoss(const Matrix& probabilities, const Matrix& targets) {
  if (probabilities.rows() != targets.rows() ||
      probabilities.cols() != targets.cols()) {
    throw ShapeError("BCE: probabilities and targets differ in shape");
  }
  if (probabilities.size() == 0) throw ShapeError("BCE: empty input");
  constexpr double kClamp = 1e-7;
  double total = 0.0;
  for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
    for (Eigen::Index j = 0; j < probabilities.cols(); ++j) {
      const double p = std::clamp(probabilities(i, j), kClamp, 1.0 - kClamp);
      const double y = targets(i, j);
      total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
  }
  return total / static_cast<double>(probabilities.size());
}

MedicationSet PredictSet(std::span<const double> probabilities,
                         double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw InvalidArgument("threshold must lie in (0,1)");
  }
  const int n = static_cast<int>(probabilities.size());
  MedicationSet set(n);
  int best = 0;
  for (int i = 0; i < n; ++i) {
    if (probabilities[i] >= threshold) set.Set(i);
    if (probabilities[i] > probabilities[best]) best = i;
  }
  if (set.Empty() && n > 0) set.Set(best);
  return set;
}

std::vector<MedicationSet> PredictSets(const Matrix& probabilities,
                                       double threshold) {
  std::vector<MedicationSet> out;
  out.reserve(probabilities.rows());
  for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
    out.push_back(
        PredictSet(std::span<const double>(probabilities.row(i).data(),
                                           probabilities.cols()),
                   threshold));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

Json ConfigToJson(const ModelConfig& c) {
  Json j;
  j["n_diagnoses"] = c.n_diagnoses;
  j["n_procedures"] = c.n_procedures;
  j["n_lab_codes"] = c.n_lab_codes;
  j["n_ethnicities"] = c.n_ethnicities;
  j["n_medications"] = c.n_medications;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["d_ff"] = c.d_ff;
  return j;
}

ModelConfig ConfigFromJson(const Json& j) {
  ModelConfig c;
  c.n_diagnoses = j.at("n_diagnoses").get<int>();
  c.n_procedures = j.at("n_procedures").get<int>();
  c.n_lab_codes = j.at("n_lab_codes").get<int>();
  c.n_ethnicities = j.at("n_ethnicities").get<int>();
  c.n_medications = j.at("n_medications").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  return c;
}

std::uint32_t ToLittleEndian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) |
           (v >> 24);
  }
  return v;
}

}  // namespace

void SaveCheckpoint(const Checkpoint& checkpoint, const std::string& path) {
  const ModelParams& params = checkpoint.params;
  Json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["version"] = kCheckpointVersion;
  manifest["config"] = ConfigToJson(params.config());
  Json extras = Json::object();
  for (const auto& [k, v] : checkpoint.extras) extras[k] = v;
  manifest["extras"] = std::move(extras);
  Json tensors = Json::array();
  for (const auto& t : params.tensors()) {
    tensors.push_back(
        {{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
  }
  manifest["tensors"] = std::move(tensors);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << manifest.dump() << '\n';
  for (const auto& t : params.tensors()) {
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      const double x = t.value.data()[i];
      const float f = static_cast<float>(x);
      if (static_cast<double>(f) != x) {
        throw InvalidArgument("parameter '" + t.name +
                              "' is not representable in binary32");
      }
      const std::uint32_t bits =
          ToLittleEndian(std::bit_cast<std::uint32_t>(f));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

Checkpoint LoadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("missing checkpoint manifest", 1);
  Checkpoint ckpt;
  try {
    const Json manifest = Json::parse(line);
    if (manifest.at("format") != kCheckpointFormat ||
        manifest.at("version") != kCheckpointVersion) {
      throw ParseError("not a medcf checkpoint", 1);
    }
    ckpt.params = ModelParams(ConfigFromJson(manifest.at("config")));
    for (const auto& [k, v] : manifest.at("extras").items()) {
      ckpt.extras[k] = v.get<double>();
    }
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != ckpt.params.tensors().size()) {
      throw ParseError("tensor count does not match model config", 1);
    }
    for (size_t i = 0; i < tensors.size(); ++i) {
      auto& t = ckpt.params.tensors()[i];
      if (tensors[i].at("name") != t.name ||
          tensors[i].at("rows").get<Eigen::Index>() != t.value.rows() ||
          tensors[i].at("cols").get<Eigen::Index>() != t.value.cols()) {
        throw ParseError("tensor '" + t.name + "' does not match manifest", 1);
      }
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("bad checkpoint manifest: ") + e.what(), 1);
  }
  for (auto& t : ckpt.params.tensors()) {
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      std::uint32_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
        throw ParseError("checkpoint truncated in tensor '" + t.name + "'", 2);
      }
      t.value.data()[i] = std::bit_cast<float>(ToLittleEndian(bits));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError("trailing bytes after checkpoint data", 2);
  }
  return ckpt;
}

}  // namespace medcf
