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

// JSON HTTP API over a loaded checkpoint and retrieval index.
//
//   POST /api/predict         patient state -> probabilities and decoded set
//   POST /api/counterfactual  {state, medications, overrides?} -> ELOS
//   GET  /api/health          version and checkpoint digest
//   GET  /api/vocab           label arrays
//   GET  /api/patients/{id}   stored records of one patient
//
// Handlers are pure functions of (request, state) so they can be tested
// without sockets. Errors are {"error": message, "field": path?}.

#ifndef MEDCF_SERVICE_H_
#define MEDCF_SERVICE_H_

#include <functional>
#include <memory>
#include <string>

#include "medcf/cohort.h"
#include "medcf/predictor.h"
#include "medcf/record_json.h"
#include "medcf/retrieval.h"

namespace medcf {

inline constexpr const char* kVersion = "0.1.0";

struct ApiState {
  ModelParams params;
  std::string checkpoint_digest;  // hex SHA-256 of the checkpoint file
  Cohort cohort;                  // the indexed cohort, for browsing
  RetrievalIndex index;
  RetrievalConfig retrieval{.empty_pool = EmptyPoolPolicy::kZeroReward};
  double threshold = 0.5;
};

// Hex SHA-256 of a byte string.
std::string Sha256Hex(const std::string& bytes);

// Loads a checkpoint and the cohort to index. Throws SchemaError when the
// checkpoint was trained on a different vocabulary.
ApiState LoadApiState(const std::string& checkpoint_path,
                      const std::string& index_cohort_path,
                      const RetrievalConfig& retrieval = {
                          .empty_pool = EmptyPoolPolicy::kZeroReward});

struct ApiResponse {
  int status = 200;
  std::string body;  // JSON
};

ApiResponse HandlePredict(const ApiState& state, const std::string& body);
ApiResponse HandleCounterfactual(const ApiState& state,
                                 const std::string& body);
ApiResponse HandleHealth(const ApiState& state);
ApiResponse HandleVocab(const ApiState& state);
ApiResponse HandlePatient(const ApiState& state, const std::string& patient_id);

// Counterfactual document shared with the command-line query: ELOS, the
// reward against the recorded stay when the state carries one, and the
// neighbor table. Throws InvalidArgument on a zero_reward empty pool.
Json CounterfactualJson(const RetrievalIndex& index,
                        const HospitalizationRecord& state,
                        const MedicationSet& medications,
                        const RetrievalConfig& config);

// Blocking HTTP server around the handlers.
class ApiServer {
 public:
  explicit ApiServer(std::shared_ptr<const ApiState> state);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  // Binds (port 0 picks a free port) and returns the bound port. Throws
  // IoError when binding fails.
  int Bind(const std::string& host, int port);
  // Serves until Stop(); call after Bind.
  void Listen();
  void Stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace medcf

#endif  // MEDCF_SERVICE_H_
