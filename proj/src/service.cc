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

#include "medcf/service.h"

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iterator>
#include <set>

#include "httplib.h"
#include "medcf/error.h"

namespace medcf {
namespace {

ApiResponse ErrorResponse(int status, const std::string& message,
                          const std::string& field = "") {
  Json j;
  j["error"] = message;
  if (!field.empty()) j["field"] = field;
  return {status, j.dump()};
}

ApiResponse Ok(const Json& j) { return {200, j.dump()}; }

Json ParseBody(const std::string& body) {
  try {
    return Json::parse(body);
  } catch (const Json::parse_error& e) {
    throw JsonSchemaError("$", std::string("malformed JSON: ") + e.what());
  }
}

// Maps library errors raised while decoding a request to responses.
template <typename Fn>
ApiResponse Guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const CodeRangeError& e) {
    return ErrorResponse(422, e.what(), e.field());
  } catch (const JsonSchemaError& e) {
    return ErrorResponse(400, e.what(), e.field());
  } catch (const Error& e) {
    return ErrorResponse(400, e.what());
  }
}

// Binary vector of length n.
MedicationSet MedicationsFromBits(const Json& v, int n) {
  if (!v.is_array()) throw JsonSchemaError("medications", "expected array");
  if (static_cast<int>(v.size()) != n) {
    throw JsonSchemaError("medications", "expected " + std::to_string(n) +
                                             " entries, got " +
                                             std::to_string(v.size()));
  }
  MedicationSet set(n);
  for (int i = 0; i < n; ++i) {
    const std::string f = "medications[" + std::to_string(i) + "]";
    if (!v[i].is_number_integer()) throw JsonSchemaError(f, "expected 0 or 1");
    const int bit = v[i].get<int>();
    if (bit != 0 && bit != 1) throw JsonSchemaError(f, "expected 0 or 1");
    set.Set(i, bit == 1);
  }
  return set;
}

RetrievalConfig ApplyOverrides(RetrievalConfig config, const Json& overrides) {
  if (!overrides.is_object())
    throw JsonSchemaError("overrides", "expected object");
  for (const auto& [key, value] : overrides.items()) {
    const std::string f = "overrides." + key;
    if (key == "k" || key == "age_window") {
      if (!value.is_number_integer())
        throw JsonSchemaError(f, "expected integer");
      (key == "k" ? config.k : config.age_window) = value.get<int>();
    } else if (key == "phi") {
      if (!value.is_number()) throw JsonSchemaError(f, "expected number");
      config.phi = value.get<double>();
    } else {
      throw JsonSchemaError(f, "unknown field");
    }
  }
  try {
    config.Validate();
  } catch (const InvalidArgument& e) {
    throw JsonSchemaError("overrides", e.what());
  }
  return config;
}

}  // namespace

std::string Sha256Hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

ApiState LoadApiState(const std::string& checkpoint_path,
                      const std::string& index_cohort_path,
                      const RetrievalConfig& retrieval) {
  retrieval.Validate();
  std::ifstream in(checkpoint_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + checkpoint_path);
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  Checkpoint ckpt = LoadCheckpoint(checkpoint_path);
  ApiState state;
  state.cohort = ReadCohort(index_cohort_path);
  if (!ckpt.params.config().Compatible(state.cohort.vocab)) {
    throw SchemaError("checkpoint does not match the cohort vocabularies");
  }
  state.params = std::move(ckpt.params);
  state.checkpoint_digest = Sha256Hex(bytes);
  state.index = RetrievalIndex::Build(state.cohort, "index");
  state.retrieval = retrieval;
  if (auto it = ckpt.extras.find("threshold"); it != ckpt.extras.end()) {
    state.threshold = it->second;
  }
  return state;
}

Json CounterfactualJson(const RetrievalIndex& index,
                        const HospitalizationRecord& state,
                        const MedicationSet& medications,
                        const RetrievalConfig& config) {
  const RetrievedSet set = Counterfactual(index, state, medications, config);
  if (set.excluded) {
    throw InvalidArgument(
        "no comparable patients: the candidate pool (same procedures, age "
        "within the window, similarity above phi) is empty");
  }
  std::optional<double> reward;
  if (state.los >= 1.0) reward = state.los - set.elos;
  return RetrievedSetToJson(set, reward);
}

ApiResponse HandlePredict(const ApiState& state, const std::string& body) {
  return Guarded([&] {
    const Json doc = ParseBody(body);
    const HospitalizationRecord rec =
        RecordFromJson(doc, state.cohort.vocab, /*require_outcome=*/false);
    const std::vector<HospitalizationRecord> one = {rec};
    const Matrix probs = PredictProbabilities(
        state.params, EncodeRecords(one, state.params.config()));
    const MedicationSet set = PredictSet(
        std::span<const double>(probs.data(), probs.cols()), state.threshold);
    Json j;
    j["probabilities"] =
        std::vector<double>(probs.data(), probs.data() + probs.cols());
    j["medications"] = set.Indices();
    Json labels = Json::array();
    for (int m : set.Indices())
      labels.push_back(state.cohort.vocab.medications[m]);
    j["labels"] = std::move(labels);
    j["threshold"] = state.threshold;
    return Ok(j);
  });
}

ApiResponse HandleCounterfactual(const ApiState& state,
                                 const std::string& body) {
  return Guarded([&] {
    const Json doc = ParseBody(body);
    if (!doc.is_object()) throw JsonSchemaError("$", "expected object");
    static const std::set<std::string> kKnown = {"state", "medications",
                                                 "overrides"};
    for (const auto& [key, _] : doc.items()) {
      if (!kKnown.count(key)) throw JsonSchemaError(key, "unknown field");
    }
    if (!doc.contains("state")) throw JsonSchemaError("state", "missing");
    if (!doc.contains("medications"))
      throw JsonSchemaError("medications", "missing");
    HospitalizationRecord rec;
    try {
      rec = RecordFromJson(doc["state"], state.cohort.vocab, false);
    } catch (const CodeRangeError& e) {
      throw CodeRangeError("state." + e.field(), e.what());
    } catch (const JsonSchemaError& e) {
      throw JsonSchemaError("state." + e.field(), e.what());
    }
    const MedicationSet meds = MedicationsFromBits(
        doc["medications"], state.cohort.vocab.n_medications());
    RetrievalConfig config = state.retrieval;
    if (doc.contains("overrides"))
      config = ApplyOverrides(config, doc["overrides"]);
    try {
      return Ok(CounterfactualJson(state.index, rec, meds, config));
    } catch (const InvalidArgument& e) {
      return ErrorResponse(404, e.what());
    }
  });
}

ApiResponse HandleHealth(const ApiState& state) {
  Json j;
  j["status"] = "ok";
  j["version"] = kVersion;
  j["checkpoint_digest"] = state.checkpoint_digest;
  j["index_records"] = state.index.num_entries();
  return Ok(j);
}

ApiResponse HandleVocab(const ApiState& state) {
  return Ok(VocabToJson(state.cohort.vocab));
}

ApiResponse HandlePatient(const ApiState& state,
                          const std::string& patient_id) {
  std::int64_t id = 0;
  try {
    size_t used = 0;
    id = std::stoll(patient_id, &used);
    if (used != patient_id.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    return ErrorResponse(400, "patient id must be an integer", "id");
  }
  Json records = Json::array();
  for (const auto& r : state.cohort.records) {
    if (r.patient_id == id) records.push_back(RecordToJson(r));
  }
  if (records.empty())
    return ErrorResponse(404, "unknown patient " + patient_id);
  Json j;
  j["patient_id"] = id;
  j["records"] = std::move(records);
  return Ok(j);
}

struct ApiServer::Impl {
  std::shared_ptr<const ApiState> state;
  httplib::Server server;
};

ApiServer::ApiServer(std::shared_ptr<const ApiState> state)
    : impl_(std::make_unique<Impl>()) {
  impl_->state = std::move(state);
  auto& srv = impl_->server;
  const ApiState* s = impl_->state.get();
  const auto reply = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  srv.Post("/api/predict",
           [s, reply](const httplib::Request& req, httplib::Response& res) {
             reply(res, HandlePredict(*s, req.body));
           });
  srv.Post("/api/counterfactual",
           [s, reply](const httplib::Request& req, httplib::Response& res) {
             reply(res, HandleCounterfactual(*s, req.body));
           });
  srv.Get("/api/health",
          [s, reply](const httplib::Request&, httplib::Response& res) {
            reply(res, HandleHealth(*s));
          });
  srv.Get("/api/vocab",
          [s, reply](const httplib::Request&, httplib::Response& res) {
            reply(res, HandleVocab(*s));
          });
  srv.Get(R"(/api/patients/([^/]+))",
          [s, reply](const httplib::Request& req, httplib::Response& res) {
            reply(res, HandlePatient(*s, req.matches[1]));
          });
  srv.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::info("{} {} -> {}", req.method, req.path, res.status);
  });
}

ApiServer::~ApiServer() { Stop(); }

int ApiServer::Bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound <= 0) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  return bound;
}

void ApiServer::Listen() { impl_->server.listen_after_bind(); }

void ApiServer::Stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace medcf
