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

#ifndef MEDCF_RECORD_JSON_H_
#define MEDCF_RECORD_JSON_H_

#include <string>

#include "json.hpp"
#include "medcf/cohort.h"
#include "medcf/error.h"

namespace medcf {

using Json = nlohmann::ordered_json;

// Thrown when a JSON document does not match the record schema. `field` is
// a dotted path to the offending member.
class JsonSchemaError : public SchemaError {
 public:
  JsonSchemaError(const std::string& field, const std::string& what)
      : SchemaError(field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Thrown when an index lies outside its vocabulary.
class CodeRangeError : public JsonSchemaError {
 public:
  using JsonSchemaError::JsonSchemaError;
};

Json RecordToJson(const HospitalizationRecord& record);

// Strict decoding: unknown members are rejected. When `require_outcome` is
// false, the label members (`medications`, `los`) and the ids may be
// omitted, which is how patient-state documents are posted to the service.
HospitalizationRecord RecordFromJson(const Json& doc, const Vocabularies& vocab,
                                     bool require_outcome = true);

Json VocabToJson(const Vocabularies& vocab);

}  // namespace medcf

#endif  // MEDCF_RECORD_JSON_H_
