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

// Counterfactual outcome retrieval.
//
// Given a hospitalization and a candidate medication set, the comparable
// historical events are those with the same procedure multiset and an age
// within a window (the candidate pool). Among them the K events whose
// recorded medications are most cosine-similar to the candidate set form the
// neighbor set; the mean of their lengths of stay is the estimated length of
// stay (ELOS) of the candidate set. The reward of an action is the recorded
// stay minus its ELOS.

#ifndef MEDCF_RETRIEVAL_H_
#define MEDCF_RETRIEVAL_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "medcf/cohort.h"
#include "medcf/record_json.h"

namespace medcf {

enum class EmptyPoolPolicy {
  kSelfFallback,  // neighbor set = the query's own recorded event
  kZeroReward,    // the sample is excluded from the reward
};

enum class ElosAggregate { kMean, kMinimum };

struct RetrievalConfig {
  int k = 50;
  double phi = 0.0;
  int age_window = 5;
  EmptyPoolPolicy empty_pool = EmptyPoolPolicy::kSelfFallback;
  ElosAggregate aggregate = ElosAggregate::kMean;

  void Validate() const;
};

struct IndexEntry {
  std::int64_t event_id = 0;
  int age = 0;
  MedicationSet medications;
  double los = 0.0;
};

// Immutable procedure-keyed index over one cohort.
class RetrievalIndex {
 public:
  static RetrievalIndex Build(const Cohort& cohort, std::string split_tag);

  // Entries whose procedure multiset equals `procedures` (any order),
  // sorted by event id. Empty when the key is unknown.
  std::span<const IndexEntry> Lookup(std::vector<int> procedures) const;

  const std::string& split_tag() const { return split_tag_; }
  int n_medications() const { return n_medications_; }
  size_t num_keys() const { return buckets_.size(); }
  size_t num_entries() const { return num_entries_; }

 private:
  std::map<std::vector<int>, std::vector<IndexEntry>> buckets_;
  std::string split_tag_;
  int n_medications_ = 0;
  size_t num_entries_ = 0;
};

// Candidate pool: same procedure multiset, |age - query age| <= window, the
// query's own event id excluded.
std::vector<const IndexEntry*> RetrieveByProcedures(
    const RetrievalIndex& index, const HospitalizationRecord& query,
    const RetrievalConfig& config);

// (a . b) / (|a| |b|), 0 when either set is empty.
double Cosine(const MedicationSet& a, const MedicationSet& b);

struct Neighbor {
  std::int64_t event_id = 0;
  double similarity = 0.0;
  double los = 0.0;
  bool operator==(const Neighbor&) const = default;
};

struct RetrievedSet {
  std::vector<Neighbor> neighbors;  // similarity desc, then event id asc
  double elos = 0.0;
  bool excluded = false;  // empty pool under kZeroReward
  bool self_fallback = false;
};

// Top-k pool entries with similarity > phi. `query` supplies the fallback
// event when the filtered pool is empty.
RetrievedSet RetrieveByDrugs(std::span<const IndexEntry* const> pool,
                             const MedicationSet& alpha,
                             const HospitalizationRecord& query,
                             const RetrievalConfig& config);

// RetrieveByProcedures followed by RetrieveByDrugs.
RetrievedSet Counterfactual(const RetrievalIndex& index,
                            const HospitalizationRecord& query,
                            const MedicationSet& alpha,
                            const RetrievalConfig& config);

struct BatchReward {
  std::vector<double> rewards;  // los - elos, 0 for excluded samples
  std::vector<double> elos;
  std::vector<bool> included;
  double mean_reward = 0.0;  // mean reward over included samples
  double sum_elos = 0.0;     // sum of elos over included samples
  int n_included = 0;
  bool all_excluded() const { return n_included == 0; }
};

BatchReward ComputeBatchReward(
    std::span<const HospitalizationRecord* const> records,
    std::span<const MedicationSet> alphas, const RetrievalIndex& index,
    const RetrievalConfig& config);

// {elos, reward, neighbors:[{event_id, similarity, los}]}; reward is null when
// not known. Excluded results carry "excluded": true.
Json RetrievedSetToJson(const RetrievedSet& set, std::optional<double> reward);

}  // namespace medcf

#endif  // MEDCF_RETRIEVAL_H_
