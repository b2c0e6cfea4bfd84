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

#include "medcf/retrieval.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "medcf/error.h"

namespace medcf {

void RetrievalConfig::Validate() const {
  if (k < 1) throw InvalidArgument("retrieval k must be >= 1");
  if (!(phi >= -1.0 && phi <= 1.0))
    throw InvalidArgument("phi must lie in [-1,1]");
  if (age_window < 0) throw InvalidArgument("age window must be >= 0");
}

RetrievalIndex RetrievalIndex::Build(const Cohort& cohort,
                                     std::string split_tag) {
  if (cohort.records.empty())
    throw InvalidArgument("cannot index an empty cohort");
  RetrievalIndex index;
  index.split_tag_ = std::move(split_tag);
  index.n_medications_ = cohort.vocab.n_medications();
  for (const auto& r : cohort.records) {
    std::vector<int> key = r.procedures;
    std::sort(key.begin(), key.end());
    index.buckets_[key].push_back(
        {r.event_id, r.demographics.age, r.medications, r.los});
  }
  for (auto& [key, entries] : index.buckets_) {
    std::sort(entries.begin(), entries.end(),
              [](const IndexEntry& a, const IndexEntry& b) {
                return a.event_id < b.event_id;
              });
    index.num_entries_ += entries.size();
  }
  return index;
}

std::span<const IndexEntry> RetrievalIndex::Lookup(
    std::vector<int> procedures) const {
  std::sort(procedures.begin(), procedures.end());
  auto it = buckets_.find(procedures);
  if (it == buckets_.end()) return {};
  return it->second;
}

std::vector<const IndexEntry*> RetrieveByProcedures(
    const RetrievalIndex& index, const HospitalizationRecord& query,
    const RetrievalConfig& config) {
  std::vector<const IndexEntry*> pool;
  for (const auto& entry : index.Lookup(query.procedures)) {
    if (entry.event_id == query.event_id) continue;
    if (std::abs(entry.age - query.demographics.age) > config.age_window)
      continue;
    pool.push_back(&entry);
  }
  return pool;
}

double Cosine(const MedicationSet& a, const MedicationSet& b) {
  if (a.size() != b.size())
    throw ShapeError("cosine: medication set length mismatch");
  const int na = a.Count();
  const int nb = b.Count();
  if (na == 0 || nb == 0) return 0.0;
  return a.Intersect(b) / std::sqrt(static_cast<double>(na) * nb);
}

RetrievedSet RetrieveByDrugs(std::span<const IndexEntry* const> pool,
                             const MedicationSet& alpha,
                             const HospitalizationRecord& query,
                             const RetrievalConfig& config) {
  RetrievedSet out;
  std::vector<Neighbor> candidates;
  candidates.reserve(pool.size());
  for (const IndexEntry* e : pool) {
    const double sim = Cosine(alpha, e->medications);
    if (sim > config.phi) candidates.push_back({e->event_id, sim, e->los});
  }
  const auto order = [](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.event_id < b.event_id;
  };
  const size_t keep =
      std::min(candidates.size(), static_cast<size_t>(config.k));
  std::partial_sort(candidates.begin(), candidates.begin() + keep,
                    candidates.end(), order);
  candidates.resize(keep);
  out.neighbors = std::move(candidates);

  if (out.neighbors.empty()) {
    if (config.empty_pool == EmptyPoolPolicy::kZeroReward) {
      out.excluded = true;
      return out;
    }
    out.self_fallback = true;
    out.neighbors.push_back(
        {query.event_id, Cosine(alpha, query.medications), query.los});
  }

  if (config.aggregate == ElosAggregate::kMinimum) {
    out.elos = out.neighbors.front().los;
    for (const auto& n : out.neighbors) out.elos = std::min(out.elos, n.los);
  } else {
    double sum = 0.0;
    for (const auto& n : out.neighbors) sum += n.los;
    out.elos = sum / static_cast<double>(out.neighbors.size());
  }
  return out;
}

RetrievedSet Counterfactual(const RetrievalIndex& index,
                            const HospitalizationRecord& query,
                            const MedicationSet& alpha,
                            const RetrievalConfig& config) {
  if (alpha.size() != index.n_medications()) {
    throw ShapeError("medication set length does not match the index");
  }
  const auto pool = RetrieveByProcedures(index, query, config);
  return RetrieveByDrugs(pool, alpha, query, config);
}

BatchReward ComputeBatchReward(
    std::span<const HospitalizationRecord* const> records,
    std::span<const MedicationSet> alphas, const RetrievalIndex& index,
    const RetrievalConfig& config) {
  if (records.size() != alphas.size()) {
    throw ShapeError("records and actions are not aligned");
  }
  BatchReward out;
  out.rewards.assign(records.size(), 0.0);
  out.elos.assign(records.size(), 0.0);
  out.included.assign(records.size(), false);
  double reward_sum = 0.0;
  for (size_t i = 0; i < records.size(); ++i) {
    const RetrievedSet set =
        Counterfactual(index, *records[i], alphas[i], config);
    if (set.excluded) continue;
    out.included[i] = true;
    out.elos[i] = set.elos;
    out.rewards[i] = records[i]->los - set.elos;
    reward_sum += out.rewards[i];
    out.sum_elos += set.elos;
    ++out.n_included;
  }
  if (out.n_included > 0) out.mean_reward = reward_sum / out.n_included;
  return out;
}

Json RetrievedSetToJson(const RetrievedSet& set, std::optional<double> reward) {
  Json j;
  if (set.excluded) {
    j["elos"] = nullptr;
  } else {
    j["elos"] = set.elos;
  }
  j["reward"] = reward && !set.excluded ? Json(*reward) : Json(nullptr);
  j["excluded"] = set.excluded;
  Json neighbors = Json::array();
  for (const auto& n : set.neighbors) {
    Json row;
    row["event_id"] = n.event_id;
    row["similarity"] = n.similarity;
    row["los"] = n.los;
    neighbors.push_back(std::move(row));
  }
  j["neighbors"] = std::move(neighbors);
  return j;
}

}  // namespace medcf
