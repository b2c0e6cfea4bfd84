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

// Domain model for ICU hospitalization cohorts: vocabularies, records,
// medication bitsets, the synthetic generator with a planted
// medication -> length-of-stay effect, patient-wise splitting and the
// line-delimited cohort file format.

#ifndef MEDCF_COHORT_H_
#define MEDCF_COHORT_H_

#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace medcf {

struct Vocabularies {
  std::vector<std::string> diagnoses;
  std::vector<std::string> procedures;
  std::vector<std::string> medications;
  std::vector<std::string> lab_codes;
  int n_ethnicities = 5;

  int n_diagnoses() const { return static_cast<int>(diagnoses.size()); }
  int n_procedures() const { return static_cast<int>(procedures.size()); }
  int n_medications() const { return static_cast<int>(medications.size()); }
  int n_lab_codes() const { return static_cast<int>(lab_codes.size()); }

  // Throws SchemaError when a vocabulary is empty or has duplicate labels.
  void Validate() const;

  // Vocabularies with generated labels "D0".."Dn", "P0".., "M0".., "L0"..
  static Vocabularies Synthetic(int n_diagnoses, int n_procedures,
                                int n_medications, int n_lab_codes,
                                int n_ethnicities);

  bool operator==(const Vocabularies&) const = default;
};

enum class Gender { kFemale, kMale };

struct Demographics {
  int age = 18;
  Gender gender = Gender::kFemale;
  int ethnicity = 0;
  int admission_seq = 1;

  bool operator==(const Demographics&) const = default;
};

// Binary vector over the medication vocabulary.
class MedicationSet {
 public:
  MedicationSet() = default;
  explicit MedicationSet(int size);
  static MedicationSet FromIndices(int size, const std::vector<int>& indices);

  int size() const { return size_; }
  bool Test(int i) const;
  void Set(int i, bool value = true);
  int Count() const;
  bool Empty() const { return Count() == 0; }
  // Number of indices set in both.
  int Intersect(const MedicationSet& other) const;
  std::vector<int> Indices() const;
  std::string ToString() const;  // "{0,2,5}"

  bool operator==(const MedicationSet&) const = default;

 private:
  int size_ = 0;
  std::vector<std::uint64_t> words_;
};

struct LabEvent {
  int code = 0;
  bool abnormal = false;

  bool operator==(const LabEvent&) const = default;
  auto operator<=>(const LabEvent&) const = default;
};

struct HospitalizationRecord {
  std::int64_t patient_id = 0;
  std::int64_t event_id = 0;
  std::vector<int> diagnoses;        // sorted, unique
  std::vector<int> procedures;       // sorted multiset
  std::vector<LabEvent> lab_events;  // sorted by code, unique codes
  Demographics demographics;
  MedicationSet medications;
  double los = 1.0;  // days

  bool operator==(const HospitalizationRecord&) const = default;
};

// Unordered medication pair stored with first < second.
using DdiPair = std::pair<int, int>;
DdiPair MakeDdiPair(int a, int b);

struct Cohort {
  Vocabularies vocab;
  std::vector<HospitalizationRecord> records;
  std::set<DdiPair> ddi_pairs;

  // Bounds and structural checks; throws SchemaError.
  void Validate() const;
  std::vector<std::int64_t> PatientIds() const;  // sorted unique
  const HospitalizationRecord* FindEvent(std::int64_t event_id) const;
  double MeanLos() const;

  bool operator==(const Cohort&) const = default;
};

struct GeneratorConfig {
  int n_diagnoses = 40;
  int n_procedures = 12;
  int n_medications = 24;
  int n_lab_codes = 30;
  int n_ethnicities = 5;

  int n_patients = 1000;
  int min_events_per_patient = 1;
  int max_events_per_patient = 3;
  // Probability that an event carries a second procedure.
  double second_procedure_prob = 0.25;

  int min_ideal_set = 2;
  int max_ideal_set = 4;
  double q_miss = 0.3;
  double q_extra = 0.05;

  double base_los_min = 3.0;
  double base_los_max = 12.0;
  double c_miss = 0.75;
  double c_extra = 0.75;
  int noise_spread = 1;  // noise uniform on {-spread..spread} days

  double ddi_density = 0.05;
  std::uint64_t seed = 0;

  void Validate() const;
};

// Hidden ground truth the generator planted, kept out of the cohort file.
struct GeneratorOracle {
  std::vector<std::vector<int>> ideal_sets;  // per procedure, sorted
  std::vector<double> base_los;              // per procedure, whole days
};

struct GeneratedCohort {
  Cohort cohort;
  GeneratorOracle oracle;
};

GeneratedCohort GenerateCohort(const GeneratorConfig& config);

struct SplitRatios {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

struct CohortSplit {
  Cohort train;
  Cohort val;
  Cohort test;
};

// Partitions by patient id; records keep their original order.
CohortSplit SplitCohort(const Cohort& cohort, const SplitRatios& ratios,
                        std::uint64_t seed);

// Records whose patient ids are in `patients`, vocabularies and DDI copied.
Cohort SubsetByPatients(const Cohort& cohort,
                        const std::set<std::int64_t>& patients);
// Concatenation of records; vocabularies must match.
Cohort MergeCohorts(const Cohort& a, const Cohort& b);

void WriteCohort(const Cohort& cohort, std::ostream& out);
void WriteCohort(const Cohort& cohort, const std::string& path);
Cohort ReadCohort(std::istream& in);
Cohort ReadCohort(const std::string& path);

void WriteOracle(const GeneratorOracle& oracle, const std::string& path);
GeneratorOracle ReadOracle(const std::string& path);

// Two-column CSV `med_a,med_b` with zero-based indices. A header line is
// optional, duplicate and reversed pairs collapse.
std::set<DdiPair> ReadDdiCsv(const std::string& path, int n_medications);

}  // namespace medcf

#endif  // MEDCF_COHORT_H_
