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

#include "medcf/cohort.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "medcf/error.h"
#include "medcf/record_json.h"

namespace medcf {

namespace {

constexpr char kCohortFormat[] = "medcf-cohort";
constexpr int kCohortVersion = 1;

void CheckUniqueLabels(const std::vector<std::string>& labels,
                       const char* name) {
  if (labels.empty()) {
    throw SchemaError(std::string(name) + " vocabulary is empty");
  }
  std::unordered_set<std::string> seen;
  for (const auto& label : labels) {
    if (!seen.insert(label).second) {
      throw SchemaError(std::string("duplicate ") + name + " label '" + label +
                        "'");
    }
  }
}

std::vector<std::string> MakeLabels(char prefix, int n) {
  std::vector<std::string> labels;
  labels.reserve(n);
  for (int i = 0; i < n; ++i) labels.push_back(prefix + std::to_string(i));
  return labels;
}

void CheckIndex(int value, int bound, const std::string& field) {
  if (value < 0 || value >= bound) {
    throw CodeRangeError(field, "index " + std::to_string(value) +
                                    " outside [0," + std::to_string(bound) +
                                    ")");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabularies

void Vocabularies::Validate() const {
  CheckUniqueLabels(diagnoses, "diagnosis");
  CheckUniqueLabels(procedures, "procedure");
  CheckUniqueLabels(medications, "medication");
  CheckUniqueLabels(lab_codes, "lab");
  if (n_ethnicities < 1) throw SchemaError("n_ethnicities must be >= 1");
}

Vocabularies Vocabularies::Synthetic(int n_diagnoses, int n_procedures,
                                     int n_medications, int n_lab_codes,
                                     int n_ethnicities) {
  Vocabularies v;
  v.diagnoses = MakeLabels('D', n_diagnoses);
  v.procedures = MakeLabels('P', n_procedures);
  v.medications = MakeLabels('M', n_medications);
  v.lab_codes = MakeLabels('L', n_lab_codes);
  v.n_ethnicities = n_ethnicities;
  return v;
}

// ---------------------------------------------------------------------------
// MedicationSet

MedicationSet::MedicationSet(int size)
    : size_(size), words_((static_cast<size_t>(size) + 63) / 64, 0) {
  if (size < 0) throw InvalidArgument("negative medication set size");
}

MedicationSet MedicationSet::FromIndices(int size,
                                         const std::vector<int>& indices) {
  MedicationSet set(size);
  for (int i : indices) set.Set(i);
  return set;
}

bool MedicationSet::Test(int i) const {
  if (i < 0 || i >= size_)
    throw InvalidArgument("medication index out of range");
  return (words_[i / 64] >> (i % 64)) & 1u;
}

void MedicationSet::Set(int i, bool value) {
  if (i < 0 || i >= size_)
    throw InvalidArgument("medication index out of range");
  const std::uint64_t mask = std::uint64_t{1} << (i % 64);
  if (value) {
    words_[i / 64] |= mask;
  } else {
    words_[i / 64] &= ~mask;
  }
}

int MedicationSet::Count() const {
  int count = 0;
  for (auto w : words_) count += std::popcount(w);
  return count;
}

int MedicationSet::Intersect(const MedicationSet& other) const {
  if (other.size_ != size_) throw ShapeError("medication set length mismatch");
  int count = 0;
  for (size_t i = 0; i < words_.size(); ++i) {
    count += std::popcount(words_[i] & other.words_[i]);
  }
  return count;
}

std::vector<int> MedicationSet::Indices() const {
  std::vector<int> out;
  for (int i = 0; i < size_; ++i) {
    if (Test(i)) out.push_back(i);
  }
  return out;
}

std::string MedicationSet::ToString() const {
  std::string s = "{";
  bool first = true;
  for (int i : Indices()) {
    if (!first) s += ",";
    s += std::to_string(i);
    first = false;
  }
  return s + "}";
}

DdiPair MakeDdiPair(int a, int b) {
  if (a == b) throw InvalidArgument("DDI pair needs two distinct medications");
  return a < b ? DdiPair{a, b} : DdiPair{b, a};
}

// ---------------------------------------------------------------------------
// Cohort

void Cohort::Validate() const {
  vocab.Validate();
  const int n_meds = vocab.n_medications();
  std::map<std::int64_t, std::int64_t> seen_events;
  for (size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::string where = "record " + std::to_string(r);
    if (!seen_events.emplace(rec.event_id, rec.patient_id).second) {
      throw SchemaError(where + ": duplicate event_id " +
                        std::to_string(rec.event_id));
    }
    for (int d : rec.diagnoses)
      CheckIndex(d, vocab.n_diagnoses(), where + ".diagnoses");
    for (int p : rec.procedures)
      CheckIndex(p, vocab.n_procedures(), where + ".procedures");
    for (const auto& lab : rec.lab_events) {
      CheckIndex(lab.code, vocab.n_lab_codes(), where + ".labs");
    }
    CheckIndex(rec.demographics.ethnicity, vocab.n_ethnicities,
               where + ".ethnicity");
    if (rec.demographics.age < 18) {
      throw SchemaError(where + ": age below 18");
    }
    if (rec.demographics.admission_seq < 1) {
      throw SchemaError(where + ": admission_seq below 1");
    }
    if (rec.medications.size() != n_meds) {
      throw SchemaError(where + ": medication vector length mismatch");
    }
    if (rec.medications.Empty()) {
      throw SchemaError(where + ": empty medication set");
    }
    if (!(rec.los >= 1.0) || !std::isfinite(rec.los)) {
      throw SchemaError(where + ": los below 1 day");
    }
  }
  for (const auto& [a, b] : ddi_pairs) {
    CheckIndex(a, n_meds, "ddi");
    CheckIndex(b, n_meds, "ddi");
    if (a >= b) throw SchemaError("ddi pair not canonical");
  }
}

std::vector<std::int64_t> Cohort::PatientIds() const {
  std::vector<std::int64_t> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.patient_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

const HospitalizationRecord* Cohort::FindEvent(std::int64_t event_id) const {
  for (const auto& r : records) {
    if (r.event_id == event_id) return &r;
  }
  return nullptr;
}

double Cohort::MeanLos() const {
  if (records.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : records) sum += r.los;
  return sum / static_cast<double>(records.size());
}

// ---------------------------------------------------------------------------
// Generator

void GeneratorConfig::Validate() const {
  if (n_diagnoses < 1 || n_procedures < 1 || n_medications < 1 ||
      n_lab_codes < 1 || n_ethnicities < 1) {
    throw InvalidArgument("vocabulary sizes must be >= 1");
  }
  if (n_patients < 1) throw InvalidArgument("n_patients must be >= 1");
  if (min_events_per_patient < 1 ||
      max_events_per_patient < min_events_per_patient) {
    throw InvalidArgument("invalid events-per-patient range");
  }
  if (min_ideal_set < 1 || max_ideal_set < min_ideal_set ||
      max_ideal_set > n_medications) {
    throw InvalidArgument("invalid ideal-set size range");
  }
  for (double p : {q_miss, q_extra, ddi_density, second_procedure_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw InvalidArgument("probabilities must lie in [0,1]");
    }
  }
  if (c_miss < 0.0 || c_extra < 0.0) {
    throw InvalidArgument("c_miss and c_extra must be >= 0");
  }
  if (base_los_min < 1.0 || base_los_max < base_los_min) {
    throw InvalidArgument("invalid base LOS range");
  }
  if (noise_spread < 0) throw InvalidArgument("noise_spread must be >= 0");
}

GeneratedCohort GenerateCohort(const GeneratorConfig& config) {
  config.Validate();
  std::mt19937_64 rng(config.seed);
  auto uniform_int = [&rng](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  auto bernoulli = [&rng](double p) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
  };

  GeneratedCohort out;
  Cohort& cohort = out.cohort;
  cohort.vocab = Vocabularies::Synthetic(
      config.n_diagnoses, config.n_procedures, config.n_medications,
      config.n_lab_codes, config.n_ethnicities);
  const int n_meds = config.n_medications;

  // Hidden structure: ideal medication subset, base LOS and two linked
  // diagnoses per procedure.
  std::vector<int> all_meds(n_meds);
  std::iota(all_meds.begin(), all_meds.end(), 0);
  auto& oracle = out.oracle;
  std::vector<std::vector<int>> linked_diagnoses(config.n_procedures);
  for (int p = 0; p < config.n_procedures; ++p) {
    const int size = uniform_int(config.min_ideal_set, config.max_ideal_set);
    std::vector<int> pick = all_meds;
    std::shuffle(pick.begin(), pick.end(), rng);
    pick.resize(size);
    std::sort(pick.begin(), pick.end());
    oracle.ideal_sets.push_back(pick);
    oracle.base_los.push_back(static_cast<double>(
        uniform_int(static_cast<int>(std::ceil(config.base_los_min)),
                    static_cast<int>(std::floor(config.base_los_max)))));
    for (int k = 0; k < 2; ++k) {
      linked_diagnoses[p].push_back(uniform_int(0, config.n_diagnoses - 1));
    }
  }

  for (int a = 0; a < n_meds; ++a) {
    for (int b = a + 1; b < n_meds; ++b) {
      if (bernoulli(config.ddi_density)) cohort.ddi_pairs.insert({a, b});
    }
  }

  std::normal_distribution<double> age_dist(62.0, 14.0);
  std::int64_t next_event = 0;
  for (int patient = 0; patient < config.n_patients; ++patient) {
    const int n_events = uniform_int(config.min_events_per_patient,
                                     config.max_events_per_patient);
    int age = static_cast<int>(std::lround(age_dist(rng)));
    age = std::clamp(age, 18, 90);
    const Gender gender = bernoulli(0.5) ? Gender::kMale : Gender::kFemale;
    const int ethnicity = uniform_int(0, config.n_ethnicities - 1);

    for (int e = 0; e < n_events; ++e) {
      HospitalizationRecord rec;
      rec.patient_id = patient;
      rec.event_id = next_event++;
      rec.demographics = {std::min(age + e, 90), gender, ethnicity, e + 1};

      // Procedures: one, optionally a second distinct one.
      std::set<int> procs{uniform_int(0, config.n_procedures - 1)};
      if (config.n_procedures > 1 && bernoulli(config.second_procedure_prob)) {
        int second;
        do {
          second = uniform_int(0, config.n_procedures - 1);
        } while (procs.count(second));
        procs.insert(second);
      }
      rec.procedures.assign(procs.begin(), procs.end());

      std::set<int> diags;
      for (int p : rec.procedures) {
        for (int d : linked_diagnoses[p]) {
          if (bernoulli(0.8)) diags.insert(d);
        }
      }
      const int n_random_diag = uniform_int(1, 3);
      for (int k = 0; k < n_random_diag; ++k) {
        diags.insert(uniform_int(0, config.n_diagnoses - 1));
      }
      rec.diagnoses.assign(diags.begin(), diags.end());

      std::map<int, bool> labs;
      const int n_labs = uniform_int(3, std::min(8, config.n_lab_codes + 2));
      for (int k = 0; k < n_labs; ++k) {
        labs[uniform_int(0, config.n_lab_codes - 1)] = bernoulli(0.3);
      }
      for (const auto& [code, abnormal] : labs) {
        rec.lab_events.push_back({code, abnormal});
      }

      std::set<int> ideal;
      double base_sum = 0.0;
      for (int p : rec.procedures) {
        ideal.insert(oracle.ideal_sets[p].begin(), oracle.ideal_sets[p].end());
        base_sum += oracle.base_los[p];
      }
      MedicationSet meds(n_meds);
      int missing = 0;
      int extra = 0;
      for (int m = 0; m < n_meds; ++m) {
        if (ideal.count(m)) {
          if (bernoulli(config.q_miss)) {
            ++missing;
          } else {
            meds.Set(m);
          }
        } else if (bernoulli(config.q_extra)) {
          meds.Set(m);
          ++extra;
        }
      }
      if (meds.Empty()) {
        // Keep the action nonempty: restore one dropped ideal drug.
        std::vector<int> dropped(ideal.begin(), ideal.end());
        meds.Set(dropped[uniform_int(0, static_cast<int>(dropped.size()) - 1)]);
        --missing;
      }
      rec.medications = std::move(meds);

      const double noise = config.noise_spread > 0
                               ? static_cast<double>(uniform_int(
                                     -config.noise_spread, config.noise_spread))
                               : 0.0;
      const double raw = base_sum / static_cast<double>(rec.procedures.size()) +
                         config.c_miss * missing + config.c_extra * extra +
                         noise;
      rec.los = std::max(1.0, std::round(raw));
      cohort.records.push_back(std::move(rec));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

Cohort SubsetByPatients(const Cohort& cohort,
                        const std::set<std::int64_t>& patients) {
  Cohort out;
  out.vocab = cohort.vocab;
  out.ddi_pairs = cohort.ddi_pairs;
  for (const auto& r : cohort.records) {
    if (patients.count(r.patient_id)) out.records.push_back(r);
  }
  return out;
}

Cohort MergeCohorts(const Cohort& a, const Cohort& b) {
  if (!(a.vocab == b.vocab)) throw SchemaError("vocabulary mismatch in merge");
  Cohort out = a;
  out.records.insert(out.records.end(), b.records.begin(), b.records.end());
  out.ddi_pairs.insert(b.ddi_pairs.begin(), b.ddi_pairs.end());
  return out;
}

CohortSplit SplitCohort(const Cohort& cohort, const SplitRatios& ratios,
                        std::uint64_t seed) {
  if (ratios.train <= 0.0 || ratios.val < 0.0 || ratios.test < 0.0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw InvalidArgument("split ratios must be non-negative and sum to 1");
  }
  auto patients = cohort.PatientIds();
  const auto n = static_cast<double>(patients.size());
  if (patients.size() < 3 && (ratios.val > 0.0 || ratios.test > 0.0)) {
    throw InvalidArgument("need at least 3 patients to split");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(patients.begin(), patients.end(), rng);

  const auto n_total = patients.size();
  auto n_train = static_cast<size_t>(std::llround(ratios.train * n));
  auto n_val = static_cast<size_t>(std::llround(ratios.val * n));
  n_train = std::min(n_train, n_total);
  n_val = std::min(n_val, n_total - n_train);
  if (ratios.test == 0.0) n_val = n_total - n_train;

  std::set<std::int64_t> train(patients.begin(), patients.begin() + n_train);
  std::set<std::int64_t> val(patients.begin() + n_train,
                             patients.begin() + n_train + n_val);
  std::set<std::int64_t> test(patients.begin() + n_train + n_val,
                              patients.end());
  return {SubsetByPatients(cohort, train), SubsetByPatients(cohort, val),
          SubsetByPatients(cohort, test)};
}

// ---------------------------------------------------------------------------
// JSON encoding

Json RecordToJson(const HospitalizationRecord& r) {
  Json j;
  j["patient_id"] = r.patient_id;
  j["event_id"] = r.event_id;
  j["diagnoses"] = r.diagnoses;
  j["procedures"] = r.procedures;
  Json labs = Json::array();
  for (const auto& lab : r.lab_events) {
    labs.push_back(Json::array({lab.code, lab.abnormal ? 1 : 0}));
  }
  j["labs"] = std::move(labs);
  j["age"] = r.demographics.age;
  j["gender"] = r.demographics.gender == Gender::kMale ? "M" : "F";
  j["ethnicity"] = r.demographics.ethnicity;
  j["admission_seq"] = r.demographics.admission_seq;
  j["medications"] = r.medications.Indices();
  j["los"] = r.los;
  return j;
}

namespace {

const Json& Member(const Json& doc, const std::string& key) {
  auto it = doc.find(key);
  if (it == doc.end()) throw JsonSchemaError(key, "missing");
  return *it;
}

int AsInt(const Json& v, const std::string& field) {
  if (!v.is_number_integer()) throw JsonSchemaError(field, "expected integer");
  return v.get<int>();
}

std::vector<int> AsIndexList(const Json& v, const std::string& field,
                             int bound) {
  if (!v.is_array()) throw JsonSchemaError(field, "expected array");
  std::vector<int> out;
  for (size_t i = 0; i < v.size(); ++i) {
    const std::string f = field + "[" + std::to_string(i) + "]";
    const int idx = AsInt(v[i], f);
    CheckIndex(idx, bound, f);
    out.push_back(idx);
  }
  return out;
}

}  // namespace

HospitalizationRecord RecordFromJson(const Json& doc, const Vocabularies& vocab,
                                     bool require_outcome) {
  static const std::set<std::string> kKnown = {
      "patient_id", "event_id",  "diagnoses",     "procedures",  "labs", "age",
      "gender",     "ethnicity", "admission_seq", "medications", "los"};
  if (!doc.is_object()) throw JsonSchemaError("$", "expected object");
  for (const auto& [key, _] : doc.items()) {
    if (!kKnown.count(key)) throw JsonSchemaError(key, "unknown field");
  }

  HospitalizationRecord r;
  if (require_outcome || doc.contains("patient_id")) {
    const auto& v = Member(doc, "patient_id");
    if (!v.is_number_integer())
      throw JsonSchemaError("patient_id", "expected integer");
    r.patient_id = v.get<std::int64_t>();
  } else {
    r.patient_id = -1;
  }
  if (require_outcome || doc.contains("event_id")) {
    const auto& v = Member(doc, "event_id");
    if (!v.is_number_integer())
      throw JsonSchemaError("event_id", "expected integer");
    r.event_id = v.get<std::int64_t>();
  } else {
    r.event_id = -1;
  }

  r.diagnoses =
      AsIndexList(Member(doc, "diagnoses"), "diagnoses", vocab.n_diagnoses());
  std::sort(r.diagnoses.begin(), r.diagnoses.end());
  r.diagnoses.erase(std::unique(r.diagnoses.begin(), r.diagnoses.end()),
                    r.diagnoses.end());
  r.procedures = AsIndexList(Member(doc, "procedures"), "procedures",
                             vocab.n_procedures());
  std::sort(r.procedures.begin(), r.procedures.end());

  const auto& labs = Member(doc, "labs");
  if (!labs.is_array()) throw JsonSchemaError("labs", "expected array");
  std::map<int, bool> lab_map;
  for (size_t i = 0; i < labs.size(); ++i) {
    const std::string f = "labs[" + std::to_string(i) + "]";
    const auto& pair = labs[i];
    if (!pair.is_array() || pair.size() != 2) {
      throw JsonSchemaError(f, "expected [code, abnormal]");
    }
    const int code = AsInt(pair[0], f + "[0]");
    CheckIndex(code, vocab.n_lab_codes(), f + "[0]");
    const int flag = AsInt(pair[1], f + "[1]");
    if (flag != 0 && flag != 1)
      throw JsonSchemaError(f + "[1]", "expected 0 or 1");
    lab_map[code] = flag == 1;
  }
  for (const auto& [code, abnormal] : lab_map) {
    r.lab_events.push_back({code, abnormal});
  }

  r.demographics.age = AsInt(Member(doc, "age"), "age");
  if (r.demographics.age < 18 || r.demographics.age > 130) {
    throw CodeRangeError("age", "age must be in [18,130]");
  }
  const auto& gender = Member(doc, "gender");
  if (gender == "F") {
    r.demographics.gender = Gender::kFemale;
  } else if (gender == "M") {
    r.demographics.gender = Gender::kMale;
  } else {
    throw JsonSchemaError("gender", "expected \"F\" or \"M\"");
  }
  r.demographics.ethnicity = AsInt(Member(doc, "ethnicity"), "ethnicity");
  CheckIndex(r.demographics.ethnicity, vocab.n_ethnicities, "ethnicity");
  r.demographics.admission_seq =
      AsInt(Member(doc, "admission_seq"), "admission_seq");
  if (r.demographics.admission_seq < 1) {
    throw CodeRangeError("admission_seq", "must be >= 1");
  }

  r.medications = MedicationSet(vocab.n_medications());
  if (require_outcome || doc.contains("medications")) {
    r.medications = MedicationSet::FromIndices(
        vocab.n_medications(),
        AsIndexList(Member(doc, "medications"), "medications",
                    vocab.n_medications()));
  }
  if (require_outcome || doc.contains("los")) {
    const auto& los = Member(doc, "los");
    if (!los.is_number()) throw JsonSchemaError("los", "expected number");
    r.los = los.get<double>();
    if (!(r.los >= 1.0)) throw CodeRangeError("los", "must be >= 1");
  } else {
    r.los = 0.0;
  }
  return r;
}

Json VocabToJson(const Vocabularies& vocab) {
  Json j;
  j["diagnoses"] = vocab.diagnoses;
  j["procedures"] = vocab.procedures;
  j["medications"] = vocab.medications;
  j["lab_codes"] = vocab.lab_codes;
  j["n_ethnicities"] = vocab.n_ethnicities;
  return j;
}

// ---------------------------------------------------------------------------
// Persistence

void WriteCohort(const Cohort& cohort, std::ostream& out) {
  Json header;
  header["format"] = kCohortFormat;
  header["version"] = kCohortVersion;
  header["n_records"] = cohort.records.size();
  header["vocab"] = VocabToJson(cohort.vocab);
  Json ddi = Json::array();
  for (const auto& [a, b] : cohort.ddi_pairs)
    ddi.push_back(Json::array({a, b}));
  header["ddi"] = std::move(ddi);
  out << header.dump() << '\n';
  for (const auto& r : cohort.records) out << RecordToJson(r).dump() << '\n';
}

void WriteCohort(const Cohort& cohort, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  WriteCohort(cohort, out);
  if (!out) throw IoError("write failed for '" + path + "'");
}

namespace {

std::vector<std::string> LabelArray(const Json& v, const char* name, int line) {
  if (!v.is_array()) {
    throw ParseError(std::string("vocab.") + name + " must be an array", line);
  }
  std::vector<std::string> out;
  for (const auto& s : v) {
    if (!s.is_string()) {
      throw ParseError(std::string("vocab.") + name + " labels must be strings",
                       line);
    }
    out.push_back(s.get<std::string>());
  }
  return out;
}

}  // namespace

Cohort ReadCohort(std::istream& in) {
  std::string line;
  int line_no = 0;
  auto parse_line = [&](const std::string& text) {
    try {
      return Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
  };

  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  ++line_no;
  const Json header = parse_line(line);
  if (!header.is_object() || header.value("format", "") != kCohortFormat) {
    throw ParseError("not a medcf cohort file", line_no);
  }
  if (header.value("version", 0) != kCohortVersion) {
    throw ParseError("unsupported cohort format version", line_no);
  }
  Cohort cohort;
  size_t n_records = 0;
  try {
    const auto& vocab = header.at("vocab");
    cohort.vocab.diagnoses =
        LabelArray(vocab.at("diagnoses"), "diagnoses", line_no);
    cohort.vocab.procedures =
        LabelArray(vocab.at("procedures"), "procedures", line_no);
    cohort.vocab.medications =
        LabelArray(vocab.at("medications"), "medications", line_no);
    cohort.vocab.lab_codes =
        LabelArray(vocab.at("lab_codes"), "lab_codes", line_no);
    cohort.vocab.n_ethnicities = vocab.at("n_ethnicities").get<int>();
    n_records = header.at("n_records").get<size_t>();
    for (const auto& pair : header.at("ddi")) {
      cohort.ddi_pairs.insert(
          MakeDdiPair(pair.at(0).get<int>(), pair.at(1).get<int>()));
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("bad header: ") + e.what(), line_no);
  }
  cohort.vocab.Validate();

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const Json doc = parse_line(line);
    try {
      cohort.records.push_back(RecordFromJson(doc, cohort.vocab));
    } catch (const CodeRangeError& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const JsonSchemaError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  if (cohort.records.size() != n_records) {
    throw ParseError("truncated file: expected " + std::to_string(n_records) +
                         " records, found " +
                         std::to_string(cohort.records.size()),
                     line_no);
  }
  cohort.Validate();
  return cohort;
}

Cohort ReadCohort(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return ReadCohort(in);
}

void WriteOracle(const GeneratorOracle& oracle, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (size_t p = 0; p < oracle.ideal_sets.size(); ++p) {
    out << "procedure " << p << " base " << oracle.base_los[p] << " ideal";
    for (int m : oracle.ideal_sets[p]) out << ' ' << m;
    out << '\n';
  }
}

GeneratorOracle ReadOracle(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  GeneratorOracle oracle;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag, base_tag, ideal_tag;
    size_t index = 0;
    double base = 0.0;
    if (!(ss >> tag >> index >> base_tag >> base >> ideal_tag) ||
        tag != "procedure" || base_tag != "base" || ideal_tag != "ideal" ||
        index != oracle.ideal_sets.size()) {
      throw ParseError("malformed oracle line", line_no);
    }
    std::vector<int> meds;
    int m;
    while (ss >> m) meds.push_back(m);
    oracle.ideal_sets.push_back(std::move(meds));
    oracle.base_los.push_back(base);
  }
  return oracle;
}

std::set<DdiPair> ReadDdiCsv(const std::string& path, int n_medications) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::set<DdiPair> pairs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.find_first_of("0123456789") != 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ParseError("expected med_a,med_b", line_no);
    int a = 0, b = 0;
    try {
      size_t used_a = 0, used_b = 0;
      const std::string sa = line.substr(0, comma);
      const std::string sb = line.substr(comma + 1);
      a = std::stoi(sa, &used_a);
      b = std::stoi(sb, &used_b);
      if (used_a != sa.size() || used_b != sb.size())
        throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ParseError("non-integer medication index", line_no);
    }
    if (a < 0 || b < 0 || a >= n_medications || b >= n_medications) {
      throw SchemaError("DDI index out of range at line " +
                        std::to_string(line_no));
    }
    if (a == b) throw ParseError("self-interaction pair", line_no);
    pairs.insert(MakeDdiPair(a, b));
  }
  return pairs;
}

}  // namespace medcf
