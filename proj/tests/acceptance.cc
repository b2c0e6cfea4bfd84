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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any fails. Pass criterion numbers as arguments to run a
// subset.

#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "medcf/analysis.h"
#include "medcf/cli.h"
#include "medcf/cohort.h"
#include "medcf/metrics.h"
#include "medcf/predictor.h"
#include "medcf/retrieval.h"
#include "medcf/trainer.h"
#include "test_util.h"

namespace medcf {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

GeneratorConfig FiveThousand(std::uint64_t seed) {
  GeneratorConfig g;
  g.n_patients = 5000;
  g.seed = seed;
  return g;
}

// 1. ELOS of the recorded sets against the recorded stays.
Outcome SelfRetrieval() {
  const auto start = Clock::now();
  const Cohort c = GenerateCohort(FiveThousand(0)).cohort;
  const auto idx = RetrievalIndex::Build(c, "all");
  std::vector<const HospitalizationRecord*> recs;
  std::vector<MedicationSet> sets;
  for (const auto& r : c.records) {
    recs.push_back(&r);
    sets.push_back(r.medications);
  }
  const BatchReward br = ComputeBatchReward(recs, sets, idx, RetrievalConfig{});
  const double mean_elos = br.sum_elos / br.n_included;
  const double mean_los = c.MeanLos();
  const double gap = mean_elos - mean_los;
  const double secs = Seconds(start);
  return {
      std::abs(gap) < 0.05 && secs < 60.0,
      fmt::format(
          "mean ELOS {:.4f} mean LOS {:.4f} |diff| {:.4f} (< 0.05), {:.1f}s",
          mean_elos, mean_los, std::abs(gap), secs)};
}

// 2. Gate-off two-phase trainer against the supervised trainer.
Outcome GateOffEquivalence() {
  const auto start = Clock::now();
  GeneratorConfig g;
  g.n_patients = 600;
  g.seed = 2;
  const CohortSplit s = SplitCohort(GenerateCohort(g).cohort, SplitRatios{}, 2);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.delta = TrainConfig::kGateOff;
  std::vector<ModelParams> a, b;
  Train(s.train, s.val, cfg,
        [&](int, int, const ModelParams& p) { a.push_back(p); });
  TrainSupervised(s.train, s.val, cfg,
                  [&](int, int, const ModelParams& p) { b.push_back(p); });
  bool same = !a.empty() && a.size() == b.size();
  for (size_t i = 0; same && i < a.size(); ++i) {
    same = a[i].tensors() == b[i].tensors();
  }
  const double secs = Seconds(start);
  return {same && secs < 120.0,
          fmt::format("{} vs {} updates, {}, {:.1f}s", a.size(), b.size(),
                      same ? "bit-identical" : "diverged", secs)};
}

// 3. Five seeds of two-phase training against the baseline.
Outcome Directional() {
  const auto start = Clock::now();
  std::vector<double> elos_tp, elos_base, jac_tp, jac_base;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Cohort c = GenerateCohort(FiveThousand(1000 + seed)).cohort;
    const CohortSplit s = SplitCohort(c, SplitRatios{}, seed);
    const auto eval_index =
        RetrievalIndex::Build(MergeCohorts(s.train, s.val), "eval");
    TrainConfig cfg;
    cfg.seed = seed;
    EvalConfig ec;
    ec.threshold = cfg.threshold;
    const TrainResult tp = Train(s.train, s.val, cfg);
    const EvalReport rt =
        Evaluate(tp.best_params, s.test, eval_index, ec).report;
    cfg.delta = TrainConfig::kGateOff;
    const TrainResult base = Train(s.train, s.val, cfg);
    const EvalReport rb =
        Evaluate(base.best_params, s.test, eval_index, ec).report;
    elos_tp.push_back(rt.elos);
    elos_base.push_back(rb.elos);
    jac_tp.push_back(rt.jaccard);
    jac_base.push_back(rb.jaccard);
    std::printf(
        "  seed %d: two-phase ELOS %.4f Jaccard %.4f | baseline ELOS %.4f "
        "Jaccard %.4f\n",
        static_cast<int>(seed), rt.elos, rt.jaccard, rb.elos, rb.jaccard);
    std::fflush(stdout);
  }
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  };
  TTestResult t;
  std::string t_note;
  try {
    t = PairedTTest(elos_tp, elos_base);
  } catch (const Error& e) {
    t_note = std::string(" (t-test: ") + e.what() + ")";
  }
  const bool lower = mean(elos_tp) < mean(elos_base);
  const bool jac_ok = mean(jac_tp) >= mean(jac_base) - 0.01;
  const double secs = Seconds(start);
  return {lower && t_note.empty() && t.p < 0.05 && jac_ok && secs < 600.0,
          fmt::format(
              "ELOS {:.4f} vs {:.4f}, t {:.3f} p {:.4f} (< 0.05){}, Jaccard "
              "{:.4f} vs {:.4f} (>= baseline - 0.01), {:.1f}s",
              mean(elos_tp), mean(elos_base), t.t, t.p, t_note, mean(jac_tp),
              mean(jac_base), secs)};
}

// 4. Analytic against central finite-difference gradients, default model.
Outcome Gradients() {
  const auto start = Clock::now();
  GeneratorConfig g;
  g.n_patients = 4;
  g.seed = 4;
  const Cohort c = GenerateCohort(g).cohort;
  const ModelConfig mc = ModelConfig::ForVocab(c.vocab);
  ModelParams params = InitParams(mc, 4);
  // Offset gains and biases so none of them sits at a trivial point.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (auto& t : params.tensors()) {
    for (int i = 0; i < t.value.size(); ++i) t.value.data()[i] += u(rng);
  }
  std::vector<const HospitalizationRecord*> recs;
  for (const auto& r : c.records) recs.push_back(&r);
  const EncodedBatch batch = EncodeRecords(recs, mc);
  const Matrix targets = EncodeTargets(recs, mc.n_medications);
  auto loss = [&](const ModelParams& p) {
    ForwardPass pass(p, batch);
    return pass.AttachBceLoss(targets);
  };
  ForwardPass pass(params, batch);
  pass.AttachBceLoss(targets);
  const ModelParams grads = pass.Backward();
  const int n_tensors = static_cast<int>(params.tensors().size());
  const int per_tensor = std::max(3, (100 + n_tensors - 1) / n_tensors);
  double worst = 0.0;
  int checked = 0;
  for (int t = 0; t < n_tensors; ++t) {
    const int size = static_cast<int>(params.tensors()[t].value.size());
    std::uniform_int_distribution<int> pick(0, size - 1);
    for (int s = 0; s < per_tensor; ++s) {
      const int idx = pick(rng);
      constexpr double h = 1e-5;
      ModelParams plus = params, minus = params;
      plus.tensors()[t].value.data()[idx] += h;
      minus.tensors()[t].value.data()[idx] -= h;
      const double fd = (loss(plus) - loss(minus)) / (2 * h);
      const double an = grads.tensors()[t].value.data()[idx];
      worst = std::max(worst, std::abs(an - fd) /
                                  std::max({std::abs(an), std::abs(fd), 1e-6}));
      ++checked;
    }
  }
  const double secs = Seconds(start);
  return {
      checked >= 100 && worst < 1e-4 && secs < 30.0,
      fmt::format("{} coordinates over {} tensors, max relative error {:.2e} "
                  "(< 1e-4), {:.1f}s",
                  checked, n_tensors, worst, secs)};
}

// 5. Retrieval against a linear scan.
Outcome RetrievalOracle() {
  const auto start = Clock::now();
  GeneratorConfig g;
  g.n_patients = 1200;
  g.n_procedures = 4;
  g.seed = 5;
  Cohort c = GenerateCohort(g).cohort;
  if (c.records.size() > 2000) c.records.resize(2000);
  const auto idx = RetrievalIndex::Build(c, "all");
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<size_t> pick(0, c.records.size() - 1);
  std::bernoulli_distribution coin(0.2);
  int mismatches = 0;
  for (int q = 0; q < 200; ++q) {
    const HospitalizationRecord& query = c.records[pick(rng)];
    RetrievalConfig cfg;
    cfg.k = 1 + q % 60;
    cfg.phi = (q % 4) * 0.25 - 0.25;
    cfg.age_window = q % 10;
    cfg.empty_pool = EmptyPoolPolicy::kZeroReward;
    MedicationSet alpha(g.n_medications);
    for (int m = 0; m < g.n_medications; ++m) alpha.Set(m, coin(rng));
    if (alpha.Empty()) alpha.Set(q % g.n_medications);

    auto key = query.procedures;
    std::sort(key.begin(), key.end());
    std::vector<std::int64_t> want_pool;
    std::vector<std::pair<double, std::int64_t>> scored;
    for (const auto& r : c.records) {
      auto rk = r.procedures;
      std::sort(rk.begin(), rk.end());
      if (rk != key || r.event_id == query.event_id ||
          std::abs(r.demographics.age - query.demographics.age) >
              cfg.age_window) {
        continue;
      }
      want_pool.push_back(r.event_id);
      int dot = 0, na = 0, nb = 0;
      for (int m = 0; m < alpha.size(); ++m) {
        dot += alpha.Test(m) && r.medications.Test(m);
        na += alpha.Test(m);
        nb += r.medications.Test(m);
      }
      const double sim = nb == 0 ? 0.0 : dot / std::sqrt(double(na) * nb);
      if (sim > cfg.phi) scored.push_back({-sim, r.event_id});
    }
    std::sort(want_pool.begin(), want_pool.end());
    std::sort(scored.begin(), scored.end());
    if (static_cast<int>(scored.size()) > cfg.k) scored.resize(cfg.k);

    std::vector<std::int64_t> got_pool;
    for (const auto* e : RetrieveByProcedures(idx, query, cfg))
      got_pool.push_back(e->event_id);
    std::sort(got_pool.begin(), got_pool.end());
    const RetrievedSet got = Counterfactual(idx, query, alpha, cfg);
    std::vector<std::int64_t> got_ids, want_ids;
    for (const auto& n : got.neighbors) got_ids.push_back(n.event_id);
    for (const auto& [s, id] : scored) want_ids.push_back(id);
    const bool ok = got_pool == want_pool && got_ids == want_ids &&
                    got.excluded == scored.empty();
    mismatches += !ok;
  }
  const double secs = Seconds(start);
  return {mismatches == 0 && secs < 30.0,
          fmt::format("200 queries over {} records, {} mismatches, {:.1f}s",
                      c.records.size(), mismatches, secs)};
}

// 6. Hand-computed metric and objective fixtures.
Outcome Fixtures() {
  std::vector<std::string> bad;
  auto check = [&](const char* name, double got, double want) {
    if (!(std::abs(got - want) < 1e-6))
      bad.push_back(fmt::format("{} {}", name, got));
  };
  check("roc_auc",
        RocAuc(std::vector<double>{0.9, 0.8, 0.7, 0.6},
               std::vector<double>{1, 0, 1, 0}),
        0.75);
  check("jaccard",
        ComputeSetMetrics(
            std::vector<MedicationSet>{MedicationSet::FromIndices(4, {0, 1})},
            std::vector<MedicationSet>{MedicationSet::FromIndices(4, {1, 2})})
            .jaccard,
        1.0 / 3.0);
  std::vector<std::vector<int>> docs(10, std::vector<int>{0});
  check("tfidf", Tfidf(docs, {"t"}).scores(0, 0), 0.958607);
  check("perturbation", Perturbation(2.0, 2.0, 0.5), 0.405465);
  TrainConfig cfg;
  check("objective", PerturbedObjective(1.0, std::log(1.5), cfg), 0.344372);
  std::string detail = "5 fixtures within 1e-6";
  if (!bad.empty()) {
    detail = "off:";
    for (const auto& b : bad) detail += " " + b;
  }
  return {bad.empty(), detail};
}

std::vector<MedicationSet> RandomSets(int n, int n_meds, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dens(0.1, 0.5);
  const double p = dens(rng);
  std::bernoulli_distribution coin(p);
  std::vector<MedicationSet> out;
  for (int i = 0; i < n; ++i) {
    MedicationSet s(n_meds);
    for (int m = 0; m < n_meds; ++m) s.Set(m, coin(rng));
    if (s.Empty()) s.Set(i % n_meds);
    out.push_back(s);
  }
  return out;
}

// 7. Embedding geometry on random graphs.
Outcome Geometry() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> size(30, 150);
  std::uniform_int_distribution<int> meds(6, 24);
  std::uniform_int_distribution<int> kk(3, 15);
  int points = 0, off_surface = 0, outside = 0, ce_up = 0;
  for (int gidx = 0; gidx < 20; ++gidx) {
    const auto sets = RandomSets(size(rng), meds(rng), rng);
    GraphConfig gc;
    gc.k_neighbors = kk(rng);
    const FuzzyGraph g = BuildGraph(sets, gc);
    EmbedConfig ec;
    ec.seed = gidx;
    const HyperboloidEmbedding e = Embed(g, ec);
    const PoincarePoints p = ToPoincare(e);
    ce_up += e.final_objective > e.initial_objective;
    for (int i = 0; i < e.size(); ++i) {
      const double z = e.z(i);
      off_surface +=
          !(std::abs(z * z - e.x[i] * e.x[i] - e.y[i] * e.y[i] - 1.0) < 1e-6);
      outside += !(p.u[i] * p.u[i] + p.v[i] * p.v[i] < 1.0);
      ++points;
    }
  }
  return {off_surface == 0 && outside == 0 && ce_up == 0,
          fmt::format("{} points: {} off the hyperboloid, {} outside the disk; "
                      "CE increased on {}/20 graphs",
                      points, off_surface, outside, ce_up)};
}

// 8. Every command twice, in two directories, byte-identical outputs.
Outcome CliDeterminism() {
  const auto start = Clock::now();
  auto run_all = [](const testing::TempDir& d,
                    std::map<std::string, std::string>& files,
                    std::string& failure) {
    auto run = [&](std::vector<std::string> args) {
      std::ostringstream out, err;
      const int code = Dispatch(args, out, err);
      if (code != 0 && failure.empty()) failure = args[0] + ": " + err.str();
      files[args[0] + ".stdout"] = out.str();
    };
    run({"gen", "--patients", "300", "--seed", "8", "--out",
         d.File("c.jsonl")});
    run({"split", "--in", d.File("c.jsonl"), "--seed", "8", "--out-prefix",
         d.File("c")});
    run({"train", "--train", d.File("c_train.jsonl"), "--val",
         d.File("c_val.jsonl"), "--out-ckpt", d.File("m.ckpt"), "--history",
         d.File("h.csv"), "--max-epochs", "2", "--seed", "8"});
    run({"eval", "--checkpoint", d.File("m.ckpt"), "--cohort",
         d.File("c_test.jsonl"), "--index-cohort", d.File("c_train.jsonl"),
         "--predictions", d.File("p.jsonl"), "--out", d.File("report.txt")});
    run({"analyze", "--predictions", d.File("p.jsonl"), "--cohort",
         d.File("c_test.jsonl"), "--out-dir", d.File("analysis"), "--k-range",
         "2..6", "--seed", "8"});
    for (const auto& entry :
         std::filesystem::recursive_directory_iterator(d.path())) {
      if (!entry.is_regular_file()) continue;
      files[std::filesystem::relative(entry.path(), d.path()).string()] =
          testing::Slurp(entry.path().string());
    }
  };
  // Identical inputs include identical paths, so both runs use one
  // directory; the first run's outputs are snapshotted before the second.
  testing::TempDir dir;
  std::map<std::string, std::string> fa, fb;
  std::string failure;
  run_all(dir, fa, failure);
  for (const auto& [name, bytes] : fa) {
    if (name.find(".stdout") == std::string::npos) {
      std::filesystem::remove(dir.path() / name);
    }
  }
  run_all(dir, fb, failure);
  std::vector<std::string> differ;
  for (const auto& [name, bytes] : fa) {
    auto it = fb.find(name);
    if (it == fb.end() || it->second != bytes) differ.push_back(name);
  }
  const double secs = Seconds(start);
  if (!failure.empty()) return {false, "command failed: " + failure};
  std::string detail = fmt::format("{} outputs compared, {} differ, {:.1f}s",
                                   fa.size(), differ.size(), secs);
  for (const auto& d : differ) detail += " " + d;
  return {differ.empty() && fa.size() == fb.size(), detail};
}

// 9. Two well-separated Gaussian blobs in disk coordinates, k range 2..6.
Outcome TwoBlobs() {
  int hits = 0;
  std::string ks;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.05);
    Matrix points(200, 2);
    for (int i = 0; i < 200; ++i) {
      points(i, 0) = (i < 100 ? -0.4 : 0.4) + noise(rng);
      points(i, 1) = noise(rng);
    }
    ClusterConfig cc;
    cc.k_min = 2;
    cc.k_max = 6;
    cc.seed = seed;
    const ClusterModel m = Cluster(points, cc);
    hits += m.chosen_k == 2;
    ks += fmt::format("{}{}", ks.empty() ? "" : ",", m.chosen_k);
  }
  return {hits == 10, fmt::format("k=2 on {}/10 seeds (chosen: {})", hits, ks)};
}

}  // namespace
}  // namespace medcf

int main(int argc, char** argv) {
  using medcf::Outcome;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria =
      {
          {"self-retrieval fidelity", medcf::SelfRetrieval},
          {"gate-off equivalence", medcf::GateOffEquivalence},
          {"directional improvement over baseline", medcf::Directional},
          {"gradient correctness", medcf::Gradients},
          {"retrieval oracle equivalence", medcf::RetrievalOracle},
          {"metric fixtures", medcf::Fixtures},
          {"geometry invariants", medcf::Geometry},
          {"CLI determinism", medcf::CliDeterminism},
          {"two-blob clustering", medcf::TwoBlobs},
  };
  medcf::ConfigureLogging();
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(number)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d %s: %s (%s)\n", number, criteria[i].first.c_str(),
                o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
