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

#include "medcf/cli.h"

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "medcf/analysis.h"
#include "medcf/cohort.h"
#include "medcf/error.h"
#include "medcf/metrics.h"
#include "medcf/predictor.h"
#include "medcf/record_json.h"
#include "medcf/retrieval.h"
#include "medcf/service.h"
#include "medcf/trainer.h"

namespace medcf {
namespace {

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw IoError("cannot write " + path);
}

std::string ReadText(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// "0,3,5" -> set over n medications.
MedicationSet ParseMedList(const std::string& text, int n) {
  std::vector<int> idx;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size())
      throw InvalidArgument("bad medication index '" + item + "'");
    if (v < 0 || v >= n) {
      throw InvalidArgument(
          fmt::format("medication index {} outside [0,{})", v, n));
    }
    idx.push_back(v);
  }
  return MedicationSet::FromIndices(n, idx);
}

// "2..12" or "2:12".
std::pair<int, int> ParseRange(const std::string& text) {
  std::string a;
  std::string b;
  if (auto p = text.find(".."); p != std::string::npos) {
    a = text.substr(0, p);
    b = text.substr(p + 2);
  } else if (auto q = text.find(':'); q != std::string::npos) {
    a = text.substr(0, q);
    b = text.substr(q + 1);
  } else {
    throw InvalidArgument("range must look like 2..12");
  }
  try {
    return {std::stoi(a), std::stoi(b)};
  } catch (const std::exception&) {
    throw InvalidArgument("range must look like 2..12");
  }
}

// Predicted sets, one JSON object per line: {"event_id", "medications"}.
std::string PredictionsJsonl(const Cohort& cohort,
                             const std::vector<MedicationSet>& sets) {
  std::string out;
  for (size_t i = 0; i < sets.size(); ++i) {
    Json j;
    j["event_id"] = cohort.records[i].event_id;
    j["medications"] = sets[i].Indices();
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<MedicationSet> ReadPredictions(const std::string& path,
                                           const Cohort& cohort) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  const int n = cohort.vocab.n_medications();
  std::map<std::int64_t, MedicationSet> by_event;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
      const auto id = j.at("event_id").get<std::int64_t>();
      const auto meds = j.at("medications").get<std::vector<int>>();
      for (int m : meds) {
        if (m < 0 || m >= n)
          throw InvalidArgument("medication index out of range");
      }
      by_event[id] = MedicationSet::FromIndices(n, meds);
    } catch (const std::exception& e) {
      throw ParseError(std::string("predictions: ") + e.what(), line_no);
    }
  }
  std::vector<MedicationSet> sets;
  for (const auto& r : cohort.records) {
    auto it = by_event.find(r.event_id);
    if (it == by_event.end()) {
      throw SchemaError(fmt::format("no prediction for event {}", r.event_id));
    }
    sets.push_back(it->second);
  }
  return sets;
}

EmptyPoolPolicy ParsePolicy(const std::string& s) {
  if (s == "self_fallback") return EmptyPoolPolicy::kSelfFallback;
  if (s == "zero_reward") return EmptyPoolPolicy::kZeroReward;
  throw InvalidArgument(
      "empty-pool policy must be self_fallback or zero_reward");
}

const std::vector<std::string> kPolicies = {"self_fallback", "zero_reward"};

struct GenArgs {
  GeneratorConfig g;
  std::string out;
  std::string oracle;
};

struct SplitArgs {
  std::string in;
  std::vector<double> ratios = {0.7, 0.15, 0.15};
  std::uint64_t seed = 0;
  std::string prefix;
};

struct TrainArgs {
  TrainConfig c;
  std::string train;
  std::string val;
  std::string ckpt;
  std::string history;
  bool baseline = false;
  std::string empty_pool = "self_fallback";
};

struct EvalArgs {
  std::string ckpt;
  std::string cohort;
  std::string index_cohort;
  std::string out;
  std::string predictions;
  std::string csv;
  double threshold = -1.0;
  bool macro = false;
  RetrievalConfig r{.empty_pool = EmptyPoolPolicy::kZeroReward};
  std::string empty_pool = "zero_reward";
  std::uint64_t seed = 0;
};

struct AnalyzeArgs {
  std::string predictions;
  std::string cohort;
  std::string out_dir;
  std::string k_range = "2..12";
  AnalysisConfig a;
  std::uint64_t seed = 0;
  bool hyperbolic = false;
};

struct QueryArgs {
  std::string index_cohort;
  std::string state_file;
  std::string meds;
  RetrievalConfig r{.empty_pool = EmptyPoolPolicy::kZeroReward};
  std::string empty_pool = "zero_reward";
  std::uint64_t seed = 0;
};

struct ServeArgs {
  std::string ckpt;
  std::string index_cohort;
  std::string host = "127.0.0.1";
  int port = 8080;
  RetrievalConfig r{.empty_pool = EmptyPoolPolicy::kZeroReward};
  std::uint64_t seed = 0;
};

void AddRetrievalOptions(CLI::App* sub, RetrievalConfig& r,
                         std::string& policy) {
  sub->add_option("--k", r.k, "Neighbors per counterfactual")
      ->capture_default_str();
  sub->add_option("--phi", r.phi, "Cosine threshold")->capture_default_str();
  sub->add_option("--age-window", r.age_window, "Age window in years")
      ->capture_default_str();
  sub->add_option("--empty-pool", policy, "self_fallback or zero_reward")
      ->check(CLI::IsMember(kPolicies))
      ->capture_default_str();
}

int RunGen(const GenArgs& a, std::ostream& out) {
  const GeneratedCohort gen = GenerateCohort(a.g);
  WriteCohort(gen.cohort, a.out);
  if (!a.oracle.empty()) WriteOracle(gen.oracle, a.oracle);
  out << fmt::format("wrote {} records ({} patients) to {}\n",
                     gen.cohort.records.size(), a.g.n_patients, a.out);
  return kExitOk;
}

int RunSplit(const SplitArgs& a, std::ostream& out) {
  if (a.ratios.size() != 3)
    throw InvalidArgument("--ratios takes three values");
  const Cohort cohort = ReadCohort(a.in);
  const CohortSplit s =
      SplitCohort(cohort, {a.ratios[0], a.ratios[1], a.ratios[2]}, a.seed);
  const std::pair<const char*, const Cohort*> parts[] = {
      {"train", &s.train}, {"val", &s.val}, {"test", &s.test}};
  for (const auto& [name, part] : parts) {
    const std::string path = a.prefix + "_" + name + ".jsonl";
    WriteCohort(*part, path);
    out << fmt::format("{}: {} records -> {}\n", name, part->records.size(),
                       path);
  }
  return kExitOk;
}

int RunTrain(TrainArgs a, std::ostream& out) {
  a.c.retrieval.empty_pool = ParsePolicy(a.empty_pool);
  if (a.baseline) a.c.delta = TrainConfig::kGateOff;
  const Cohort train = ReadCohort(a.train);
  const Cohort val = ReadCohort(a.val);
  const TrainResult result = Train(train, val, a.c);
  Checkpoint ckpt;
  ckpt.params = result.best_params;
  ckpt.extras = {{"threshold", a.c.threshold},
                 {"best_epoch", result.history.best_epoch},
                 {"seed", static_cast<double>(a.c.seed)},
                 {"baseline", a.baseline ? 1.0 : 0.0}};
  SaveCheckpoint(ckpt, a.ckpt);
  if (!a.history.empty()) WriteText(a.history, HistoryToCsv(result.history));
  const auto& last = result.history.epochs.back();
  out << fmt::format(
      "trained {} epochs, best epoch {}, val loss {:.6f} -> {}\n",
      result.history.epochs.size(), result.history.best_epoch, last.val_loss,
      a.ckpt);
  return kExitOk;
}

int RunEval(EvalArgs a, std::ostream& out) {
  a.r.empty_pool = ParsePolicy(a.empty_pool);
  const Checkpoint ckpt = LoadCheckpoint(a.ckpt);
  const Cohort cohort = ReadCohort(a.cohort);
  const Cohort index_cohort =
      a.index_cohort.empty() ? cohort : ReadCohort(a.index_cohort);
  const RetrievalIndex index = RetrievalIndex::Build(index_cohort, "eval");
  EvalConfig config;
  config.retrieval = a.r;
  config.macro_auc = a.macro;
  config.threshold = a.threshold;
  if (config.threshold < 0.0) {
    auto it = ckpt.extras.find("threshold");
    config.threshold = it == ckpt.extras.end() ? 0.5 : it->second;
  }
  const Evaluation e = Evaluate(ckpt.params, cohort, index, config);
  const std::string report = ReportToKeyValue(e.report);
  if (a.out.empty()) {
    out << report;
  } else {
    WriteText(a.out, report);
  }
  if (!a.predictions.empty()) {
    WriteText(a.predictions, PredictionsJsonl(cohort, e.predictions));
  }
  if (!a.csv.empty()) {
    WriteText(a.csv,
              ReportCsvHeader() + "\n" + ReportCsvRow(a.seed, e.report) + "\n");
  }
  return kExitOk;
}

int RunAnalyze(AnalyzeArgs a, std::ostream& out) {
  const Cohort cohort = ReadCohort(a.cohort);
  std::vector<MedicationSet> sets;
  if (a.predictions.empty()) {
    for (const auto& r : cohort.records) sets.push_back(r.medications);
  } else {
    sets = ReadPredictions(a.predictions, cohort);
  }
  const auto [k_min, k_max] = ParseRange(a.k_range);
  a.a.cluster.k_min = k_min;
  a.a.cluster.k_max = k_max;
  a.a.cluster.seed = a.seed;
  a.a.cluster.distance =
      a.hyperbolic ? ClusterDistance::kHyperbolic : ClusterDistance::kEuclidean;
  a.a.embed.seed = a.seed;
  const AnalysisBundle bundle = RunAnalysis(cohort, sets, a.a);
  EmitReport(bundle, a.out_dir);
  out << fmt::format(
      "{} points, {} edges, objective {:.4f} -> {:.4f}, k = {}; "
      "report in {}\n",
      sets.size(), bundle.graph.edges.size(),
      bundle.embedding.initial_objective, bundle.embedding.final_objective,
      bundle.clusters.chosen_k, a.out_dir);
  return kExitOk;
}

int RunQuery(QueryArgs a, std::ostream& out) {
  a.r.empty_pool = ParsePolicy(a.empty_pool);
  a.r.Validate();
  const Cohort cohort = ReadCohort(a.index_cohort);
  const RetrievalIndex index = RetrievalIndex::Build(cohort, "query");
  Json doc;
  try {
    doc = Json::parse(ReadText(a.state_file));
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("state file: ") + e.what(), 1);
  }
  const HospitalizationRecord state = RecordFromJson(doc, cohort.vocab, false);
  MedicationSet meds = state.medications;
  if (!a.meds.empty())
    meds = ParseMedList(a.meds, cohort.vocab.n_medications());
  if (meds.Empty()) throw InvalidArgument("no medication set: pass --meds");
  out << CounterfactualJson(index, state, meds, a.r).dump(2) << "\n";
  return kExitOk;
}

int RunServe(const ServeArgs& a, std::ostream& out) {
  auto state = std::make_shared<const ApiState>(
      LoadApiState(a.ckpt, a.index_cohort, a.r));
  ApiServer server(state);
  const int port = server.Bind(a.host, a.port);
  out << fmt::format("listening on http://{}:{}\n", a.host, port) << std::flush;
  server.Listen();
  return kExitOk;
}

std::string OneLine(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

// Replaces `--config FILE` with the file's `key = value` lines turned into
// `--key value` arguments, skipping keys already given on the command line.
// Keys may use '_' or '-'; `true`/`false` values toggle flags; '#' starts a
// comment.
std::vector<std::string> ExpandConfig(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::string path;
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw InvalidArgument("--config needs a file");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (path.empty()) return out;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  const auto given = [&out](const std::string& flag) {
    for (const auto& a : out) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  const auto trim = [](std::string v) {
    const auto b = v.find_first_not_of(" \t\r");
    const auto e = v.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
  };
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("expected key = value", line_no);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty()) throw ParseError("empty key", line_no);
    const std::string flag = "--" + key;
    if (given(flag)) continue;
    if (value == "true") {
      out.push_back(flag);
    } else if (value != "false") {
      out.push_back(flag);
      out.push_back(value);
    }
  }
  return out;
}

}  // namespace

void ConfigureLogging() {
  auto logger = spdlog::get("medcf");
  if (!logger) logger = spdlog::stderr_color_mt("medcf");
  spdlog::set_default_logger(logger);
  spdlog::level::level_enum level = spdlog::level::warn;
  if (const char* env = std::getenv("MEDCF_LOG_LEVEL")) {
    level = spdlog::level::from_str(env);
  }
  spdlog::set_level(level);
}

int Dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"medcf: counterfactual medication recommendation toolkit",
               "medcf"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  // --config is expanded before parsing (see ExpandConfig); the option is
  // registered on every command for the help text only.
  std::string config_path;
  const auto config_flag = [&config_path](CLI::App* sub) {
    sub->add_option("--config", config_path,
                    "Flat `key = value` file of option values; flags win");
  };

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic cohort");
  config_flag(g);
  g->add_option("--patients", gen.g.n_patients, "Number of patients")
      ->capture_default_str();
  g->add_option("--seed", gen.g.seed, "Random seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output cohort file")->required();
  g->add_option("--oracle", gen.oracle, "Write the hidden ideal sets here");
  g->add_option("--diagnoses", gen.g.n_diagnoses)->capture_default_str();
  g->add_option("--procedures", gen.g.n_procedures)->capture_default_str();
  g->add_option("--medications", gen.g.n_medications)->capture_default_str();
  g->add_option("--lab-codes", gen.g.n_lab_codes)->capture_default_str();
  g->add_option("--ethnicities", gen.g.n_ethnicities)->capture_default_str();
  g->add_option("--min-events", gen.g.min_events_per_patient)
      ->capture_default_str();
  g->add_option("--max-events", gen.g.max_events_per_patient)
      ->capture_default_str();
  g->add_option("--second-procedure-prob", gen.g.second_procedure_prob)
      ->capture_default_str();
  g->add_option("--min-ideal", gen.g.min_ideal_set)->capture_default_str();
  g->add_option("--max-ideal", gen.g.max_ideal_set)->capture_default_str();
  g->add_option("--q-miss", gen.g.q_miss)->capture_default_str();
  g->add_option("--q-extra", gen.g.q_extra)->capture_default_str();
  g->add_option("--base-los-min", gen.g.base_los_min)->capture_default_str();
  g->add_option("--base-los-max", gen.g.base_los_max)->capture_default_str();
  g->add_option("--c-miss", gen.g.c_miss)->capture_default_str();
  g->add_option("--c-extra", gen.g.c_extra)->capture_default_str();
  g->add_option("--noise", gen.g.noise_spread)->capture_default_str();
  g->add_option("--ddi-density", gen.g.ddi_density)->capture_default_str();

  SplitArgs split;
  auto* s = app.add_subcommand("split", "Split a cohort by patient");
  config_flag(s);
  s->add_option("--in", split.in, "Cohort file")
      ->required()
      ->check(CLI::ExistingFile);
  s->add_option("--ratios", split.ratios, "train val test")
      ->expected(3)
      ->capture_default_str();
  s->add_option("--seed", split.seed)->capture_default_str();
  s->add_option("--out-prefix", split.prefix,
                "Writes PREFIX_{train,val,test}.jsonl")
      ->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model");
  config_flag(t);
  t->add_option("--train", train.train, "Training cohort")
      ->required()
      ->check(CLI::ExistingFile);
  t->add_option("--val", train.val, "Validation cohort")
      ->required()
      ->check(CLI::ExistingFile);
  t->add_option("--out-ckpt", train.ckpt, "Checkpoint to write")->required();
  t->add_option("--history", train.history, "Per-epoch CSV");
  t->add_flag("--baseline", train.baseline,
              "Supervised only (gate never opens)");
  t->add_option("--seed", train.c.seed)->capture_default_str();
  t->add_option("--lambda", train.c.lambda, "Decay factor")
      ->capture_default_str();
  t->add_option("--delta", train.c.delta, "Gate threshold")
      ->capture_default_str();
  t->add_option("--gamma", train.c.gamma, "Reinforcement confidence")
      ->capture_default_str();
  t->add_option("--epsilon", train.c.epsilon, "Blend factor")
      ->capture_default_str();
  t->add_option("--lr", train.c.learning_rate)->capture_default_str();
  t->add_option("--batch-size", train.c.batch_size)->capture_default_str();
  t->add_option("--max-epochs", train.c.max_epochs)->capture_default_str();
  t->add_option("--early-stop-start", train.c.early_stop_start)
      ->capture_default_str();
  t->add_option("--patience", train.c.patience)->capture_default_str();
  t->add_option("--max-inner-steps", train.c.max_inner_steps)
      ->capture_default_str();
  t->add_option("--threshold", train.c.threshold)->capture_default_str();
  t->add_option("--d-model", train.c.d_model)->capture_default_str();
  t->add_option("--heads", train.c.n_heads)->capture_default_str();
  t->add_option("--d-ff", train.c.d_ff)->capture_default_str();
  AddRetrievalOptions(t, train.c.retrieval, train.empty_pool);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  config_flag(e);
  e->add_option("--checkpoint", eval.ckpt)
      ->required()
      ->check(CLI::ExistingFile);
  e->add_option("--cohort", eval.cohort, "Cohort to score")
      ->required()
      ->check(CLI::ExistingFile);
  e->add_option("--index-cohort", eval.index_cohort,
                "Cohort searched for ELOS (default: --cohort)")
      ->check(CLI::ExistingFile);
  e->add_option("--out", eval.out, "Report file (default: stdout)");
  e->add_option("--predictions", eval.predictions, "Predicted sets (JSONL)");
  e->add_option("--csv", eval.csv, "One-row CSV labelled with --seed");
  e->add_option("--threshold", eval.threshold,
                "Override the checkpoint threshold");
  e->add_flag("--macro-auc", eval.macro);
  e->add_option("--seed", eval.seed)->capture_default_str();
  AddRetrievalOptions(e, eval.r, eval.empty_pool);

  AnalyzeArgs analyze;
  auto* an = app.add_subcommand("analyze", "Embed, cluster and describe sets");
  config_flag(an);
  an->add_option("--predictions", analyze.predictions,
                 "Predicted sets from eval (default: recorded sets)")
      ->check(CLI::ExistingFile);
  an->add_option("--cohort", analyze.cohort)
      ->required()
      ->check(CLI::ExistingFile);
  an->add_option("--out-dir", analyze.out_dir)->required();
  an->add_option("--k-range", analyze.k_range, "Cluster counts, e.g. 2..12")
      ->capture_default_str();
  an->add_option("--seed", analyze.seed)->capture_default_str();
  an->add_option("--neighbors", analyze.a.graph.k_neighbors)
      ->capture_default_str();
  an->add_option("--graph-epsilon", analyze.a.graph.graph_epsilon)
      ->capture_default_str();
  an->add_option("--iterations", analyze.a.embed.iterations)
      ->capture_default_str();
  an->add_option("--restarts", analyze.a.cluster.restarts)
      ->capture_default_str();
  an->add_option("--top-terms", analyze.a.top_terms)->capture_default_str();
  an->add_flag("--hyperbolic", analyze.hyperbolic,
               "Cluster with the Poincare distance");

  QueryArgs query;
  auto* q = app.add_subcommand("query", "One counterfactual ELOS lookup");
  config_flag(q);
  q->add_option("--index-cohort", query.index_cohort)
      ->required()
      ->check(CLI::ExistingFile);
  q->add_option("--state-file", query.state_file, "Patient-state JSON")
      ->required()
      ->check(CLI::ExistingFile);
  q->add_option("--meds", query.meds, "Medication indices, e.g. 0,3,5");
  q->add_option("--seed", query.seed)->capture_default_str();
  AddRetrievalOptions(q, query.r, query.empty_pool);

  ServeArgs serve;
  std::string serve_policy = "zero_reward";
  auto* sv = app.add_subcommand("serve", "Run the HTTP API");
  config_flag(sv);
  sv->add_option("--checkpoint", serve.ckpt)
      ->required()
      ->check(CLI::ExistingFile);
  sv->add_option("--index-cohort", serve.index_cohort)
      ->required()
      ->check(CLI::ExistingFile);
  sv->add_option("--host", serve.host)->capture_default_str();
  sv->add_option("--port", serve.port)->capture_default_str();
  sv->add_option("--seed", serve.seed)->capture_default_str();
  AddRetrievalOptions(sv, serve.r, serve_policy);

  std::vector<std::string> expanded;
  try {
    expanded = ExpandConfig(args);
  } catch (const Error& ex) {
    err << "error: " << OneLine(ex.what()) << "\n";
    return kExitUsage;
  }
  std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty()
                ? app.help()
                : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    const auto subs = app.get_subcommands();
    err << "error: " << OneLine(ex.what()) << "\n"
        << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (g->parsed()) return RunGen(gen, out);
    if (s->parsed()) return RunSplit(split, out);
    if (t->parsed()) return RunTrain(train, out);
    if (e->parsed()) return RunEval(eval, out);
    if (an->parsed()) return RunAnalyze(analyze, out);
    if (q->parsed()) return RunQuery(query, out);
    serve.r.empty_pool = ParsePolicy(serve_policy);
    if (sv->parsed()) return RunServe(serve, out);
  } catch (const std::exception& ex) {
    err << "error: " << OneLine(ex.what()) << "\n";
    return kExitDomainError;
  }
  return kExitUsage;
}

}  // namespace medcf
