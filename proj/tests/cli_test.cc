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

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "medcf/analysis.h"
#include "medcf/retrieval.h"
#include "medcf/service.h"
#include "test_util.h"

namespace medcf {
namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult RunCli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  RunResult r;
  r.code = Dispatch(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Small generator knobs shared by the tests.
std::vector<std::string> GenArgs(const std::string& out, int patients) {
  return {"gen",
          "--patients",
          std::to_string(patients),
          "--out",
          out,
          "--diagnoses",
          "10",
          "--procedures",
          "4",
          "--medications",
          "8",
          "--lab-codes",
          "6",
          "--seed",
          "3"};
}

std::vector<std::string> TrainArgs(const testing::TempDir& d) {
  return {"train",
          "--train",
          d.File("c_train.jsonl"),
          "--val",
          d.File("c_val.jsonl"),
          "--out-ckpt",
          d.File("m.ckpt"),
          "--max-epochs",
          "2",
          "--d-model",
          "8",
          "--d-ff",
          "16",
          "--batch-size",
          "32",
          "--max-inner-steps",
          "2"};
}

void Prepare(const testing::TempDir& d) {
  ASSERT_EQ(RunCli(GenArgs(d.File("c.jsonl"), 120)).code, kExitOk);
  ASSERT_EQ(
      RunCli({"split", "--in", d.File("c.jsonl"), "--out-prefix", d.File("c")})
          .code,
      kExitOk);
}

TEST(CliTest, GenWritesReadableCohort) {
  testing::TempDir d;
  const RunResult r = RunCli(GenArgs(d.File("c.jsonl"), 30));
  EXPECT_EQ(r.code, kExitOk) << r.err;
  const Cohort c = ReadCohort(d.File("c.jsonl"));
  EXPECT_EQ(c.PatientIds().size(), 30u);
  EXPECT_EQ(c.vocab.n_medications(), 8);
}

TEST(CliTest, UsageErrors) {
  testing::TempDir d;
  RunResult r = RunCli({"train", "--val", d.File("nope.jsonl")});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_FALSE(r.err.empty());
  r = RunCli({"gen", "--out", d.File("c.jsonl"), "--bogus-flag", "1"});
  EXPECT_EQ(r.code, kExitUsage);
  r = RunCli({"frobnicate"});
  EXPECT_EQ(r.code, kExitUsage);
  r = RunCli({"gen", "--out", d.File("c.jsonl"), "--patients", "many"});
  EXPECT_EQ(r.code, kExitUsage);
}

TEST(CliTest, HelpExitsZero) {
  EXPECT_EQ(RunCli({"--help"}).code, kExitOk);
  EXPECT_EQ(RunCli({"train", "--help"}).code, kExitOk);
}

TEST(CliTest, CorruptCohortIsDomainError) {
  testing::TempDir d;
  {
    std::ofstream f(d.File("bad.jsonl"));
    f << "this is not a cohort\n";
  }
  const RunResult r = RunCli(
      {"split", "--in", d.File("bad.jsonl"), "--out-prefix", d.File("x")});
  EXPECT_EQ(r.code, kExitDomainError);
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(CliTest, TrainEvalAnalyzeAreDeterministic) {
  testing::TempDir d;
  Prepare(d);
  RunResult r = RunCli(TrainArgs(d));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string ckpt1 = testing::Slurp(d.File("m.ckpt"));
  r = RunCli(TrainArgs(d));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(testing::Slurp(d.File("m.ckpt")), ckpt1);

  const std::vector<std::string> eval = {"eval",
                                         "--checkpoint",
                                         d.File("m.ckpt"),
                                         "--cohort",
                                         d.File("c_test.jsonl"),
                                         "--index-cohort",
                                         d.File("c_train.jsonl"),
                                         "--predictions",
                                         d.File("p.jsonl")};
  const RunResult e1 = RunCli(eval);
  ASSERT_EQ(e1.code, kExitOk) << e1.err;
  const std::string preds = testing::Slurp(d.File("p.jsonl"));
  const RunResult e2 = RunCli(eval);
  EXPECT_EQ(e1.out, e2.out);
  EXPECT_NE(e1.out.find("jaccard = "), std::string::npos);
  EXPECT_EQ(testing::Slurp(d.File("p.jsonl")), preds);

  const std::vector<std::string> analyze = {"analyze",
                                            "--predictions",
                                            d.File("p.jsonl"),
                                            "--cohort",
                                            d.File("c_test.jsonl"),
                                            "--out-dir",
                                            d.File("a1"),
                                            "--k-range",
                                            "2..3",
                                            "--iterations",
                                            "20",
                                            "--restarts",
                                            "2",
                                            "--neighbors",
                                            "5"};
  ASSERT_EQ(RunCli(analyze).code, kExitOk);
  auto again = analyze;
  again[6] = d.File("a2");
  ASSERT_EQ(RunCli(again).code, kExitOk);
  for (const auto& name : ReportFileNames()) {
    EXPECT_EQ(testing::Slurp(d.File("a1/" + name)),
              testing::Slurp(d.File("a2/" + name)))
        << name;
  }
}

TEST(CliTest, QueryMatchesServiceDocument) {
  testing::TempDir d;
  ASSERT_EQ(RunCli(GenArgs(d.File("c.jsonl"), 60)).code, kExitOk);
  const Cohort c = ReadCohort(d.File("c.jsonl"));
  const HospitalizationRecord& rec = c.records[1];
  Json state = RecordToJson(rec);
  state.erase("event_id");
  state.erase("patient_id");
  state.erase("medications");
  {
    std::ofstream f(d.File("state.json"));
    f << state.dump();
  }
  const RunResult r =
      RunCli({"query", "--index-cohort", d.File("c.jsonl"), "--state-file",
              d.File("state.json"), "--meds", "0,3"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto idx = RetrievalIndex::Build(c, "index");
  HospitalizationRecord q = RecordFromJson(state, c.vocab, false);
  const Json want = CounterfactualJson(
      idx, q, MedicationSet::FromIndices(8, {0, 3}),
      RetrievalConfig{.empty_pool = EmptyPoolPolicy::kZeroReward});
  EXPECT_EQ(Json::parse(r.out), want);
}

TEST(CliTest, ConfigFileWithFlagOverride) {
  testing::TempDir d;
  {
    std::ofstream f(d.File("gen.cfg"));
    f << "# generator settings\npatients = 25\nmedications = 8\nprocedures = "
         "4\n"
         "diagnoses = 10\nlab_codes = 6\nseed = 9\n";
  }
  RunResult r = RunCli(
      {"gen", "--config", d.File("gen.cfg"), "--out", d.File("a.jsonl")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(ReadCohort(d.File("a.jsonl")).PatientIds().size(), 25u);
  r = RunCli({"gen", "--config", d.File("gen.cfg"), "--patients", "12", "--out",
              d.File("b.jsonl")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(ReadCohort(d.File("b.jsonl")).PatientIds().size(), 12u);
  {
    std::ofstream f(d.File("bad.cfg"));
    f << "no_such_key = 1\n";
  }
  EXPECT_EQ(
      RunCli({"gen", "--config", d.File("bad.cfg"), "--out", d.File("c.jsonl")})
          .code,
      kExitUsage);
}

}  // namespace
}  // namespace medcf
