// Copyright 2026 The dpfed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Drives the dpfed binary end to end through the shell.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "gtest/gtest.h"

namespace {

namespace fs = std::filesystem;

fs::path TempDir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dpfed_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the CLI inside `dir` with stdout captured to `dir/stdout`; returns the
// exit code.
int RunCli(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" DPFED_CLI "' " + args +
                          " > stdout 2> stderr";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(CliTest, SynthesizeDefaultsMatchTheDeclaredCorpus) {
  const fs::path dir = TempDir("synth");
  ASSERT_EQ(RunCli(dir, "synthesize --out data"), 0);
  const auto manifest = nlohmann::json::parse(Slurp(dir / "data" / "manifest.json"));
  EXPECT_EQ(manifest["num_users"], 1000);
  EXPECT_EQ(manifest["total_tokens"], 1600000);
  EXPECT_EQ(manifest["vocab_size"], 100);
  EXPECT_TRUE(fs::exists(dir / "data" / "train.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "data" / "eval.jsonl"));
}

TEST(CliTest, SameSeedGivesByteIdenticalRuns) {
  const fs::path dir = TempDir("repro");
  const std::string args = "train --preset dp --rounds 3 --eval-every 1 --seed 7 --out ";
  ASSERT_EQ(RunCli(dir, args + "a"), 0) << Slurp(dir / "stderr");
  ASSERT_EQ(RunCli(dir, args + "b"), 0) << Slurp(dir / "stderr");
  int compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir / "a");
    if (rel == "config.json") continue;  // records its own output directory
    EXPECT_EQ(Slurp(entry.path()), Slurp(dir / "b" / rel)) << rel;
    ++compared;
  }
  EXPECT_GE(compared, 5);
}

TEST(CliTest, TrainPrintsThePrivacyReport) {
  const fs::path dir = TempDir("report");
  ASSERT_EQ(RunCli(dir, "train --preset dp --rounds 2 --out run"), 0);
  EXPECT_EQ(Slurp(dir / "stdout"), Slurp(dir / "run" / "privacy_report.txt"));
  const auto report = nlohmann::json::parse(Slurp(dir / "run" / "privacy_report.json"));
  EXPECT_GT(report["desk"]["epsilon"].get<double>(), 0.0);
  EXPECT_EQ(report["rounds"], 2);
}

TEST(CliTest, ConfigErrorsExitWithOne) {
  const fs::path dir = TempDir("config_errors");
  EXPECT_EQ(RunCli(dir, "train --preset no-such-preset --out run"), 1);
  EXPECT_EQ(RunCli(dir, "train --no-such-flag"), 1);
  EXPECT_EQ(RunCli(dir, ""), 1);
  EXPECT_EQ(RunCli(dir, "privacy-table --K 1000 --C 10"), 1);
  EXPECT_EQ(RunCli(dir, "train --rounds 1 --z -1 --out run"), 1);
}

TEST(CliTest, CompareRejectsMismatchedEvaluationCadence) {
  const fs::path dir = TempDir("cadence");
  ASSERT_EQ(RunCli(dir, "train --preset baseline --rounds 2 --eval-every 1 --out a"), 0);
  ASSERT_EQ(RunCli(dir, "train --preset baseline --rounds 2 --eval-every 2 --out b"), 0);
  EXPECT_EQ(RunCli(dir, "compare a b"), 1);
  EXPECT_EQ(RunCli(dir, "compare a a"), 0);
}

TEST(CliTest, RuntimeErrorsExitWithTwo) {
  const fs::path dir = TempDir("runtime_errors");
  EXPECT_EQ(RunCli(dir, "train --dataset missing-directory --rounds 1 --out run"), 2);
  EXPECT_NE(Slurp(dir / "stderr").find("missing-directory"), std::string::npos);
}

TEST(CliTest, PrivacyTableWritesCsv) {
  const fs::path dir = TempDir("table");
  ASSERT_EQ(RunCli(dir, "privacy-table --K 763430 --C 5000 --z 1 --checkpoints 1 5000 --out t.csv"),
            0);
  std::istringstream csv(Slurp(dir / "t.csv"));
  std::string header, first, second, extra;
  std::getline(csv, header);
  std::getline(csv, first);
  std::getline(csv, second);
  EXPECT_EQ(header, "K,C_tilde,z,rounds,delta,epsilon");
  EXPECT_EQ(first.rfind("763430,5000,1,1,", 0), 0u) << first;
  EXPECT_EQ(second.rfind("763430,5000,1,5000,", 0), 0u) << second;
  EXPECT_FALSE(std::getline(csv, extra));
}

TEST(CliTest, DefaultPrivacyTableHasEveryReferenceCell) {
  const fs::path dir = TempDir("full_table");
  ASSERT_EQ(RunCli(dir, "privacy-table"), 0);
  std::istringstream csv(Slurp(dir / "stdout"));
  std::string line;
  int rows = -1;  // header
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 42);
}

}  // namespace
