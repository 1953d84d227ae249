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

// dpfed command-line tool.
//
//   dpfed privacy-table [--K ... --C ... --z ...] [--checkpoints ...]
//   dpfed synthesize --out DIR [--users N --tokens N --vocab V ...]
//   dpfed train [--preset NAME] [--config FILE] [overrides] --out DIR
//   dpfed compare RUN_DIR RUN_DIR... [--threshold X]
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpfed/accountant.hpp"
#include "dpfed/dataset.hpp"
#include "dpfed/error.hpp"
#include "dpfed/experiment.hpp"

namespace {

constexpr int kConfigErrorExit = 1;
constexpr int kRuntimeErrorExit = 2;

struct PrivacyTableArgs {
  std::vector<double> users;
  std::vector<double> expected;
  std::vector<double> noise;
  std::vector<std::uint64_t> checkpoints;
  int orders = 32;
  std::string out;
};

int RunPrivacyTable(const PrivacyTableArgs& a) {
  std::vector<dpfed::PrivacyTableSpec> specs;
  if (a.users.empty() && a.expected.empty() && a.noise.empty()) {
    specs = dpfed::ReferencePrivacyTableSpecs();
  } else {
    if (a.users.size() != a.expected.size() || a.users.size() != a.noise.size()) {
      throw dpfed::ConfigError("--K, --C and --z need the same number of values");
    }
    for (std::size_t i = 0; i < a.users.size(); ++i) {
      specs.push_back({a.users[i], a.expected[i], a.noise[i]});
    }
  }
  if (a.orders < 1) throw dpfed::ConfigError("--orders must be >= 1");
  std::vector<int> orders;
  for (int l = 1; l <= a.orders; ++l) orders.push_back(l);
  const auto checkpoints = a.checkpoints.empty() ? dpfed::DecadeCheckpoints() : a.checkpoints;
  const std::string csv =
      dpfed::PrivacyTableCsv(dpfed::BuildPrivacyTable(specs, checkpoints, orders));
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream out(a.out, std::ios::binary);
    out << csv;
    if (!out) throw dpfed::Error("failed writing " + a.out);
  }
  return 0;
}

int RunSynthesize(const dpfed::SynthesisConfig& cfg, const std::string& out) {
  const auto data = dpfed::SynthesizeDataset(cfg);
  const auto manifest = dpfed::WriteSyntheticDataset(data, cfg, out);
  std::cout << manifest.dump(2) << '\n';
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> rounds;
  std::optional<double> q;
  std::optional<double> expected_users;
  std::optional<double> z;
  std::optional<std::string> clip_mode;
  std::optional<double> S;
  std::optional<std::string> estimator;
  std::optional<std::string> algorithm;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<int> epochs;
  std::optional<std::string> model;
  std::optional<std::string> dataset;
  std::optional<std::size_t> fixed_sample;
  std::optional<unsigned> workers;
  std::optional<std::uint64_t> eval_every;
  std::optional<std::uint64_t> checkpoint_every;
  std::optional<double> report_users;
  std::optional<double> report_expected_users;
  std::optional<double> report_delta;
  bool no_noise = false;
  std::string resume;
  std::string out;
  bool verbose = false;
};

int RunTrain(const TrainArgs& a) {
  nlohmann::json file = nlohmann::json::object();
  if (!a.config_path.empty()) {
    std::ifstream in(a.config_path);
    if (!in) throw dpfed::ConfigError("cannot open config " + a.config_path);
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw dpfed::ConfigError(a.config_path + ": " + e.what());
    }
  }
  dpfed::ExperimentConfig cfg = dpfed::ConfigFromJson(file, a.preset);
  const double lr_before = cfg.lr;
  if (a.seed) cfg.seed = *a.seed;
  if (a.rounds) cfg.rounds = *a.rounds;
  if (a.q) {
    cfg.q = *a.q;
    cfg.expected_users.reset();
  }
  if (a.expected_users) cfg.expected_users = *a.expected_users;
  if (a.z) cfg.z = *a.z;
  if (a.clip_mode) cfg.clip_mode = *a.clip_mode;
  if (a.S) cfg.S = *a.S;
  if (a.estimator) cfg.estimator = *a.estimator;
  if (a.algorithm) cfg.algorithm = *a.algorithm;
  if (a.lr) cfg.lr = *a.lr;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.model) cfg.model = *a.model;
  if (a.dataset) cfg.dataset = *a.dataset;
  if (a.fixed_sample) cfg.fixed_sample_size = *a.fixed_sample;
  if (a.workers) cfg.workers = *a.workers;
  if (a.eval_every) cfg.eval_every = *a.eval_every;
  if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
  if (a.report_users) cfg.report_users = *a.report_users;
  if (a.report_expected_users) cfg.report_expected_users = *a.report_expected_users;
  if (a.report_delta) cfg.report_delta = *a.report_delta;
  if (a.no_noise) cfg.noise = false;
  if (!a.out.empty()) cfg.out = a.out;

  if (cfg.lr != lr_before && !a.S && cfg.clip_mode != "none") {
    std::cerr << "warning: learning rate changed to " << cfg.lr << " but S (" << cfg.S
              << ") was not; clipping levels need re-tuning when the learning rate changes\n";
  }

  dpfed::RunOptions opts;
  opts.quiet = !a.verbose;
  if (!a.resume.empty()) opts.resume_from = a.resume;
  const dpfed::RunSummary s = dpfed::RunExperiment(cfg, opts);
  std::ifstream report(s.dir / "privacy_report.txt");
  std::cout << report.rdbuf();
  return 0;
}

int RunCompare(const std::vector<std::string>& dirs, const std::string& out,
               std::optional<double> threshold) {
  std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
  const dpfed::Comparison c = dpfed::CompareRuns(paths);
  const std::string csv = dpfed::ComparisonCsv(c);
  if (out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(out, std::ios::binary);
    f << csv;
    if (!f) throw dpfed::Error("failed writing " + out);
  }
  double worst = 0.0;
  for (double d : c.final_delta) worst = std::max(worst, std::abs(d));
  std::cerr << "max |final accuracy delta| = " << worst;
  if (threshold) std::cerr << (worst <= *threshold ? "  (within " : "  (EXCEEDS ") << *threshold << ")";
  std::cerr << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private federated training simulator"};
  app.require_subcommand(1);

  PrivacyTableArgs table;
  auto* cmd_table = app.add_subcommand("privacy-table", "epsilon for (K, C~, z) rows over rounds, as CSV");
  cmd_table->add_option("--K", table.users, "total users per row");
  cmd_table->add_option("--C", table.expected, "expected users per round per row");
  cmd_table->add_option("--z", table.noise, "noise scale per row");
  cmd_table->add_option("--checkpoints", table.checkpoints, "round counts (default 1,10,...,1e6)");
  cmd_table->add_option("--orders", table.orders, "moment orders 1..N")->capture_default_str();
  cmd_table->add_option("--out", table.out, "CSV file (default stdout)");

  dpfed::SynthesisConfig synth;
  std::string synth_out;
  auto* cmd_synth = app.add_subcommand("synthesize", "write a synthetic per-user token dataset");
  cmd_synth->add_option("--users", synth.num_users)->capture_default_str();
  cmd_synth->add_option("--tokens", synth.tokens_per_user, "tokens per user")->capture_default_str();
  cmd_synth->add_option("--vocab", synth.vocab_size)->capture_default_str();
  cmd_synth->add_option("--heterogeneity", synth.heterogeneity)->capture_default_str();
  cmd_synth->add_option("--seed", synth.seed)->capture_default_str();
  cmd_synth->add_option("--eval-users", synth.eval_users)->capture_default_str();
  cmd_synth->add_option("--out", synth_out, "output directory")->required();

  TrainArgs train;
  auto* cmd_train = app.add_subcommand("train", "run DP-FedAvg / DP-FedSGD and write a run directory");
  cmd_train->add_option("--config", train.config_path, "JSON config file");
  cmd_train->add_option("--preset", train.preset, "baseline|sampling|estimator|clipping|dp|table2-row|fedsgd");
  cmd_train->add_option("--seed", train.seed);
  cmd_train->add_option("--rounds", train.rounds);
  cmd_train->add_option("--q", train.q, "user sampling probability");
  cmd_train->add_option("--expected-users", train.expected_users, "C~; sets q = C~/K");
  cmd_train->add_option("--z", train.z, "noise scale");
  cmd_train->add_option("--clip-mode", train.clip_mode, "flat|per_layer|none");
  cmd_train->add_option("--S", train.S, "clip bound");
  cmd_train->add_option("--estimator", train.estimator, "fixed|clipped");
  cmd_train->add_option("--algorithm", train.algorithm, "fedavg|fedsgd");
  cmd_train->add_option("--lr", train.lr, "local learning rate");
  cmd_train->add_option("--batch-size", train.batch_size, "windows per local batch, 0 = whole shard");
  cmd_train->add_option("--epochs", train.epochs, "local epochs (fedavg)");
  cmd_train->add_option("--model", train.model, "bigram_softmax|tiny_rnn");
  cmd_train->add_option("--dataset", train.dataset, "dataset directory (default: synthesize)");
  cmd_train->add_option("--fixed-sample", train.fixed_sample, "exactly this many users per round");
  cmd_train->add_option("--workers", train.workers, "threads for user updates");
  cmd_train->add_option("--eval-every", train.eval_every, "rounds between evaluations");
  cmd_train->add_option("--checkpoint-every", train.checkpoint_every, "rounds between checkpoints, 0 = final only");
  cmd_train->add_option("--report-users", train.report_users, "declared K for the privacy report");
  cmd_train->add_option("--report-expected-users", train.report_expected_users, "declared C~");
  cmd_train->add_option("--report-delta", train.report_delta, "delta for the declared report");
  cmd_train->add_flag("--no-noise", train.no_noise, "disable noise");
  cmd_train->add_option("--resume", train.resume, "checkpoint file to continue from");
  cmd_train->add_option("--out", train.out, "run directory");
  cmd_train->add_flag("-v,--verbose", train.verbose, "progress on stderr");

  std::vector<std::string> compare_dirs;
  std::string compare_out;
  std::optional<double> compare_threshold;
  auto* cmd_compare = app.add_subcommand("compare", "align accuracy curves of run directories");
  cmd_compare->add_option("runs", compare_dirs, "run directories (first is the reference)")->required();
  cmd_compare->add_option("--out", compare_out, "CSV file (default stdout)");
  cmd_compare->add_option("--threshold", compare_threshold, "report whether final deltas stay within this");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigErrorExit;
  }

  try {
    if (*cmd_table) return RunPrivacyTable(table);
    if (*cmd_synth) return RunSynthesize(synth, synth_out);
    if (*cmd_train) return RunTrain(train);
    if (*cmd_compare) return RunCompare(compare_dirs, compare_out, compare_threshold);
  } catch (const dpfed::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigErrorExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeErrorExit;
  }
  return 0;
}
