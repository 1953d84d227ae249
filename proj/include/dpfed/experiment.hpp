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

// Experiment driver behind the command-line tool: configuration schema and
// presets, run directories (metrics, checkpoints, privacy report), run
// comparison and privacy-table CSV.
//
// Config files are JSON objects using the keys of ExperimentConfig (see
// ApplyJson). Precedence: defaults < preset < config file < command line.

#ifndef DPFED_EXPERIMENT_HPP_
#define DPFED_EXPERIMENT_HPP_

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpfed/accountant.hpp"
#include "dpfed/dataset.hpp"
#include "dpfed/error.hpp"
#include "dpfed/estimators.hpp"
#include "dpfed/fedtrain.hpp"
#include "dpfed/models/bigram_softmax.hpp"
#include "dpfed/models/tiny_rnn.hpp"
#include "dpfed/param_vector.hpp"
#include "dpfed/version.hpp"

namespace dpfed {

struct ExperimentConfig {
  std::string preset;
  std::string model = "bigram_softmax";  // or "tiny_rnn"
  int hidden_size = 16;                  // tiny_rnn only

  // Directory with train.jsonl / eval.jsonl; synthesized when empty.
  std::string dataset;
  SynthesisConfig synthesis{1000, 1600, 100, 0.3, 1, 20};

  double q = 0.05;
  std::optional<double> expected_users;  // C~; when set, q = C~ / K
  double weight_cap = 1600;
  double z = 1.0;
  bool noise = true;
  std::string estimator = "fixed";  // or "clipped"
  std::optional<double> w_min;
  std::string clip_mode = "flat";  // "flat", "per_layer" or "none"
  double S = 1.0;
  std::vector<double> layer_bounds;  // per_layer; default S / sqrt(m) each

  std::string algorithm = "fedavg";  // or "fedsgd"
  int epochs = 1;
  std::size_t batch_size = 8;  // 0 = whole shard
  double lr = 6.0;
  bool greedy_clip = true;
  std::size_t unroll = 10;

  std::uint64_t rounds = 500;
  std::uint64_t seed = 1;
  std::optional<std::size_t> fixed_sample_size;
  std::uint64_t eval_every = 20;
  std::size_t smoothing_window = 5;
  std::optional<double> delta;  // reference delta for the per-round epsilon
  unsigned workers = 1;
  std::uint64_t checkpoint_every = 0;  // 0: final checkpoint only

  // Privacy report for a declared population (K, C~): the accountant only
  // depends on (q, z, T, delta), so a desk-scale run can report the epsilon
  // of the same z and T for the full population.
  std::optional<double> report_users;
  std::optional<double> report_expected_users;
  double report_delta = 1e-9;

  std::string out;
};

namespace internal {

inline nlohmann::json NumberOrInf(double x) {
  return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(x > 0 ? "inf" : "-inf");
}

inline double ReadNumber(const nlohmann::json& j, const std::string& key) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
    throw ConfigError("config key '" + key + "': expected a number, got \"" + s + "\"");
  }
  if (!j.is_number()) throw ConfigError("config key '" + key + "': expected a number");
  return j.get<double>();
}

template <typename T>
T ReadAs(const nlohmann::json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

}  // namespace internal

inline const std::vector<std::string>& PresetNames() {
  static const std::vector<std::string> names = {
      "baseline", "sampling", "estimator", "clipping", "dp", "table2-row", "fedsgd"};
  return names;
}

// Presets follow the tuning sequence: fixed sample without privacy
// (baseline), Bernoulli sampling, the clipped-denominator estimator,
// clipping, then clipping plus calibrated noise. All use an expected 50
// users per round at desk scale.
inline void ApplyPreset(const std::string& name, ExperimentConfig& cfg) {
  cfg.preset = name;
  cfg.expected_users = 50.0;
  cfg.estimator = "fixed";
  cfg.fixed_sample_size.reset();
  if (name == "baseline") {
    cfg.fixed_sample_size = 50;
    cfg.clip_mode = "none";
    cfg.noise = false;
  } else if (name == "sampling") {
    cfg.clip_mode = "none";
    cfg.noise = false;
  } else if (name == "estimator") {
    cfg.estimator = "clipped";
    cfg.clip_mode = "none";
    cfg.noise = false;
  } else if (name == "clipping") {
    cfg.clip_mode = "flat";
    cfg.S = 6.0;
    cfg.noise = false;
  } else if (name == "dp") {
    cfg.clip_mode = "flat";
    cfg.S = 6.0;
    cfg.noise = true;
    cfg.z = 1.0;
  } else if (name == "table2-row") {
    // sigma = 0.003, S = 15 with an expected 5000 of 763430 users is z = 1.
    // Trains at desk scale with the same z and reports the epsilon of the
    // declared population.
    cfg.clip_mode = "flat";
    cfg.S = 15.0;
    cfg.noise = true;
    cfg.z = 1.0;
    cfg.rounds = 5000;
    cfg.report_users = 763430;
    cfg.report_expected_users = 5000;
    cfg.report_delta = 1e-9;
  } else if (name == "fedsgd") {
    cfg.algorithm = "fedsgd";
    cfg.batch_size = 0;
    cfg.clip_mode = "flat";
    cfg.noise = true;
    cfg.z = 1.0;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
}

// Applies the keys present in `j` on top of `cfg`. Unknown keys are an error.
inline void ApplyJson(const nlohmann::json& j, ExperimentConfig& cfg) {
  using internal::ReadAs;
  using internal::ReadNumber;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "preset" || key == "version") {
      continue;  // handled by the caller / informational
    } else if (key == "model") {
      cfg.model = ReadAs<std::string>(v, key);
    } else if (key == "hidden_size") {
      cfg.hidden_size = ReadAs<int>(v, key);
    } else if (key == "dataset") {
      cfg.dataset = ReadAs<std::string>(v, key);
    } else if (key == "synthesis") {
      if (!v.is_object()) throw ConfigError("config key 'synthesis' must be an object");
      for (const auto& [sk, sv] : v.items()) {
        if (sk == "num_users") cfg.synthesis.num_users = ReadAs<std::int64_t>(sv, sk);
        else if (sk == "tokens_per_user") cfg.synthesis.tokens_per_user = ReadAs<std::size_t>(sv, sk);
        else if (sk == "vocab_size") cfg.synthesis.vocab_size = ReadAs<int>(sv, sk);
        else if (sk == "heterogeneity") cfg.synthesis.heterogeneity = ReadNumber(sv, sk);
        else if (sk == "seed") cfg.synthesis.seed = ReadAs<std::uint64_t>(sv, sk);
        else if (sk == "eval_users") cfg.synthesis.eval_users = ReadAs<std::int64_t>(sv, sk);
        else throw ConfigError("unknown synthesis key '" + sk + "'");
      }
    } else if (key == "q") {
      cfg.q = ReadNumber(v, key);
      // An explicit q overrides a preset's C~ unless the same document sets C~.
      if (!j.contains("expected_users")) cfg.expected_users.reset();
    } else if (key == "expected_users") {
      if (v.is_null()) cfg.expected_users.reset();
      else cfg.expected_users = ReadNumber(v, key);
    } else if (key == "weight_cap") {
      cfg.weight_cap = ReadNumber(v, key);
    } else if (key == "z") {
      cfg.z = ReadNumber(v, key);
    } else if (key == "noise") {
      cfg.noise = ReadAs<bool>(v, key);
    } else if (key == "estimator") {
      cfg.estimator = ReadAs<std::string>(v, key);
    } else if (key == "w_min") {
      if (v.is_null()) cfg.w_min.reset();
      else cfg.w_min = ReadNumber(v, key);
    } else if (key == "clip_mode") {
      cfg.clip_mode = ReadAs<std::string>(v, key);
    } else if (key == "S") {
      cfg.S = ReadNumber(v, key);
    } else if (key == "layer_bounds") {
      cfg.layer_bounds = ReadAs<std::vector<double>>(v, key);
    } else if (key == "algorithm") {
      cfg.algorithm = ReadAs<std::string>(v, key);
    } else if (key == "epochs") {
      cfg.epochs = ReadAs<int>(v, key);
    } else if (key == "batch_size") {
      cfg.batch_size = ReadAs<std::size_t>(v, key);
    } else if (key == "lr") {
      cfg.lr = ReadNumber(v, key);
    } else if (key == "greedy_clip") {
      cfg.greedy_clip = ReadAs<bool>(v, key);
    } else if (key == "unroll") {
      cfg.unroll = ReadAs<std::size_t>(v, key);
    } else if (key == "rounds") {
      cfg.rounds = ReadAs<std::uint64_t>(v, key);
    } else if (key == "seed") {
      cfg.seed = ReadAs<std::uint64_t>(v, key);
    } else if (key == "fixed_sample_size") {
      if (v.is_null()) cfg.fixed_sample_size.reset();
      else cfg.fixed_sample_size = ReadAs<std::size_t>(v, key);
    } else if (key == "eval_every") {
      cfg.eval_every = ReadAs<std::uint64_t>(v, key);
    } else if (key == "smoothing_window") {
      cfg.smoothing_window = ReadAs<std::size_t>(v, key);
    } else if (key == "delta") {
      if (v.is_null()) cfg.delta.reset();
      else cfg.delta = ReadNumber(v, key);
    } else if (key == "workers") {
      cfg.workers = ReadAs<unsigned>(v, key);
    } else if (key == "checkpoint_every") {
      cfg.checkpoint_every = ReadAs<std::uint64_t>(v, key);
    } else if (key == "report_users") {
      if (v.is_null()) cfg.report_users.reset();
      else cfg.report_users = ReadNumber(v, key);
    } else if (key == "report_expected_users") {
      if (v.is_null()) cfg.report_expected_users.reset();
      else cfg.report_expected_users = ReadNumber(v, key);
    } else if (key == "report_delta") {
      cfg.report_delta = ReadNumber(v, key);
    } else if (key == "out") {
      cfg.out = ReadAs<std::string>(v, key);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
}

template <typename T>
nlohmann::json OptionalJson(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json ToJson(const ExperimentConfig& c) {
  return {{"version", kVersion},
          {"preset", c.preset},
          {"model", c.model},
          {"hidden_size", c.hidden_size},
          {"dataset", c.dataset},
          {"synthesis", c.synthesis.ToJson()},
          {"q", c.q},
          {"expected_users", OptionalJson(c.expected_users)},
          {"weight_cap", c.weight_cap},
          {"z", c.z},
          {"noise", c.noise},
          {"estimator", c.estimator},
          {"w_min", OptionalJson(c.w_min)},
          {"clip_mode", c.clip_mode},
          {"S", internal::NumberOrInf(c.S)},
          {"layer_bounds", c.layer_bounds},
          {"algorithm", c.algorithm},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"greedy_clip", c.greedy_clip},
          {"unroll", c.unroll},
          {"rounds", c.rounds},
          {"seed", c.seed},
          {"fixed_sample_size", OptionalJson(c.fixed_sample_size)},
          {"eval_every", c.eval_every},
          {"smoothing_window", c.smoothing_window},
          {"delta", OptionalJson(c.delta)},
          {"workers", c.workers},
          {"checkpoint_every", c.checkpoint_every},
          {"report_users", OptionalJson(c.report_users)},
          {"report_expected_users", OptionalJson(c.report_expected_users)},
          {"report_delta", c.report_delta},
          {"out", c.out}};
}

// Defaults, then the preset named in `j` (or `preset` when non-empty), then
// the keys of `j`.
inline ExperimentConfig ConfigFromJson(const nlohmann::json& j, const std::string& preset = "") {
  ExperimentConfig cfg;
  std::string p = preset;
  if (p.empty() && j.is_object() && j.contains("preset")) {
    p = internal::ReadAs<std::string>(j.at("preset"), "preset");
  }
  if (!p.empty()) ApplyPreset(p, cfg);
  ApplyJson(j, cfg);
  return cfg;
}

using AnyModel = std::variant<BigramSoftmax, TinyRnn>;

inline AnyModel MakeModel(const ExperimentConfig& cfg, int vocab_size) {
  if (cfg.model == "bigram_softmax") return BigramSoftmax(vocab_size);
  if (cfg.model == "tiny_rnn") return TinyRnn(vocab_size, cfg.hidden_size);
  throw ConfigError("unknown model '" + cfg.model + "' (bigram_softmax, tiny_rnn)");
}

inline ClipConfig MakeClipConfig(const ExperimentConfig& cfg, std::size_t num_layers) {
  if (cfg.clip_mode == "none") return ClipConfig::None();
  if (cfg.clip_mode == "flat") return ClipConfig::Flat(cfg.S);
  if (cfg.clip_mode == "per_layer") {
    if (!cfg.layer_bounds.empty()) {
      if (cfg.layer_bounds.size() != num_layers) {
        throw ConfigError("layer_bounds has " + std::to_string(cfg.layer_bounds.size()) +
                          " entries but the model has " + std::to_string(num_layers) + " layers");
      }
      return ClipConfig::PerLayer(cfg.layer_bounds);
    }
    return ClipConfig::PerLayer(cfg.S, num_layers);
  }
  throw ConfigError("unknown clip mode '" + cfg.clip_mode + "' (flat, per_layer, none)");
}

inline TrainingConfig MakeTrainingConfig(const ExperimentConfig& cfg, std::size_t num_users,
                                         std::size_t num_layers) {
  TrainingConfig t;
  t.q = cfg.expected_users ? *cfg.expected_users / static_cast<double>(num_users) : cfg.q;
  t.weight_cap = cfg.weight_cap;
  t.noise_scale = cfg.z;
  t.noise_enabled = cfg.noise;
  if (cfg.estimator == "fixed") {
    t.estimator = EstimatorKind::kFixedDenominator;
  } else if (cfg.estimator == "clipped") {
    t.estimator = EstimatorKind::kClippedDenominator;
  } else {
    throw ConfigError("unknown estimator '" + cfg.estimator + "' (fixed, clipped)");
  }
  t.min_weight = cfg.w_min;
  t.clip = MakeClipConfig(cfg, num_layers);
  if (cfg.algorithm == "fedavg") {
    t.local.algorithm = Algorithm::kFedAvg;
  } else if (cfg.algorithm == "fedsgd") {
    t.local.algorithm = Algorithm::kFedSGD;
  } else {
    throw ConfigError("unknown algorithm '" + cfg.algorithm + "' (fedavg, fedsgd)");
  }
  t.local.epochs = cfg.epochs;
  t.local.batch_size = cfg.batch_size;
  t.local.learning_rate = cfg.lr;
  t.local.greedy_clip = cfg.greedy_clip;
  t.unroll = cfg.unroll;
  t.rounds = cfg.rounds;
  t.seed = cfg.seed;
  t.fixed_sample_size = cfg.fixed_sample_size;
  t.eval_every = cfg.eval_every;
  t.smoothing_window = cfg.smoothing_window;
  t.reference_delta = cfg.delta;
  t.workers = cfg.workers;
  t.Validate();
  return t;
}

inline SyntheticData LoadData(const ExperimentConfig& cfg) {
  if (cfg.dataset.empty()) return SynthesizeDataset(cfg.synthesis);
  const std::filesystem::path dir(cfg.dataset);
  SyntheticData d;
  int vocab = 0;
  if (std::filesystem::exists(dir / "manifest.json")) {
    std::ifstream in(dir / "manifest.json");
    vocab = nlohmann::json::parse(in).at("vocab_size").get<int>();
  }
  d.train = ReadJsonLines(dir / "train.jsonl", vocab);
  if (std::filesystem::exists(dir / "eval.jsonl")) {
    d.eval = ReadJsonLines(dir / "eval.jsonl", d.train.vocab_size);
  }
  d.eval.vocab_size = d.train.vocab_size;
  return d;
}

// Epsilon of the declared population, plus the Table-2 style sigma.
struct PrivacyReport {
  double num_users = 0;
  double expected_users = 0;
  double noise_scale = 0;
  double clip_bound = 0;
  double sigma = 0;  // z S / C~ (fixed-denominator estimator, w_k = 1)
  std::uint64_t rounds = 0;
  double delta = 0;
  double epsilon = 0;
};

inline PrivacyReport DeclaredPopulationReport(double num_users, double expected_users, double z,
                                              double clip_bound, std::uint64_t rounds,
                                              double delta) {
  if (!(expected_users > 0 && expected_users <= num_users)) {
    throw ConfigError("report population needs 0 < C~ <= K");
  }
  PrivacyReport r{num_users, expected_users, z, clip_bound, z * clip_bound / expected_users,
                  rounds, delta, 0.0};
  MomentsAccountant acc(expected_users / num_users);
  acc.AccumPrivSpending(z, rounds);
  r.epsilon = acc.GetPrivacySpent(delta);
  return r;
}

namespace internal {

inline std::string FormatNumber(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

inline void WriteFile(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace internal

inline const char* MetricsHeader() {
  return "round,accuracy_top1,loss,epsilon,sigma,frac_clipped,sampled_users,norm_min,"
         "norm_median,norm_max,update_norm,accuracy_top1_smoothed\n";
}

inline std::string MetricsRow(const RoundLog& l) {
  using internal::FormatNumber;
  std::ostringstream s;
  s << l.round << ',' << (l.eval ? FormatNumber(l.eval->accuracy_top1) : "") << ','
    << (l.eval ? FormatNumber(l.eval->loss) : "") << ',' << FormatNumber(l.epsilon) << ','
    << FormatNumber(l.sigma) << ',' << FormatNumber(l.frac_clipped) << ',' << l.sampled_users
    << ',' << FormatNumber(l.norm_min) << ',' << FormatNumber(l.norm_median) << ','
    << FormatNumber(l.norm_max) << ',' << FormatNumber(l.update_norm) << ','
    << (l.accuracy_smoothed ? FormatNumber(*l.accuracy_smoothed) : "") << '\n';
  return s.str();
}

inline const char* EvalHeader() { return "round,accuracy_top1,loss,accuracy_top1_smoothed,epsilon\n"; }

struct RunSummary {
  std::filesystem::path dir;
  std::uint64_t rounds = 0;
  double sigma = 0.0;
  double epsilon = 0.0;  // desk-scale population at the reference delta
  double reference_delta = 0.0;
  std::optional<Metrics> final_eval;
  std::optional<double> final_accuracy_smoothed;
  std::optional<PrivacyReport> declared;
  double mean_frac_clipped = 0.0;
};

struct RunOptions {
  std::optional<std::filesystem::path> resume_from;  // checkpoint file
  bool quiet = true;
};

// Trains per `cfg` and writes into cfg.out:
//   config.json          the full resolved config (reproduces the run)
//   metrics.csv          one row per round
//   eval.csv             one row per evaluation
//   rounds.jsonl         RoundLog records
//   checkpoints/         round_<t>.json every checkpoint_every rounds, final.json
//   privacy_report.json / privacy_report.txt
inline RunSummary RunExperiment(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
  namespace fs = std::filesystem;
  if (cfg.out.empty()) throw ConfigError("no output directory (--out)");
  const SyntheticData data = LoadData(cfg);
  if (data.train.users.empty()) throw ConfigError("dataset has no users");
  const AnyModel any_model = MakeModel(cfg, data.train.vocab_size);
  const std::size_t num_layers =
      std::visit([](const auto& m) { return m.shape().size(); }, any_model);
  const TrainingConfig tcfg = MakeTrainingConfig(cfg, data.train.users.size(), num_layers);

  const fs::path dir(cfg.out);
  fs::create_directories(dir / "checkpoints");
  internal::WriteFile(dir / "config.json", ToJson(cfg).dump(2) + "\n");

  return std::visit(
      [&](const auto& model) {
        Rng init_rng = MakeSubstream(cfg.seed, StreamPurpose::kInit);
        FederatedTrainer trainer(model, tcfg, data.train, EvalSequences(data.eval, cfg.unroll),
                                 model.Initialize(init_rng));
        if (opts.resume_from) {
          std::ifstream in(*opts.resume_from);
          if (!in) throw ConfigError("cannot open checkpoint " + opts.resume_from->string());
          trainer.Restore(TrainingState::FromJson(nlohmann::json::parse(in)));
        }
        std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
        std::ofstream evals(dir / "eval.csv", std::ios::binary);
        std::ofstream rounds(dir / "rounds.jsonl", std::ios::binary);
        if (!metrics || !evals || !rounds) throw Error("cannot write into " + dir.string());
        metrics << MetricsHeader();
        evals << EvalHeader();

        RunSummary summary;
        summary.dir = dir;
        summary.sigma = trainer.sigma();
        summary.reference_delta = trainer.reference_delta();
        double clipped_sum = 0.0;
        std::uint64_t steps = 0;
        while (!trainer.done()) {
          const RoundLog log = trainer.Step();
          metrics << MetricsRow(log);
          rounds << dpfed::ToJson(log).dump() << '\n';
          if (log.eval) {
            evals << log.round << ',' << internal::FormatNumber(log.eval->accuracy_top1) << ','
                  << internal::FormatNumber(log.eval->loss) << ','
                  << internal::FormatNumber(*log.accuracy_smoothed) << ','
                  << internal::FormatNumber(log.epsilon) << '\n';
            summary.final_eval = log.eval;
            summary.final_accuracy_smoothed = log.accuracy_smoothed;
          }
          clipped_sum += log.frac_clipped;
          ++steps;
          if (cfg.checkpoint_every > 0 && log.round % cfg.checkpoint_every == 0) {
            internal::WriteFile(dir / "checkpoints" / ("round_" + std::to_string(log.round) + ".json"),
                                trainer.state().ToJson().dump() + "\n");
          }
          if (!opts.quiet && log.eval) {
            std::fprintf(stderr, "round %llu  acc %.4f  loss %.4f  eps %s  clipped %.2f\n",
                         static_cast<unsigned long long>(log.round), log.eval->accuracy_top1,
                         log.eval->loss, internal::FormatNumber(log.epsilon).c_str(),
                         log.frac_clipped);
          }
        }
        if (!metrics || !evals || !rounds) throw Error("failed writing metrics in " + dir.string());
        internal::WriteFile(dir / "checkpoints" / "final.json", trainer.state().ToJson().dump() + "\n");

        summary.rounds = trainer.state().round;
        summary.epsilon = trainer.Epsilon();
        summary.mean_frac_clipped = steps > 0 ? clipped_sum / static_cast<double>(steps) : 0.0;

        nlohmann::json report = {
            {"version", kVersion},
            {"rounds", summary.rounds},
            {"sigma", summary.sigma},
            {"S", internal::NumberOrInf(tcfg.clip.total_bound())},
            {"z", cfg.noise ? nlohmann::json(cfg.z) : nlohmann::json(nullptr)},
            {"desk", {{"num_users", data.train.users.size()},
                      {"q", trainer.estimator().q},
                      {"expected_users", trainer.estimator().q * static_cast<double>(data.train.users.size())},
                      {"delta", summary.reference_delta},
                      {"epsilon", internal::NumberOrInf(summary.epsilon)}}},
            {"accuracy_top1", summary.final_eval ? nlohmann::json(summary.final_eval->accuracy_top1)
                                                 : nlohmann::json(nullptr)},
            {"accuracy_top1_smoothed", OptionalJson(summary.final_accuracy_smoothed)},
            {"mean_frac_clipped", summary.mean_frac_clipped}};
        std::ostringstream txt;
        txt << "sigma | S | users K | C~ | epsilon | AccT1\n";
        auto acc_text = [&] {
          if (!summary.final_accuracy_smoothed) return std::string("-");
          char buf[32];
          std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * *summary.final_accuracy_smoothed);
          return std::string(buf);
        };
        auto eps_text = [](double e) {
          if (!std::isfinite(e)) return std::string("inf");
          char buf[32];
          std::snprintf(buf, sizeof(buf), "%.3f", e);
          return std::string(buf);
        };
        auto row = [&](double sigma, double s, double k, double c, double eps) {
          char buf[256];
          std::snprintf(buf, sizeof(buf), "%.4f | %s | %.0f | %.0f | %s | %s\n", sigma,
                        internal::FormatNumber(s).c_str(), k, c, eps_text(eps).c_str(),
                        acc_text().c_str());
          return std::string(buf);
        };
        txt << row(summary.sigma, tcfg.clip.total_bound(),
                   static_cast<double>(data.train.users.size()),
                   trainer.estimator().q * static_cast<double>(data.train.users.size()), summary.epsilon);
        if (cfg.report_users || cfg.report_expected_users) {
          if (!cfg.report_users || !cfg.report_expected_users) {
            throw ConfigError("report_users and report_expected_users go together");
          }
          if (!cfg.noise) throw ConfigError("a privacy report needs noise enabled");
          summary.declared = DeclaredPopulationReport(*cfg.report_users, *cfg.report_expected_users,
                                                      cfg.z, tcfg.clip.total_bound(),
                                                      summary.rounds, cfg.report_delta);
          const auto& d = *summary.declared;
          report["declared"] = {{"num_users", d.num_users}, {"expected_users", d.expected_users},
                                {"sigma", d.sigma},         {"z", d.noise_scale},
                                {"rounds", d.rounds},       {"delta", d.delta},
                                {"epsilon", d.epsilon}};
          txt << row(d.sigma, d.clip_bound, d.num_users, d.expected_users, d.epsilon);
        }
        internal::WriteFile(dir / "privacy_report.json", report.dump(2) + "\n");
        internal::WriteFile(dir / "privacy_report.txt", txt.str());
        return summary;
      },
      any_model);
}

// eval.csv of a run directory: round -> accuracy_top1.
inline std::map<std::uint64_t, double> ReadEvalCurve(const std::filesystem::path& dir) {
  std::ifstream in(dir / "eval.csv");
  if (!in) throw ConfigError("no eval.csv in " + dir.string());
  std::map<std::uint64_t, double> curve;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string round, acc;
    std::getline(row, round, ',');
    std::getline(row, acc, ',');
    try {
      curve[std::stoull(round)] = std::stod(acc);
    } catch (const std::exception&) {
      throw ConfigError("malformed row in " + (dir / "eval.csv").string() + ": " + line);
    }
  }
  return curve;
}

struct Comparison {
  std::vector<std::string> runs;
  std::vector<std::uint64_t> rounds;
  std::vector<std::vector<double>> accuracy;  // [round][run]
  // accuracy[r][i] - accuracy[r][0] at the last evaluated round, per run.
  std::vector<double> final_delta;
};

// Aligns accuracy curves of >= 2 runs. Runs must share the evaluation
// schedule.
inline Comparison CompareRuns(const std::vector<std::filesystem::path>& dirs) {
  if (dirs.size() < 2) throw ConfigError("compare needs at least two run directories");
  Comparison c;
  std::vector<std::map<std::uint64_t, double>> curves;
  for (const auto& d : dirs) {
    curves.push_back(ReadEvalCurve(d));
    c.runs.push_back(d.string());
  }
  for (std::size_t i = 1; i < curves.size(); ++i) {
    std::vector<std::uint64_t> a, b;
    for (const auto& kv : curves[0]) a.push_back(kv.first);
    for (const auto& kv : curves[i]) b.push_back(kv.first);
    if (a != b) {
      throw ConfigError("evaluation schedules differ between " + c.runs[0] + " and " + c.runs[i]);
    }
  }
  if (curves[0].empty()) throw ConfigError("runs have no evaluations to compare");
  for (const auto& [round, acc0] : curves[0]) {
    c.rounds.push_back(round);
    std::vector<double> row;
    for (const auto& curve : curves) row.push_back(curve.at(round));
    c.accuracy.push_back(std::move(row));
  }
  for (std::size_t i = 0; i < curves.size(); ++i) {
    c.final_delta.push_back(c.accuracy.back()[i] - c.accuracy.back()[0]);
  }
  return c;
}

inline std::string ComparisonCsv(const Comparison& c) {
  std::ostringstream s;
  s << "round";
  for (std::size_t i = 0; i < c.runs.size(); ++i) s << ",accuracy_top1_" << i;
  for (std::size_t i = 1; i < c.runs.size(); ++i) s << ",delta_" << i;
  s << '\n';
  for (std::size_t r = 0; r < c.rounds.size(); ++r) {
    s << c.rounds[r];
    for (double a : c.accuracy[r]) s << ',' << internal::FormatNumber(a);
    for (std::size_t i = 1; i < c.runs.size(); ++i) {
      s << ',' << internal::FormatNumber(c.accuracy[r][i] - c.accuracy[r][0]);
    }
    s << '\n';
  }
  return s.str();
}

inline std::string PrivacyTableCsv(const std::vector<PrivacyTableRow>& rows) {
  std::ostringstream s;
  s << "K,C_tilde,z,rounds,delta,epsilon\n";
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.0f,%.0f,%g,%llu,%.6e,%.4f\n", r.num_users,
                  r.expected_users, r.noise_scale, static_cast<unsigned long long>(r.rounds),
                  r.delta, r.epsilon);
    s << buf;
  }
  return s.str();
}

}  // namespace dpfed

#endif  // DPFED_EXPERIMENT_HPP_
