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

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Usage: acceptance [work_dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dpfed/accountant.hpp"
#include "dpfed/estimators.hpp"
#include "dpfed/experiment.hpp"
#include "dpfed/fedtrain.hpp"
#include "dpfed/models/bigram_softmax.hpp"
#include "dpfed/models/tiny_rnn.hpp"
#include "dpfed/param_vector.hpp"
#include "test_util.hpp"

namespace {

namespace fs = std::filesystem;
using namespace dpfed;
using dpfed::testing::MaxAbsDiff;
using dpfed::testing::RandomParamVector;

// Pinned tolerances.
constexpr double kEpsilonRelTol = 0.01;
constexpr double kEpsilonAbsTol = 0.02;
constexpr double kGridSeconds = 60.0;
constexpr double kExactTol = 1e-12;
constexpr double kGradientTol = 1e-5;
constexpr double kFiniteDifferenceStep = 1e-4;
constexpr double kAccuracyPoints = 0.02;
constexpr double kMaxFracClipped = 0.5;
constexpr double kUtilitySeconds = 600.0;

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Detail {
 public:
  template <typename T>
  Detail& operator<<(const T& x) {
    s_ << x;
    return *this;
  }
  std::string str() const { return s_.str(); }

 private:
  std::ostringstream s_;
};

bool WithinEpsilonTolerance(double got, double want) {
  return std::abs(got - want) <= std::max(kEpsilonRelTol * std::abs(want), kEpsilonAbsTol);
}

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// 1. Equal-weight grid, delta = K^-1.1, epsilon after 1, 10, ..., 1e6 rounds.
Outcome ReferenceGrid() {
  const double kWant[6][7] = {
      {0.97, 0.98, 1.00, 1.07, 1.18, 2.21, 7.50},
      {0.68, 0.69, 0.69, 0.69, 0.69, 0.72, 0.73},
      {1.17, 1.17, 1.20, 1.28, 1.39, 2.44, 8.13},
      {1.73, 1.92, 2.08, 3.06, 8.49, 32.38, 187.01},
      {0.47, 0.47, 0.48, 0.48, 0.49, 0.67, 1.95},
      {0.84, 0.84, 0.84, 0.85, 0.88, 0.88, 0.88},
  };
  const auto start = std::chrono::steady_clock::now();
  const auto rows = BuildPrivacyTable(ReferencePrivacyTableSpecs(), DecadeCheckpoints());
  const double seconds = Seconds(start);
  Outcome out;
  int matched = 0;
  double worst = 0.0;
  Detail d;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double want = kWant[i / 7][i % 7];
    worst = std::max(worst, std::abs(rows[i].epsilon - want));
    if (WithinEpsilonTolerance(rows[i].epsilon, want)) {
      ++matched;
    } else {
      out.pass = false;
      d << " miss(K=" << rows[i].num_users << " C~=" << rows[i].expected_users
        << " z=" << rows[i].noise_scale << " T=" << rows[i].rounds << ": " << rows[i].epsilon
        << " vs " << want << ")";
    }
  }
  out.pass = out.pass && rows.size() == 42 && seconds < kGridSeconds;
  out.detail = (Detail() << matched << "/" << rows.size() << " cells, max |diff| " << worst
                         << ", " << seconds << " s")
                   .str() +
               d.str();
  return out;
}

double Epsilon(double users, double expected, double z, std::uint64_t rounds, double delta) {
  MomentsAccountant acc(expected / users);
  acc.AccumPrivSpending(z, rounds);
  return acc.GetPrivacySpent(delta);
}

// 2. Declared populations, z = 1, 5000 rounds, delta = 1e-9.
Outcome DeclaredRows() {
  struct Row {
    double users, expected, want;
  };
  const Row rows[] = {{763430, 5000, 4.634}, {763430, 1667, 2.314}, {763430, 1250, 2.038},
                      {1e8, 5000, 1.152},    {1e8, 1667, 0.991},    {1e8, 1250, 0.987}};
  Outcome out;
  Detail d;
  for (const Row& r : rows) {
    const double eps = Epsilon(r.users, r.expected, 1.0, 5000, 1e-9);
    out.pass = out.pass && WithinEpsilonTolerance(eps, r.want);
    d << "K=" << r.users << " C~=" << r.expected << ": " << eps << " (want " << r.want << ") ";
  }
  out.detail = d.str();
  return out;
}

// 3. Single-step-per-user training over many rounds.
Outcome LongRunAccounting() {
  const double e3000 = Epsilon(763430, 5000, 1.0, 3000, 1e-9);
  const double e20000 = Epsilon(763430, 5000, 1.0, 20000, 1e-9);
  Outcome out;
  out.pass = std::abs(e3000 - 3.81) <= 0.01 * 3.81 && std::abs(e20000 - 8.92) <= 0.01 * 8.92;
  out.detail = (Detail() << "T=3000: " << e3000 << " (want 3.81), T=20000: " << e20000
                         << " (want 8.92), tolerance 1%")
                   .str();
  return out;
}

// 4. Adversarial add-one-user search against both sensitivity bounds.
Outcome EstimatorSensitivity() {
  constexpr std::size_t kTrials = 10000;
  Outcome out;
  Detail d;
  {
    Rng rng(101);
    const EstimatorConfig cfg{EstimatorKind::kFixedDenominator, 0.05, 400.0, 0.0};
    const auto r = EmpiricalSensitivity(cfg, 3.0, kTrials, rng);
    const bool ok = r.observed_max <= r.bound + kExactTol &&
                    std::abs(r.observed_max - r.bound) <= kExactTol;
    out.pass = out.pass && ok;
    d << "fixed: max " << r.observed_max << " bound " << r.bound << " (attained "
      << (std::abs(r.observed_max - r.bound) <= kExactTol ? "yes" : "no") << "); ";
  }
  {
    Rng rng(103);
    const EstimatorConfig cfg{EstimatorKind::kClippedDenominator, 0.1, 20.0, 10.0};
    const auto r = EmpiricalSensitivity(cfg, 1.0, kTrials, rng);
    out.pass = out.pass && r.observed_max <= r.bound + kExactTol;
    d << "clipped: max " << r.observed_max << " bound " << r.bound;
  }
  out.detail = d.str();
  return out;
}

// 5. Flat and per-layer clipping laws on random parameter vectors.
Outcome ClippingSuite() {
  constexpr int kVectors = 1000;
  Rng rng(105);
  std::uniform_real_distribution<double> log_bound(-2.0, 2.0);
  int failures = 0;
  int clipped = 0;
  for (int t = 0; t < kVectors; ++t) {
    const ParamVector v = RandomParamVector(rng);
    const double s = std::pow(10.0, log_bound(rng));
    const ParamVector c = FlatClip(v, s);
    const double norm = FlatNorm(v);
    bool ok = FlatNorm(c) <= s * (1.0 + kExactTol);             // norm bound
    ok = ok && MaxAbsDiff(FlatClip(c, s), c) <= kExactTol * s;  // idempotence
    if (norm <= s) {
      ok = ok && MaxAbsDiff(c, v) == 0.0;
    } else {
      ++clipped;
      const double ratio = FlatNorm(c) / norm;  // direction preservation
      ok = ok && std::abs(FlatNorm(c) - s) <= kExactTol * s &&
           MaxAbsDiff(c, ratio * v) <= kExactTol * s;
    }

    std::vector<double> bounds(v.num_layers());
    double total_sq = 0.0;
    for (double& b : bounds) {
      b = std::pow(10.0, log_bound(rng));
      total_sq += b * b;
    }
    const ParamVector p = PerLayerClip(v, bounds);
    for (std::size_t j = 0; j < bounds.size(); ++j) {
      ok = ok && LayerNorm(p, j) <= bounds[j] * (1.0 + kExactTol);
    }
    ok = ok && FlatNorm(p) <= std::sqrt(total_sq) * (1.0 + kExactTol);
    ok = ok && MaxAbsDiff(PerLayerClip(p, bounds), p) <= kExactTol * std::sqrt(total_sq);

    std::vector<double> flat;
    for (std::size_t j = 0; j < v.num_layers(); ++j) {
      flat.insert(flat.end(), v.values(j).begin(), v.values(j).end());
    }
    const ParamVector single({Layer{"all", flat}});
    const double one[] = {s};
    ok = ok && MaxAbsDiff(PerLayerClip(single, one), FlatClip(single, s)) <= kExactTol * s;
    if (!ok) ++failures;
  }
  Outcome out;
  out.pass = failures == 0;
  out.detail = (Detail() << kVectors << " vectors (" << clipped << " clipped), " << failures
                         << " violations")
                   .str();
  return out;
}

std::vector<int> RandomTokens(std::size_t n, int vocab, Rng& rng) {
  std::uniform_int_distribution<int> token(0, vocab - 1);
  std::vector<int> out(n);
  for (int& t : out) t = token(rng);
  return out;
}

ParamVector RandomParams(const Shape& shape, double scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  ParamVector p = ParamVector::Zeros(shape);
  for (std::size_t j = 0; j < p.num_layers(); ++j) {
    for (double& x : p.mutable_values(j)) x = normal(rng);
  }
  return p;
}

// ||g - g_fd|| / max(||g||, ||g_fd||) with central differences.
template <Model M>
double GradientRelativeError(const M& model, const ParamVector& params, Batch batch) {
  const double h = kFiniteDifferenceStep;
  const ParamVector g = model.ComputeLossAndGradient(params, batch).gradient;
  ParamVector fd = ParamVector::Zeros(params.shape());
  ParamVector probe = params;
  for (std::size_t j = 0; j < params.num_layers(); ++j) {
    for (std::size_t i = 0; i < params.values(j).size(); ++i) {
      const double x = params.values(j)[i];
      probe.mutable_values(j)[i] = x + h;
      const double up = model.Loss(probe, batch);
      probe.mutable_values(j)[i] = x - h;
      const double down = model.Loss(probe, batch);
      probe.mutable_values(j)[i] = x;
      fd.mutable_values(j)[i] = (up - down) / (2.0 * h);
    }
  }
  const double scale = std::max(FlatNorm(g), FlatNorm(fd));
  return scale == 0.0 ? 0.0 : FlatNorm(g - fd) / scale;
}

// 6. Analytic gradients of both models against finite differences.
Outcome GradientChecks() {
  double worst_bigram = 0.0;
  double worst_rnn = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    const BigramSoftmax bigram(6);
    const auto b_tokens = RandomTokens(40, 6, rng);  // sequences view into these
    const auto b_seqs = MakeSequences(b_tokens, 5);
    worst_bigram = std::max(
        worst_bigram,
        GradientRelativeError(bigram, RandomParams(bigram.shape(), 1.0, rng), b_seqs));
    const TinyRnn rnn(7, 4);
    const auto r_tokens = RandomTokens(30, 7, rng);
    const auto r_seqs = MakeSequences(r_tokens, 6);
    worst_rnn = std::max(worst_rnn,
                         GradientRelativeError(rnn, RandomParams(rnn.shape(), 0.5, rng), r_seqs));
  }
  Outcome out;
  out.pass = worst_bigram <= kGradientTol && worst_rnn <= kGradientTol;
  out.detail = (Detail() << "20 seeds, max relative error bigram " << worst_bigram << ", rnn "
                         << worst_rnn)
                   .str();
  return out;
}

SyntheticData SmallData() {
  SynthesisConfig cfg;
  cfg.num_users = 40;
  cfg.tokens_per_user = 200;
  cfg.vocab_size = 12;
  cfg.heterogeneity = 0.3;
  cfg.eval_users = 4;
  return SynthesizeDataset(cfg);
}

// 7. One full-shard local step is a gradient step; (S, sigma) scaling at
// fixed z leaves the privacy trajectory untouched.
Outcome AlgorithmicIdentities() {
  const auto data = SmallData();
  const BigramSoftmax model(12);
  Rng init(7);
  ParamVector theta = model.Initialize(init);
  std::normal_distribution<double> normal(0.0, 0.5);
  for (std::size_t j = 0; j < theta.num_layers(); ++j) {
    for (double& x : theta.mutable_values(j)) x += normal(init);
  }
  LocalTraining local;
  local.batch_size = 0;
  local.epochs = 1;
  local.learning_rate = 2.5;
  double worst = 0.0;
  for (const auto& shard : data.train.users) {
    Rng a(1), b(1);
    const auto avg = UserUpdateFedAvg(model, shard, theta, local, ClipConfig::None(), 10, a);
    const auto sgd = UserUpdateFedSGD(model, shard, theta, local, ClipConfig::None(), 10, b);
    worst = std::max(worst, MaxAbsDiff(avg.delta, sgd.delta));
  }

  TrainingConfig cfg;
  cfg.q = 0.25;
  cfg.weight_cap = 200;
  cfg.clip = ClipConfig::Flat(0.5);
  cfg.local.learning_rate = 1.0;
  cfg.rounds = 12;
  cfg.eval_every = 4;
  cfg.seed = 3;
  TrainingConfig scaled = cfg;
  scaled.clip = ClipConfig::Flat(1.5);
  Rng r1(1), r2(1);
  const auto ra = RunTraining(model, cfg, data.train, {}, model.Initialize(r1));
  const auto rb = RunTraining(model, scaled, data.train, {}, model.Initialize(r2));
  bool identical = ra.logs.size() == rb.logs.size() && ra.epsilon == rb.epsilon;
  for (std::size_t t = 0; identical && t < ra.logs.size(); ++t) {
    identical = ra.logs[t].epsilon == rb.logs[t].epsilon &&
                std::abs(rb.logs[t].sigma - 3.0 * ra.logs[t].sigma) <= 1e-15 * rb.logs[t].sigma;
  }
  Outcome out;
  out.pass = worst <= kExactTol && identical;
  out.detail = (Detail() << "FedAvg vs FedSGD max |diff| " << worst << " over "
                         << data.train.users.size() << " users; epsilon trajectory under 3x (S, "
                         << "sigma) " << (identical ? "bit-identical" : "DIFFERS"))
                   .str();
  return out;
}

struct UtilityRuns {
  RunSummary baseline;
  RunSummary noised;
  RunSummary repeat;
  double noised_seconds = 0.0;
  double baseline_seconds = 0.0;
};

RunSummary Train(const std::string& preset, const fs::path& dir, double* seconds) {
  ExperimentConfig cfg;
  ApplyPreset(preset, cfg);
  cfg.out = dir.string();
  const auto start = std::chrono::steady_clock::now();
  RunSummary s = RunExperiment(cfg);
  *seconds = Seconds(start);
  return s;
}

// 8. Desk-scale utility: noised and clipped vs un-noised, un-clipped.
Outcome Utility(const UtilityRuns& r) {
  const double base = r.baseline.final_eval->accuracy_top1;
  const double noised = r.noised.final_eval->accuracy_top1;
  Outcome out;
  out.pass = r.noised.mean_frac_clipped <= kMaxFracClipped &&
             std::abs(noised - base) <= kAccuracyPoints && r.noised_seconds < kUtilitySeconds &&
             r.baseline_seconds < kUtilitySeconds;
  out.detail = (Detail() << "K=1000 V=100 h=0.3, 500 rounds, C~=50: baseline accuracy " << base
                         << ", z=1 S=6 accuracy " << noised << " (epsilon " << r.noised.epsilon
                         << ", sigma " << r.noised.sigma << ", mean clipped fraction "
                         << r.noised.mean_frac_clipped << "), runtimes " << r.baseline_seconds
                         << " s / " << r.noised_seconds << " s")
                   .str();
  return out;
}

// 9. Identical seeds give identical metric files.
Outcome Determinism(const UtilityRuns& r) {
  Outcome out;
  int files = 0;
  Detail d;
  for (const char* name : {"metrics.csv", "eval.csv", "rounds.jsonl", "privacy_report.json",
                           "privacy_report.txt"}) {
    const std::string a = Slurp(r.noised.dir / name);
    const std::string b = Slurp(r.repeat.dir / name);
    ++files;
    if (a.empty() || a != b) {
      out.pass = false;
      d << " " << name << " differs";
    }
  }
  out.detail = (Detail() << files << " files compared byte for byte").str() + d.str();
  return out;
}

int failures = 0;

void Report(int id, const char* name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s  [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work =
      argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "dpfed_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  Report(1, "accountant reference grid", ReferenceGrid);
  Report(2, "accountant declared populations", DeclaredRows);
  Report(3, "accountant long single-step runs", LongRunAccounting);
  Report(4, "estimator sensitivity bounds", EstimatorSensitivity);
  Report(5, "clipping laws", ClippingSuite);
  Report(6, "model gradients", GradientChecks);
  Report(7, "algorithmic identities", AlgorithmicIdentities);

  UtilityRuns runs;
  bool trained = false;
  std::string train_error;
  try {
    double repeat_seconds = 0.0;
    runs.baseline = Train("baseline", work / "baseline", &runs.baseline_seconds);
    runs.noised = Train("dp", work / "dp", &runs.noised_seconds);
    runs.repeat = Train("dp", work / "dp_repeat", &repeat_seconds);
    trained = true;
  } catch (const std::exception& e) {
    train_error = e.what();
  }
  auto gated = [&](Outcome (*check)(const UtilityRuns&)) {
    return [&, check]() -> Outcome {
      if (!trained) return {false, "training failed: " + train_error};
      return check(runs);
    };
  };
  Report(8, "desk-scale utility", gated(Utility));
  Report(9, "determinism", gated(Determinism));

  std::printf("%s: %d of 9 criteria failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
