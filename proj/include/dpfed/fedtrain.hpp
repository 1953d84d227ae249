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

// Main DP-FedAvg / DP-FedSGD loop: Bernoulli user sampling, local updates
// with clipping, bounded-sensitivity estimation, server-side Gaussian noise
// and moments accounting.

#ifndef DPFED_FEDTRAIN_HPP_
#define DPFED_FEDTRAIN_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpfed/accountant.hpp"
#include "dpfed/dataset.hpp"
#include "dpfed/error.hpp"
#include "dpfed/estimators.hpp"
#include "dpfed/model.hpp"
#include "dpfed/param_vector.hpp"
#include "dpfed/rng.hpp"

namespace dpfed {

enum class Algorithm { kFedAvg, kFedSGD };

struct LocalTraining {
  Algorithm algorithm = Algorithm::kFedAvg;
  int epochs = 1;                // FedAvg only
  std::size_t batch_size = 8;    // windows per batch; 0 means the whole shard
  double learning_rate = 6.0;
  // Project the cumulative deviation after every local step (FedAvg). When
  // false, only the final deviation is clipped.
  bool greedy_clip = true;
};

struct TrainingConfig {
  double q = 0.05;               // user sampling probability
  double weight_cap = 1600;      // w_hat; w_k = min(n_k / w_hat, 1)
  double noise_scale = 1.0;      // z
  bool noise_enabled = true;
  EstimatorKind estimator = EstimatorKind::kFixedDenominator;
  std::optional<double> min_weight;  // W_min; defaults to 0.9 W
  ClipConfig clip = ClipConfig::Flat(15.0);
  LocalTraining local;
  std::size_t unroll = 10;
  std::uint64_t rounds = 100;
  std::uint64_t seed = 1;
  // Exactly this many distinct users per round instead of Bernoulli(q)
  // sampling. Estimators and the accountant then use q = C / K.
  std::optional<std::size_t> fixed_sample_size;
  std::uint64_t eval_every = 20;
  std::size_t smoothing_window = 5;
  std::optional<double> reference_delta;  // defaults to K^-1.1
  unsigned workers = 1;

  void Validate() const {
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("sampling probability q must be in (0, 1]");
    if (!(weight_cap > 0.0)) throw ConfigError("per-user example cap must be positive");
    if (noise_enabled && !(noise_scale > 0.0 && std::isfinite(noise_scale))) {
      throw ConfigError("noise scale z must be positive");
    }
    if (noise_enabled && !clip.enabled()) {
      throw ConfigError("noise requires a finite clip bound S (sensitivity is unbounded)");
    }
    if (local.epochs < 1) throw ConfigError("local epochs must be >= 1");
    if (!(local.learning_rate >= 0.0) || !std::isfinite(local.learning_rate)) {
      throw ConfigError("learning rate must be finite and non-negative");
    }
    if (unroll == 0) throw ConfigError("unroll length must be positive");
    if (eval_every == 0) throw ConfigError("evaluation cadence must be positive");
    if (smoothing_window == 0) throw ConfigError("smoothing window must be positive");
    if (fixed_sample_size && *fixed_sample_size == 0) {
      throw ConfigError("fixed sample size must be positive");
    }
    if (reference_delta && !(*reference_delta > 0.0 && *reference_delta < 1.0)) {
      throw ConfigError("reference delta must be in (0, 1)");
    }
    if (workers == 0) throw ConfigError("need at least one worker");
  }
};

// Each user independently with probability q; ascending indices. Gaps
// between included users are drawn as geometric variates, so the cost is
// proportional to the sample size rather than to the population.
inline std::vector<std::size_t> SampleUsers(std::size_t num_users, double q, Rng& rng) {
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("sampling probability q must be in (0, 1]");
  std::vector<std::size_t> out;
  if (q == 1.0) {
    out.resize(num_users);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  std::geometric_distribution<std::size_t> gap(q);
  for (std::size_t k = gap(rng); k < num_users; k += gap(rng) + 1) out.push_back(k);
  return out;
}

// Exactly `count` distinct users, uniformly; ascending indices.
inline std::vector<std::size_t> SampleFixedUsers(std::size_t num_users, std::size_t count,
                                                 Rng& rng) {
  if (count > num_users) {
    throw ConfigError("fixed sample size " + std::to_string(count) + " exceeds " +
                      std::to_string(num_users) + " users");
  }
  std::vector<std::size_t> all(num_users);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> out;
  out.reserve(count);
  std::sample(all.begin(), all.end(), std::back_inserter(out), count, rng);
  return out;
}

struct UserUpdate {
  ParamVector delta;
  // Largest norm the deviation reached before a projection (the final norm
  // when nothing was clipped).
  double norm_before_clip = 0.0;
  bool clipped = false;
};

namespace internal {

inline std::string UserContext(const UserShard& shard) {
  return "user " + std::to_string(shard.user_id);
}

template <Model M>
LossAndGradient CheckedGradient(const M& model, const ParamVector& params, Batch batch,
                                const UserShard& shard, std::size_t batch_index) {
  LossAndGradient lg = model.ComputeLossAndGradient(params, batch);
  if (!std::isfinite(lg.loss) || !lg.gradient.AllFinite()) {
    throw NumericError(UserContext(shard) + ", batch " + std::to_string(batch_index) +
                       ": non-finite loss or gradient");
  }
  return lg;
}

inline std::vector<Sequence> ShardSequences(const UserShard& shard, std::size_t unroll) {
  auto seqs = MakeSequences(shard.tokens, unroll);
  if (seqs.empty()) throw ConfigError(UserContext(shard) + ": shard has no training windows");
  return seqs;
}

}  // namespace internal

// Local FedAvg: `epochs` passes of minibatch SGD from theta0. The deviation
// Delta = theta - theta0 is tracked directly; with greedy clipping it is
// projected back into the clip ball after every step, otherwise once at the
// end. The window order is reshuffled every epoch from `rng`.
template <Model M>
UserUpdate UserUpdateFedAvg(const M& model, const UserShard& shard, const ParamVector& theta0,
                            const LocalTraining& local, const ClipConfig& clip,
                            std::size_t unroll, Rng& rng) {
  std::vector<Sequence> seqs = internal::ShardSequences(shard, unroll);
  const std::size_t b = local.batch_size == 0 ? seqs.size() : std::min(local.batch_size, seqs.size());
  UserUpdate out;
  out.delta = ParamVector::Zeros(theta0.shape());
  ParamVector theta = theta0;  // always theta0 + delta
  std::size_t step = 0;
  for (int epoch = 0; epoch < local.epochs; ++epoch) {
    if (b < seqs.size()) std::shuffle(seqs.begin(), seqs.end(), rng);
    for (std::size_t start = 0; start < seqs.size(); start += b, ++step) {
      const Batch batch(seqs.data() + start, std::min(b, seqs.size() - start));
      const LossAndGradient lg = internal::CheckedGradient(model, theta, batch, shard, step);
      out.delta.AddScaled(lg.gradient, -local.learning_rate);
      if (local.greedy_clip) {
        const ClipInfo info = ClipInPlace(out.delta, clip);
        if (info.clipped) {
          out.clipped = true;
          out.norm_before_clip = std::max(out.norm_before_clip, info.norm_before);
        }
      }
      theta.AssignSum(theta0, out.delta);
    }
  }
  const ClipInfo info = ClipInPlace(out.delta, clip);
  out.clipped = out.clipped || info.clipped;
  out.norm_before_clip = std::max(out.norm_before_clip, info.norm_before);
  return out;
}

// Local FedSGD: Clip(-lr * grad) on one batch of `batch_size` windows drawn
// from the shard (the whole shard when batch_size is 0 or at least the
// number of windows).
template <Model M>
UserUpdate UserUpdateFedSGD(const M& model, const UserShard& shard, const ParamVector& theta0,
                            const LocalTraining& local, const ClipConfig& clip,
                            std::size_t unroll, Rng& rng) {
  std::vector<Sequence> seqs = internal::ShardSequences(shard, unroll);
  std::size_t b = seqs.size();
  if (local.batch_size != 0 && local.batch_size < seqs.size()) {
    std::shuffle(seqs.begin(), seqs.end(), rng);
    b = local.batch_size;
  }
  const LossAndGradient lg =
      internal::CheckedGradient(model, theta0, Batch(seqs.data(), b), shard, 0);
  ClipResult r = ApplyClip(lg.gradient * -local.learning_rate, clip);
  return {std::move(r.value), r.norm_before, r.clipped};
}

struct RoundLog {
  std::uint64_t round = 0;
  std::size_t sampled_users = 0;
  double norm_min = 0.0;
  double norm_median = 0.0;
  double norm_max = 0.0;
  double frac_clipped = 0.0;
  double update_norm = 0.0;  // estimate, before noise
  double sigma = 0.0;
  double epsilon = 0.0;  // cumulative, at the reference delta; +inf without noise
  std::optional<Metrics> eval;
  std::optional<double> accuracy_smoothed;  // mean of the last evaluations
};

inline nlohmann::json ToJson(const RoundLog& log) {
  nlohmann::json j = {{"round", log.round},
                      {"sampled_users", log.sampled_users},
                      {"norm_min", log.norm_min},
                      {"norm_median", log.norm_median},
                      {"norm_max", log.norm_max},
                      {"frac_clipped", log.frac_clipped},
                      {"update_norm", log.update_norm},
                      {"sigma", log.sigma}};
  j["epsilon"] = std::isfinite(log.epsilon) ? nlohmann::json(log.epsilon) : nlohmann::json("inf");
  if (log.eval) {
    j["accuracy_top1"] = log.eval->accuracy_top1;
    j["loss"] = log.eval->loss;
  }
  if (log.accuracy_smoothed) j["accuracy_top1_smoothed"] = *log.accuracy_smoothed;
  return j;
}

// Everything needed to continue a run: together with the config and dataset
// a resumed run reproduces the uninterrupted one bit for bit, because all
// randomness is derived from (seed, round, user).
struct TrainingState {
  std::uint64_t round = 0;  // rounds completed
  ParamVector params;
  MomentsAccountant accountant{1.0};
  std::vector<double> recent_accuracy;

  nlohmann::json ToJson() const {
    return {{"format", "dpfed.checkpoint.v1"},
            {"round", round},
            {"params", dpfed::ToJson(params)},
            {"accountant", accountant.ToJson()},
            {"recent_accuracy", recent_accuracy}};
  }

  static TrainingState FromJson(const nlohmann::json& j) {
    if (j.value("format", "") != "dpfed.checkpoint.v1") {
      throw ConfigError("not a dpfed.checkpoint.v1 document");
    }
    TrainingState s;
    s.round = j.at("round").get<std::uint64_t>();
    s.params = ParamVectorFromJson(j.at("params"));
    s.accountant = MomentsAccountant::FromJson(j.at("accountant"));
    s.recent_accuracy = j.at("recent_accuracy").get<std::vector<double>>();
    return s;
  }
};

template <Model M>
class FederatedTrainer {
 public:
  // `data` and `eval_set` must outlive the trainer. User weights are
  // recomputed from cfg.weight_cap.
  FederatedTrainer(const M& model, TrainingConfig cfg, const TokenDataset& data,
                   std::vector<Sequence> eval_set, ParamVector initial)
      : model_(model), cfg_(std::move(cfg)), data_(data), eval_set_(std::move(eval_set)) {
    cfg_.Validate();
    if (data_.users.empty()) throw ConfigError("dataset has no users");
    if (!std::is_sorted(data_.users.begin(), data_.users.end(),
                        [](const UserShard& a, const UserShard& b) { return a.user_id < b.user_id; })) {
      throw ConfigError("dataset users must be sorted by user_id");
    }
    if (initial.shape() != model_.shape()) throw ShapeError("initial parameters do not match model");
    if (cfg_.clip.mode() == ClipMode::kPerLayer &&
        cfg_.clip.layer_bounds().size() != model_.shape().size()) {
      throw ConfigError("per-layer clip bounds do not match the model's layer count");
    }
    weights_.reserve(data_.users.size());
    for (const auto& u : data_.users) {
      weights_.push_back(std::min(static_cast<double>(u.num_examples()) / cfg_.weight_cap, 1.0));
    }
    const double total_weight = std::accumulate(weights_.begin(), weights_.end(), 0.0);
    const double num_users = static_cast<double>(data_.users.size());

    estimator_.kind = cfg_.estimator;
    estimator_.q = cfg_.fixed_sample_size
                       ? static_cast<double>(*cfg_.fixed_sample_size) / num_users
                       : cfg_.q;
    estimator_.total_weight = total_weight;
    estimator_.min_weight = cfg_.min_weight.value_or(0.9 * total_weight);
    estimator_.Validate();

    sigma_ = cfg_.noise_enabled
                 ? CalibrateSigma(estimator_, cfg_.clip.total_bound(), cfg_.noise_scale)
                 : 0.0;
    delta_ = cfg_.reference_delta.value_or(std::pow(num_users, -1.1));
    state_.params = std::move(initial);
    state_.accountant = MomentsAccountant(estimator_.q);
  }

  const TrainingConfig& config() const { return cfg_; }
  const EstimatorConfig& estimator() const { return estimator_; }
  double sigma() const { return sigma_; }
  double reference_delta() const { return delta_; }
  const TrainingState& state() const { return state_; }
  bool done() const { return state_.round >= cfg_.rounds; }

  void Restore(TrainingState state) {
    if (state.params.shape() != model_.shape()) {
      throw ShapeError("checkpoint parameters do not match model");
    }
    if (state.accountant.q() != estimator_.q) {
      throw ConfigError("checkpoint accountant q differs from the configured q");
    }
    state_ = std::move(state);
  }

  double Epsilon() const {
    if (!cfg_.noise_enabled) return std::numeric_limits<double>::infinity();
    return state_.accountant.GetPrivacySpent(delta_);
  }

  // Runs round state().round + 1.
  RoundLog Step() {
    const std::uint64_t t = state_.round + 1;
    RoundLog log;
    log.round = t;
    try {
      Rng sampling = MakeSubstream(cfg_.seed, StreamPurpose::kSampling, t);
      const std::vector<std::size_t> chosen =
          cfg_.fixed_sample_size
              ? SampleFixedUsers(data_.users.size(), *cfg_.fixed_sample_size, sampling)
              : SampleUsers(data_.users.size(), cfg_.q, sampling);
      log.sampled_users = chosen.size();

      std::vector<UserUpdate> updates = ComputeUpdates(chosen, t);

      std::vector<WeightedUpdate> weighted;
      weighted.reserve(updates.size());
      std::vector<double> norms;
      std::size_t clipped = 0;
      for (std::size_t i = 0; i < chosen.size(); ++i) {
        norms.push_back(updates[i].norm_before_clip);
        clipped += updates[i].clipped ? 1 : 0;
        weighted.push_back({data_.users[chosen[i]].user_id, weights_[chosen[i]],
                            std::move(updates[i].delta)});
      }
      if (!norms.empty()) {
        std::sort(norms.begin(), norms.end());
        log.norm_min = norms.front();
        log.norm_max = norms.back();
        const std::size_t mid = norms.size() / 2;
        log.norm_median = norms.size() % 2 == 1 ? norms[mid] : 0.5 * (norms[mid - 1] + norms[mid]);
        log.frac_clipped = static_cast<double>(clipped) / static_cast<double>(norms.size());
      }

      ParamVector step = Estimate(weighted, estimator_, model_.shape());
      log.update_norm = FlatNorm(step);
      if (cfg_.noise_enabled) {
        Rng noise = MakeSubstream(cfg_.seed, StreamPurpose::kNoise, t);
        step = AddGaussianNoise(std::move(step), sigma_, noise);
        state_.accountant.AccumPrivSpending(cfg_.noise_scale, 1);
      }
      state_.params += step;
      if (!state_.params.AllFinite()) throw NumericError("non-finite model parameters");
      state_.round = t;
      log.sigma = sigma_;
      log.epsilon = Epsilon();

      if (t % cfg_.eval_every == 0 && !eval_set_.empty()) {
        log.eval = Evaluate(model_, state_.params, eval_set_);
        state_.recent_accuracy.push_back(log.eval->accuracy_top1);
        if (state_.recent_accuracy.size() > cfg_.smoothing_window) {
          state_.recent_accuracy.erase(state_.recent_accuracy.begin());
        }
        log.accuracy_smoothed =
            std::accumulate(state_.recent_accuracy.begin(), state_.recent_accuracy.end(), 0.0) /
            static_cast<double>(state_.recent_accuracy.size());
      }
    } catch (const ConfigError& e) {
      throw ConfigError("round " + std::to_string(t) + ": " + e.what());
    } catch (const ShapeError& e) {
      throw ShapeError("round " + std::to_string(t) + ": " + e.what());
    } catch (const NumericError& e) {
      throw NumericError("round " + std::to_string(t) + ": " + e.what());
    }
    return log;
  }

 private:
  UserUpdate ComputeOne(std::size_t user_index, std::uint64_t t) const {
    const UserShard& shard = data_.users[user_index];
    Rng rng = MakeSubstream(cfg_.seed, StreamPurpose::kUserLocal, t,
                            static_cast<std::uint64_t>(shard.user_id));
    if (cfg_.local.algorithm == Algorithm::kFedAvg) {
      return UserUpdateFedAvg(model_, shard, state_.params, cfg_.local, cfg_.clip, cfg_.unroll, rng);
    }
    return UserUpdateFedSGD(model_, shard, state_.params, cfg_.local, cfg_.clip, cfg_.unroll, rng);
  }

  // Updates in the order of `chosen`, whatever the worker count.
  std::vector<UserUpdate> ComputeUpdates(const std::vector<std::size_t>& chosen,
                                         std::uint64_t t) const {
    std::vector<UserUpdate> out(chosen.size());
    const std::size_t workers = std::min<std::size_t>(cfg_.workers, chosen.size());
    if (workers <= 1) {
      for (std::size_t i = 0; i < chosen.size(); ++i) out[i] = ComputeOne(chosen[i], t);
      return out;
    }
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t i = w; i < chosen.size(); i += workers) {
              out[i] = ComputeOne(chosen[i], t);
            }
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    return out;
  }

  const M& model_;
  TrainingConfig cfg_;
  const TokenDataset& data_;
  std::vector<Sequence> eval_set_;
  std::vector<double> weights_;
  EstimatorConfig estimator_;
  double sigma_ = 0.0;
  double delta_ = 0.0;
  TrainingState state_;
};

struct TrainingResult {
  ParamVector params;
  std::vector<RoundLog> logs;
  double epsilon = 0.0;
};

// Runs all configured rounds from `initial`. `on_round` (optional) sees every
// log as it is produced, together with the trainer (e.g. to checkpoint).
template <Model M>
TrainingResult RunTraining(const M& model, const TrainingConfig& cfg, const TokenDataset& data,
                           std::vector<Sequence> eval_set, ParamVector initial,
                           const std::function<void(const RoundLog&, const FederatedTrainer<M>&)>&
                               on_round = nullptr) {
  FederatedTrainer<M> trainer(model, cfg, data, std::move(eval_set), std::move(initial));
  TrainingResult result;
  while (!trainer.done()) {
    result.logs.push_back(trainer.Step());
    if (on_round) on_round(result.logs.back(), trainer);
  }
  result.params = trainer.state().params;
  result.epsilon = trainer.Epsilon();
  return result;
}

}  // namespace dpfed

#endif  // DPFED_FEDTRAIN_HPP_
