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

// Bounded-sensitivity estimators of a weighted average over a
// Poisson-sampled set of users, and the noise calibration built on them.
//
//   FixedDenominator:   sum_k w_k Delta_k / (q W)                  sens. S / (qW)
//   ClippedDenominator: sum_k w_k Delta_k / max(q W_min, sum_k w_k) sens. 2S / (qW_min)
//
// The sensitivity is the largest change in L2 norm of the output when one
// user (with ||w_k Delta_k|| <= S) is added to the sample.

#ifndef DPFED_ESTIMATORS_HPP_
#define DPFED_ESTIMATORS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dpfed/error.hpp"
#include "dpfed/param_vector.hpp"
#include "dpfed/rng.hpp"

namespace dpfed {

enum class EstimatorKind { kFixedDenominator, kClippedDenominator };

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::kFixedDenominator;
  double q = 1.0;          // user sampling probability
  double total_weight = 0;  // W = sum over all users of w_k
  double min_weight = 0;    // W_min, ClippedDenominator only

  void Validate() const {
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("sampling probability q must be in (0, 1]");
    if (!(total_weight > 0.0) || !std::isfinite(total_weight)) {
      throw ConfigError("total weight W must be positive");
    }
    if (kind == EstimatorKind::kClippedDenominator &&
        !(min_weight > 0.0 && min_weight <= total_weight)) {
      throw ConfigError("clipped-denominator estimator needs 0 < W_min <= W");
    }
  }
};

struct WeightedUpdate {
  std::int64_t user_id = 0;
  double weight = 0.0;  // w_k in [0, 1]
  ParamVector delta;    // already clipped
};

// Estimate of the weighted average update. Updates are summed in the order
// given; callers that need bit-reproducibility pass them sorted by user_id.
// An empty sample yields the zero vector of `shape`.
inline ParamVector Estimate(std::span<const WeightedUpdate> sample, const EstimatorConfig& cfg,
                            const Shape& shape) {
  cfg.Validate();
  ParamVector sum = ParamVector::Zeros(shape);
  double weight_sum = 0.0;
  for (const auto& u : sample) {
    if (!(u.weight >= 0.0 && u.weight <= 1.0)) {
      throw ConfigError("user weight must be in [0, 1]");
    }
    if (!u.delta.SameShape(sum)) {
      throw ShapeError("update of user " + std::to_string(u.user_id) +
                       " does not match the model shape");
    }
    sum.AddScaled(u.delta, u.weight);
    weight_sum += u.weight;
  }
  double denominator = cfg.q * cfg.total_weight;
  if (cfg.kind == EstimatorKind::kClippedDenominator) {
    denominator = std::max(cfg.q * cfg.min_weight, weight_sum);
  }
  sum *= 1.0 / denominator;
  return sum;
}

inline double SensitivityBound(const EstimatorConfig& cfg, double clip_bound) {
  cfg.Validate();
  if (cfg.kind == EstimatorKind::kFixedDenominator) {
    return clip_bound / (cfg.q * cfg.total_weight);
  }
  return 2.0 * clip_bound / (cfg.q * cfg.min_weight);
}

// sigma = z * sensitivity.
inline double CalibrateSigma(const EstimatorConfig& cfg, double clip_bound, double noise_scale) {
  if (!(noise_scale > 0.0)) throw ConfigError("noise scale z must be positive");
  if (!std::isfinite(clip_bound)) {
    throw ConfigError("noise calibration needs a finite clip bound S");
  }
  return noise_scale * SensitivityBound(cfg, clip_bound);
}

struct SensitivitySearchOptions {
  std::size_t dimension = 4;
  std::size_t max_sample_size = 40;
  // Every delta in the base sample C is zero, so only the denominator shift
  // and the added user contribute.
  bool zero_base_deltas = false;
};

struct SensitivitySearchResult {
  double observed_max = 0.0;
  double bound = 0.0;
  std::size_t trials = 0;
};

namespace internal {

inline std::vector<double> RandomUnitVector(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal;
  std::vector<double> v(dim);
  double n = 0.0;
  do {
    for (double& x : v) x = normal(rng);
    n = std::sqrt(SquaredNorm(v));
  } while (n == 0.0);
  for (double& x : v) x /= n;
  return v;
}

inline ParamVector SingleLayer(std::vector<double> values) {
  return ParamVector({Layer{"w", std::move(values)}});
}

}  // namespace internal

// Adversarial search for the largest ||Estimate(C + {k}) - Estimate(C)||.
//
// Each trial draws a base sample C (random size, weights in [0, 1] and
// clipped deltas with ||Delta|| <= S) and an extra user k whose delta has norm
// exactly S. The direction of k is drawn uniformly on the sphere, set
// against the current estimate, or aligned with a coordinate axis, since pure
// random directions under-explore the clipped-denominator worst case.
inline SensitivitySearchResult EmpiricalSensitivity(const EstimatorConfig& cfg, double clip_bound,
                                                    std::size_t trials, Rng& rng,
                                                    const SensitivitySearchOptions& opts = {}) {
  cfg.Validate();
  if (trials == 0) throw ConfigError("empirical sensitivity needs at least one trial");
  if (!(clip_bound > 0.0) || !std::isfinite(clip_bound)) {
    throw ConfigError("clip bound S must be positive and finite");
  }
  const std::size_t dim = std::max<std::size_t>(opts.dimension, 1);
  const Shape shape{{"w", dim}};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> size_dist(0, opts.max_sample_size);

  SensitivitySearchResult result;
  result.bound = SensitivityBound(cfg, clip_bound);
  result.trials = trials;
  std::vector<WeightedUpdate> sample;
  for (std::size_t t = 0; t < trials; ++t) {
    sample.clear();
    const std::size_t n = size_dist(rng);
    // Some trials use a shared direction for all of C so the base estimate is
    // as large as possible.
    const bool aligned_base = unit(rng) < 0.5;
    const std::vector<double> base_dir = internal::RandomUnitVector(dim, rng);
    for (std::size_t i = 0; i < n; ++i) {
      WeightedUpdate u;
      u.user_id = static_cast<std::int64_t>(i);
      u.weight = unit(rng) < 0.3 ? 1.0 : unit(rng);
      std::vector<double> dir = aligned_base ? base_dir : internal::RandomUnitVector(dim, rng);
      const double length =
          opts.zero_base_deltas ? 0.0 : clip_bound * (unit(rng) < 0.5 ? 1.0 : unit(rng));
      for (double& x : dir) x *= length;
      u.delta = internal::SingleLayer(std::move(dir));
      sample.push_back(std::move(u));
    }
    const ParamVector before = Estimate(sample, cfg, shape);

    WeightedUpdate extra;
    extra.user_id = static_cast<std::int64_t>(n);
    extra.weight = unit(rng) < 0.5 ? 1.0 : std::max(unit(rng), 1e-3);
    std::vector<double> dir;
    const double mode = unit(rng);
    const double before_norm = FlatNorm(before);
    if (mode < 0.4 && before_norm > 0.0) {
      dir.assign(before.values(0).begin(), before.values(0).end());
      for (double& x : dir) x /= -before_norm;
    } else if (mode < 0.7) {
      dir.assign(dim, 0.0);
      std::uniform_int_distribution<std::size_t> axis(0, dim - 1);
      dir[axis(rng)] = unit(rng) < 0.5 ? 1.0 : -1.0;
    } else {
      dir = internal::RandomUnitVector(dim, rng);
    }
    for (double& x : dir) x *= clip_bound;
    extra.delta = internal::SingleLayer(std::move(dir));
    sample.push_back(std::move(extra));
    const ParamVector after = Estimate(sample, cfg, shape);
    result.observed_max = std::max(result.observed_max, FlatNorm(after - before));
  }
  return result;
}

}  // namespace dpfed

#endif  // DPFED_ESTIMATORS_HPP_
