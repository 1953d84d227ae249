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

#ifndef DPFED_MODEL_HPP_
#define DPFED_MODEL_HPP_

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpfed/error.hpp"
#include "dpfed/param_vector.hpp"
#include "dpfed/rng.hpp"

namespace dpfed {

// A window of consecutive tokens; positions 0..n-2 are inputs and 1..n-1 the
// next-token targets, so a window of n tokens yields n - 1 predictions.
struct Sequence {
  std::span<const int> tokens;

  std::size_t num_predictions() const { return tokens.empty() ? 0 : tokens.size() - 1; }
};

using Batch = std::span<const Sequence>;

// Splits a token stream into windows of `unroll` predictions each. Windows
// overlap by one token (the last target of one window is the first input of
// the next), so every token after the first is predicted exactly once.
inline std::vector<Sequence> MakeSequences(std::span<const int> tokens, std::size_t unroll) {
  if (unroll == 0) throw ConfigError("unroll length must be positive");
  std::vector<Sequence> out;
  if (tokens.size() < 2) return out;
  for (std::size_t start = 0; start + 1 < tokens.size(); start += unroll) {
    const std::size_t end = std::min(tokens.size(), start + unroll + 1);
    out.push_back({tokens.subspan(start, end - start)});
  }
  return out;
}

// Windows view into the token buffer, which must outlive them.
std::vector<Sequence> MakeSequences(std::vector<int>&& tokens, std::size_t unroll) = delete;

struct LossAndGradient {
  double loss = 0.0;  // mean cross-entropy per predicted token
  ParamVector gradient;
};

// Sums over a batch; Metrics is derived from them.
struct EvalTotals {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

struct Metrics {
  double accuracy_top1 = 0.0;
  double loss = 0.0;
  std::size_t predictions = 0;
};

// Next-token model over a closed vocabulary. Loss is mean cross-entropy per
// predicted token. All members are pure and thread-safe.
template <typename M>
concept Model = requires(const M m, const ParamVector& p, Batch b, Rng& rng) {
  { m.shape() } -> std::convertible_to<Shape>;
  { m.vocab_size() } -> std::convertible_to<int>;
  { m.Initialize(rng) } -> std::same_as<ParamVector>;
  { m.Loss(p, b) } -> std::convertible_to<double>;
  { m.ComputeLossAndGradient(p, b) } -> std::same_as<LossAndGradient>;
  { m.Score(p, b) } -> std::same_as<EvalTotals>;
};

namespace internal {

template <Model M>
void CheckParams(const M& model, const ParamVector& params) {
  if (params.shape() != model.shape()) {
    throw ShapeError("parameters do not match the model shape");
  }
}

inline void CheckTokens(Batch batch, int vocab) {
  for (const auto& s : batch) {
    for (int t : s.tokens) {
      if (t < 0 || t >= vocab) {
        throw ConfigError("token " + std::to_string(t) + " outside vocabulary of size " +
                          std::to_string(vocab));
      }
    }
  }
}

}  // namespace internal

// accuracy_top1: fraction of positions where the arg-max of the predicted
// distribution equals the target (ties resolve to the lowest token id).
template <Model M>
Metrics Evaluate(const M& model, const ParamVector& params, Batch eval_set) {
  internal::CheckParams(model, params);
  const EvalTotals totals = model.Score(params, eval_set);
  if (totals.count == 0) throw ConfigError("evaluation set has no predictions");
  return {static_cast<double>(totals.correct) / static_cast<double>(totals.count),
          totals.loss_sum / static_cast<double>(totals.count), totals.count};
}

}  // namespace dpfed

#endif  // DPFED_MODEL_HPP_
