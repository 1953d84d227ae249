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

#ifndef DPFED_MODELS_BIGRAM_SOFTMAX_HPP_
#define DPFED_MODELS_BIGRAM_SOFTMAX_HPP_

#include <cstddef>
#include <random>
#include <vector>

#include "dpfed/model.hpp"
#include "dpfed/models/softmax_util.hpp"

namespace dpfed {

// logits(next | prev) = embedding[prev, :] + bias. Log-linear in the
// parameters, so the loss is convex.
class BigramSoftmax {
 public:
  explicit BigramSoftmax(int vocab_size) : vocab_(vocab_size) {
    if (vocab_size < 2) throw ConfigError("vocabulary size must be >= 2");
  }

  int vocab_size() const { return vocab_; }

  Shape shape() const {
    const auto v = static_cast<std::size_t>(vocab_);
    return {{"embedding", v * v}, {"bias", v}};
  }

  // Zero parameters: every prediction starts uniform.
  ParamVector Initialize(Rng&) const { return ParamVector::Zeros(shape()); }

  double Loss(const ParamVector& params, Batch batch) const {
    return Forward(params, batch, nullptr).loss_sum / Count(batch);
  }

  LossAndGradient ComputeLossAndGradient(const ParamVector& params, Batch batch) const {
    ParamVector grad = ParamVector::Zeros(shape());
    const double n = Count(batch);
    const EvalTotals t = Forward(params, batch, &grad);
    grad *= 1.0 / n;
    return {t.loss_sum / n, std::move(grad)};
  }

  EvalTotals Score(const ParamVector& params, Batch batch) const {
    return Forward(params, batch, nullptr);
  }

 private:
  double Count(Batch batch) const {
    std::size_t n = 0;
    for (const auto& s : batch) n += s.num_predictions();
    if (n == 0) throw ConfigError("batch has no predictions");
    return static_cast<double>(n);
  }

  // Accumulates the un-normalized gradient into *grad when given.
  EvalTotals Forward(const ParamVector& params, Batch batch, ParamVector* grad) const {
    internal::CheckParams(*this, params);
    internal::CheckTokens(batch, vocab_);
    const auto v = static_cast<std::size_t>(vocab_);
    const auto emb = params.values(0);
    const auto bias = params.values(1);
    std::vector<double> probs(v);
    EvalTotals totals;
    for (const auto& seq : batch) {
      for (std::size_t t = 0; t + 1 < seq.tokens.size(); ++t) {
        const auto prev = static_cast<std::size_t>(seq.tokens[t]);
        const auto next = static_cast<std::size_t>(seq.tokens[t + 1]);
        for (std::size_t j = 0; j < v; ++j) probs[j] = emb[prev * v + j] + bias[j];
        const double target_logit = probs[next];
        const double log_norm = internal::SoftmaxInPlace(probs);
        totals.loss_sum += log_norm - target_logit;
        totals.correct += internal::ArgMax(probs) == next ? 1 : 0;
        ++totals.count;
        if (grad != nullptr) {
          auto g_emb = grad->mutable_values(0);
          auto g_bias = grad->mutable_values(1);
          for (std::size_t j = 0; j < v; ++j) {
            const double d = probs[j] - (j == next ? 1.0 : 0.0);
            g_emb[prev * v + j] += d;
            g_bias[j] += d;
          }
        }
      }
    }
    return totals;
  }

  int vocab_;
};

}  // namespace dpfed

#endif  // DPFED_MODELS_BIGRAM_SOFTMAX_HPP_
