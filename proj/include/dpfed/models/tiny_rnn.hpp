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

#ifndef DPFED_MODELS_TINY_RNN_HPP_
#define DPFED_MODELS_TINY_RNN_HPP_

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "dpfed/model.hpp"
#include "dpfed/models/softmax_util.hpp"

namespace dpfed {

// Single tanh recurrent cell with the output projection tied to the input
// embedding:
//   h_t = tanh(E[x_t] + R h_{t-1} + b_h),   h_0 = 0 at the start of a window
//   logits_t = E h_t + b_o
// Layers: embedding (V x d), recurrent (d x d), hidden_bias (d),
// output_bias (V). The embedding receives gradient from both ends, so its
// update norm is typically far larger than the recurrent layer's.
class TinyRnn {
 public:
  TinyRnn(int vocab_size, int hidden_size) : vocab_(vocab_size), hidden_(hidden_size) {
    if (vocab_size < 2) throw ConfigError("vocabulary size must be >= 2");
    if (hidden_size < 1) throw ConfigError("hidden size must be >= 1");
  }

  int vocab_size() const { return vocab_; }
  int hidden_size() const { return hidden_; }

  Shape shape() const {
    const auto v = static_cast<std::size_t>(vocab_);
    const auto d = static_cast<std::size_t>(hidden_);
    return {{"embedding", v * d}, {"recurrent", d * d}, {"hidden_bias", d}, {"output_bias", v}};
  }

  ParamVector Initialize(Rng& rng) const {
    ParamVector p = ParamVector::Zeros(shape());
    std::normal_distribution<double> normal(0.0, 1.0);
    const double emb_scale = 1.0 / std::sqrt(static_cast<double>(hidden_));
    for (double& x : p.mutable_values(0)) x = emb_scale * normal(rng);
    for (double& x : p.mutable_values(1)) x = 0.5 * emb_scale * normal(rng);
    return p;
  }

  double Loss(const ParamVector& params, Batch batch) const {
    const std::size_t n = Count(batch);
    return Run(params, batch, nullptr).loss_sum / static_cast<double>(n);
  }

  LossAndGradient ComputeLossAndGradient(const ParamVector& params, Batch batch) const {
    const double n = static_cast<double>(Count(batch));
    ParamVector grad = ParamVector::Zeros(shape());
    const EvalTotals t = Run(params, batch, &grad);
    grad *= 1.0 / n;
    return {t.loss_sum / n, std::move(grad)};
  }

  EvalTotals Score(const ParamVector& params, Batch batch) const {
    return Run(params, batch, nullptr);
  }

 private:
  static std::size_t Count(Batch batch) {
    std::size_t n = 0;
    for (const auto& s : batch) n += s.num_predictions();
    if (n == 0) throw ConfigError("batch has no predictions");
    return n;
  }

  // Forward pass over every window; with grad != nullptr also runs
  // backpropagation through time and accumulates summed (not averaged)
  // gradients.
  EvalTotals Run(const ParamVector& params, Batch batch, ParamVector* grad) const {
    internal::CheckParams(*this, params);
    internal::CheckTokens(batch, vocab_);
    const auto v = static_cast<std::size_t>(vocab_);
    const auto d = static_cast<std::size_t>(hidden_);
    const auto emb = params.values(0);
    const auto rec = params.values(1);
    const auto bh = params.values(2);
    const auto bo = params.values(3);

    EvalTotals totals;
    std::vector<double> hs;     // h_1..h_n, row-major, n x d
    std::vector<double> probs;  // softmax outputs, n x v
    std::vector<double> logits(v);
    for (const auto& seq : batch) {
      const std::size_t n = seq.num_predictions();
      if (n == 0) continue;
      hs.assign(n * d, 0.0);
      probs.assign(n * v, 0.0);
      for (std::size_t t = 0; t < n; ++t) {
        const auto x = static_cast<std::size_t>(seq.tokens[t]);
        const auto y = static_cast<std::size_t>(seq.tokens[t + 1]);
        double* h = &hs[t * d];
        const double* h_prev = t == 0 ? nullptr : &hs[(t - 1) * d];
        for (std::size_t i = 0; i < d; ++i) {
          double a = emb[x * d + i] + bh[i];
          if (h_prev != nullptr) {
            for (std::size_t k = 0; k < d; ++k) a += rec[i * d + k] * h_prev[k];
          }
          h[i] = std::tanh(a);
        }
        for (std::size_t j = 0; j < v; ++j) {
          double l = bo[j];
          for (std::size_t i = 0; i < d; ++i) l += emb[j * d + i] * h[i];
          logits[j] = l;
        }
        const double target_logit = logits[y];
        const double log_norm = internal::SoftmaxInPlace(logits);
        totals.loss_sum += log_norm - target_logit;
        totals.correct += internal::ArgMax(logits) == y ? 1 : 0;
        ++totals.count;
        std::copy(logits.begin(), logits.end(), probs.begin() + static_cast<std::ptrdiff_t>(t * v));
      }
      if (grad != nullptr) Backward(params, seq, hs, probs, *grad);
    }
    return totals;
  }

  void Backward(const ParamVector& params, const Sequence& seq, const std::vector<double>& hs,
                const std::vector<double>& probs, ParamVector& grad) const {
    const auto v = static_cast<std::size_t>(vocab_);
    const auto d = static_cast<std::size_t>(hidden_);
    const auto emb = params.values(0);
    const auto rec = params.values(1);
    auto g_emb = grad.mutable_values(0);
    auto g_rec = grad.mutable_values(1);
    auto g_bh = grad.mutable_values(2);
    auto g_bo = grad.mutable_values(3);
    const std::size_t n = seq.num_predictions();

    std::vector<double> dh(d, 0.0);     // gradient flowing into h_t
    std::vector<double> carry(d, 0.0);  // R^T da_{t+1}
    std::vector<double> da(d);
    for (std::size_t t = n; t-- > 0;) {
      const auto x = static_cast<std::size_t>(seq.tokens[t]);
      const auto y = static_cast<std::size_t>(seq.tokens[t + 1]);
      const double* h = &hs[t * d];
      const double* p = &probs[t * v];
      dh = carry;
      for (std::size_t j = 0; j < v; ++j) {
        const double dl = p[j] - (j == y ? 1.0 : 0.0);
        g_bo[j] += dl;
        for (std::size_t i = 0; i < d; ++i) {
          g_emb[j * d + i] += dl * h[i];
          dh[i] += dl * emb[j * d + i];
        }
      }
      for (std::size_t i = 0; i < d; ++i) da[i] = dh[i] * (1.0 - h[i] * h[i]);
      for (std::size_t i = 0; i < d; ++i) {
        g_emb[x * d + i] += da[i];
        g_bh[i] += da[i];
      }
      std::fill(carry.begin(), carry.end(), 0.0);
      if (t > 0) {
        const double* h_prev = &hs[(t - 1) * d];
        for (std::size_t i = 0; i < d; ++i) {
          for (std::size_t k = 0; k < d; ++k) {
            g_rec[i * d + k] += da[i] * h_prev[k];
            carry[k] += rec[i * d + k] * da[i];
          }
        }
      }
    }
  }

  int vocab_;
  int hidden_;
};

}  // namespace dpfed

#endif  // DPFED_MODELS_TINY_RNN_HPP_
