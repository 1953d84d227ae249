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

#ifndef DPFED_MODELS_SOFTMAX_UTIL_HPP_
#define DPFED_MODELS_SOFTMAX_UTIL_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>

namespace dpfed::internal {

// In-place softmax; returns log(sum exp(logits)).
inline double SoftmaxInPlace(std::span<double> logits) {
  const double max = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& x : logits) {
    x = std::exp(x - max);
    sum += x;
  }
  for (double& x : logits) x /= sum;
  return max + std::log(sum);
}

inline std::size_t ArgMax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace dpfed::internal

#endif  // DPFED_MODELS_SOFTMAX_UTIL_HPP_
