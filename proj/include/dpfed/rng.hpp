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

#ifndef DPFED_RNG_HPP_
#define DPFED_RNG_HPP_

#include <cstdint>
#include <random>

namespace dpfed {

using Rng = std::mt19937_64;

// What a random stream is used for. Each purpose gets its own substream so
// that, e.g., adding an evaluation pass never shifts the noise draws.
enum class StreamPurpose : std::uint64_t {
  kSampling = 1,
  kNoise = 2,
  kUserLocal = 3,
  kInit = 4,
  kSynthesis = 5,
  kOracle = 6,
};

namespace internal {

constexpr std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace internal

// Seed for the substream identified by (seed, purpose, round, index). The
// derivation is a pure function, so a stream can be rebuilt at any point of
// a run (resume, parallel workers) without replaying earlier draws.
constexpr std::uint64_t SubstreamSeed(std::uint64_t seed, StreamPurpose purpose,
                                      std::uint64_t round = 0,
                                      std::uint64_t index = 0) {
  std::uint64_t h = internal::SplitMix64(seed);
  h = internal::SplitMix64(h ^ static_cast<std::uint64_t>(purpose));
  h = internal::SplitMix64(h ^ round);
  h = internal::SplitMix64(h ^ index);
  return h;
}

inline Rng MakeSubstream(std::uint64_t seed, StreamPurpose purpose,
                         std::uint64_t round = 0, std::uint64_t index = 0) {
  return Rng(SubstreamSeed(seed, purpose, round, index));
}

}  // namespace dpfed

#endif  // DPFED_RNG_HPP_
