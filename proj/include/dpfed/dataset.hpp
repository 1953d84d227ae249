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

// Per-user token datasets: synthesis, user weights and the JSON-lines file
// format.
//
// Dataset file (one JSON object per line, one line per user):
//   {"user_id": <int64>, "tokens": [<int>, ...]}
// Users may appear in any order; readers sort by user_id. A synthesized
// dataset directory holds train.jsonl, eval.jsonl and manifest.json.

#ifndef DPFED_DATASET_HPP_
#define DPFED_DATASET_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpfed/error.hpp"
#include "dpfed/model.hpp"
#include "dpfed/rng.hpp"
#include "dpfed/version.hpp"

namespace dpfed {

struct UserShard {
  std::int64_t user_id = 0;
  std::vector<int> tokens;
  double weight = 1.0;  // w_k = min(n_k / w_hat, 1)

  std::size_t num_examples() const { return tokens.size(); }
};

struct TokenDataset {
  std::vector<UserShard> users;  // sorted by user_id
  int vocab_size = 0;

  double TotalWeight() const {
    double w = 0.0;
    for (const auto& u : users) w += u.weight;
    return w;
  }

  std::size_t TotalTokens() const {
    std::size_t n = 0;
    for (const auto& u : users) n += u.tokens.size();
    return n;
  }
};

// w_k = min(n_k / weight_cap, 1) for every user.
inline void AssignWeights(TokenDataset& data, double weight_cap) {
  if (!(weight_cap > 0.0)) throw ConfigError("per-user example cap must be positive");
  for (auto& u : data.users) {
    u.weight = std::min(static_cast<double>(u.num_examples()) / weight_cap, 1.0);
  }
}

struct SynthesisConfig {
  std::int64_t num_users = 1000;
  std::size_t tokens_per_user = 1600;
  int vocab_size = 100;
  double heterogeneity = 0.0;  // 0: one shared chain, 1: fully user-specific
  std::uint64_t seed = 1;
  std::int64_t eval_users = 20;  // held-out users forming the evaluation set

  void Validate() const {
    if (num_users < 1) throw ConfigError("need at least one user");
    if (vocab_size < 2) throw ConfigError("vocabulary size must be >= 2");
    if (!(heterogeneity >= 0.0 && heterogeneity <= 1.0)) {
      throw ConfigError("heterogeneity must be in [0, 1]");
    }
    if (tokens_per_user < 2) throw ConfigError("users need at least two tokens");
    if (eval_users < 0) throw ConfigError("eval_users must be non-negative");
  }

  nlohmann::json ToJson() const {
    return {{"num_users", num_users},         {"tokens_per_user", tokens_per_user},
            {"vocab_size", vocab_size},       {"heterogeneity", heterogeneity},
            {"seed", seed},                   {"eval_users", eval_users}};
  }
};

struct SyntheticData {
  TokenDataset train;
  TokenDataset eval;
};

namespace internal {

// Row-stochastic V x V transition matrix.
using Chain = std::vector<std::vector<double>>;

// Shared chain: 0.7 on a fixed successor of each token, 0.3 spread uniformly.
inline Chain SharedChain(int v, Rng& rng) {
  std::vector<int> succ(v);
  std::iota(succ.begin(), succ.end(), 0);
  std::shuffle(succ.begin(), succ.end(), rng);
  Chain c(v, std::vector<double>(v, 0.3 / v));
  for (int i = 0; i < v; ++i) c[i][succ[i]] += 0.7;
  return c;
}

// User chain: 0.6 on a user-specific successor, 0.3 on the user's favourite
// token, 0.1 uniform. The favourite dominates the user's unigram histogram.
inline Chain UserChain(int v, int favourite, Rng& rng) {
  std::vector<int> succ(v);
  std::iota(succ.begin(), succ.end(), 0);
  std::shuffle(succ.begin(), succ.end(), rng);
  Chain c(v, std::vector<double>(v, 0.1 / v));
  for (int i = 0; i < v; ++i) {
    c[i][succ[i]] += 0.6;
    c[i][favourite] += 0.3;
  }
  return c;
}

inline std::vector<int> SampleUserTokens(const Chain& shared, const Chain& own, double h,
                                         std::size_t n, Rng& rng) {
  const int v = static_cast<int>(shared.size());
  std::vector<std::discrete_distribution<int>> rows;
  rows.reserve(v);
  std::vector<double> mix(v);
  for (int i = 0; i < v; ++i) {
    for (int j = 0; j < v; ++j) mix[j] = (1.0 - h) * shared[i][j] + h * own[i][j];
    rows.emplace_back(mix.begin(), mix.end());
  }
  std::vector<int> tokens(n);
  std::uniform_int_distribution<int> start(0, v - 1);
  tokens[0] = start(rng);
  for (std::size_t t = 1; t < n; ++t) tokens[t] = rows[tokens[t - 1]](rng);
  return tokens;
}

}  // namespace internal

// Users 0..K-1 form the training set, users K..K+eval_users-1 the held-out
// evaluation set. Every user draws from (1 - h) * shared + h * own chain.
// Favourite tokens cycle through a random permutation of the vocabulary, so
// consecutive users never share one. Weights are left at 1.
inline SyntheticData SynthesizeDataset(const SynthesisConfig& cfg) {
  cfg.Validate();
  const int v = cfg.vocab_size;
  Rng global = MakeSubstream(cfg.seed, StreamPurpose::kSynthesis, 0, 0);
  const internal::Chain shared = internal::SharedChain(v, global);
  std::vector<int> favourites(v);
  std::iota(favourites.begin(), favourites.end(), 0);
  std::shuffle(favourites.begin(), favourites.end(), global);

  SyntheticData out;
  out.train.vocab_size = v;
  out.eval.vocab_size = v;
  const std::int64_t total = cfg.num_users + cfg.eval_users;
  for (std::int64_t id = 0; id < total; ++id) {
    // Per-user stream: users can be generated independently of each other.
    Rng rng = MakeSubstream(cfg.seed, StreamPurpose::kSynthesis, 1, static_cast<std::uint64_t>(id));
    const internal::Chain own = internal::UserChain(v, favourites[id % v], rng);
    UserShard shard{id, internal::SampleUserTokens(shared, own, cfg.heterogeneity,
                                                   cfg.tokens_per_user, rng),
                    1.0};
    (id < cfg.num_users ? out.train : out.eval).users.push_back(std::move(shard));
  }
  return out;
}

// Flattens every user's windows into one evaluation batch. The returned
// sequences point into `data`.
inline std::vector<Sequence> EvalSequences(const TokenDataset& data, std::size_t unroll) {
  std::vector<Sequence> out;
  for (const auto& u : data.users) {
    auto s = MakeSequences(u.tokens, unroll);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

inline void WriteJsonLines(const TokenDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& u : data.users) {
    out << nlohmann::json{{"user_id", u.user_id}, {"tokens", u.tokens}}.dump() << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

// Reads a dataset file; vocab_size is max token + 1 unless given.
inline TokenDataset ReadJsonLines(const std::filesystem::path& path, int vocab_size = 0) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset " + path.string());
  TokenDataset data;
  std::string line;
  std::size_t line_no = 0;
  int max_token = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      UserShard u;
      u.user_id = j.at("user_id").get<std::int64_t>();
      u.tokens = j.at("tokens").get<std::vector<int>>();
      for (int t : u.tokens) {
        if (t < 0) throw ConfigError("negative token id");
        max_token = std::max(max_token, t);
      }
      data.users.push_back(std::move(u));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::sort(data.users.begin(), data.users.end(),
            [](const UserShard& a, const UserShard& b) { return a.user_id < b.user_id; });
  for (std::size_t i = 1; i < data.users.size(); ++i) {
    if (data.users[i].user_id == data.users[i - 1].user_id) {
      throw ConfigError(path.string() + ": duplicate user_id " +
                        std::to_string(data.users[i].user_id));
    }
  }
  data.vocab_size = vocab_size > 0 ? vocab_size : max_token + 1;
  if (max_token >= data.vocab_size) {
    throw ConfigError(path.string() + ": token " + std::to_string(max_token) +
                      " outside vocabulary of size " + std::to_string(data.vocab_size));
  }
  return data;
}

// Writes train.jsonl, eval.jsonl and manifest.json into dir.
inline nlohmann::json WriteSyntheticDataset(const SyntheticData& data, const SynthesisConfig& cfg,
                                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  WriteJsonLines(data.train, dir / "train.jsonl");
  WriteJsonLines(data.eval, dir / "eval.jsonl");
  nlohmann::json manifest = {
      {"format", "dpfed.dataset.v1"},
      {"generator", kVersion},
      {"synthesis", cfg.ToJson()},
      {"vocab_size", data.train.vocab_size},
      {"num_users", data.train.users.size()},
      {"total_tokens", data.train.TotalTokens()},
      {"eval_users", data.eval.users.size()},
      {"eval_tokens", data.eval.TotalTokens()},
  };
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
  if (!out) throw Error("failed writing manifest in " + dir.string());
  return manifest;
}

}  // namespace dpfed

#endif  // DPFED_DATASET_HPP_
