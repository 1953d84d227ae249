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

// Trains the bigram model with DP-FedAvg on a small synthetic population and
// prints accuracy and the privacy spent.

#include <cstdio>

#include "dpfed/dataset.hpp"
#include "dpfed/fedtrain.hpp"
#include "dpfed/models/bigram_softmax.hpp"

int main() {
  dpfed::SynthesisConfig synth;
  synth.num_users = 200;
  synth.tokens_per_user = 400;
  synth.vocab_size = 20;
  synth.heterogeneity = 0.3;
  const dpfed::SyntheticData data = dpfed::SynthesizeDataset(synth);

  dpfed::TrainingConfig cfg;
  cfg.q = 20.0 / 200.0;
  cfg.weight_cap = 400;
  cfg.clip = dpfed::ClipConfig::Flat(1.0);
  cfg.noise_scale = 1.0;
  cfg.local.learning_rate = 1.0;
  cfg.rounds = 100;

  const dpfed::BigramSoftmax model(synth.vocab_size);
  dpfed::Rng init(7);
  const auto result = dpfed::RunTraining(model, cfg, data.train,
                                         dpfed::EvalSequences(data.eval, cfg.unroll),
                                         model.Initialize(init));
  for (const auto& log : result.logs) {
    if (log.eval) {
      std::printf("round %3llu  accuracy %.3f  epsilon %.3f\n",
                  static_cast<unsigned long long>(log.round), log.eval->accuracy_top1,
                  log.epsilon);
    }
  }
  return 0;
}
