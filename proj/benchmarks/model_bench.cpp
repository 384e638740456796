// Copyright (c) 2026 The emoalign Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <benchmark/benchmark.h>

#include <random>

#include "emoalign/encoder.hpp"
#include "emoalign/finetune.hpp"
#include "emoalign/pretrain.hpp"

namespace {

using namespace emoalign;

Tensor frames(std::size_t T, std::size_t F) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  Tensor t = Tensor::zeros(T, F);
  for (double& v : t.data()) v = n(rng);
  return t;
}

// One masked-prediction step on a single sequence: forward, loss, backward.
void BM_EncoderStep(benchmark::State& state) {
  const auto T = static_cast<std::size_t>(state.range(0));
  const EncoderConfig cfg = EncoderConfig::desk(8);
  const ParameterSet params = init_encoder_params(cfg, 1);
  const Tensor x = frames(T, 8);
  std::vector<std::size_t> codes(T);
  for (std::size_t t = 0; t < T; ++t) codes[t] = t % cfg.num_clusters;
  std::mt19937_64 rng(2);
  const MaskSpec mask = sample_mask(T, 0.08, 10, rng);
  for (auto _ : state) {
    Graph g(&params);
    ForwardOptions o;
    o.mask = &mask;
    const auto out = encoder_forward(g, cfg, x, o);
    Var loss = mlm_objective(g, out.logits, codes, mask, 1.0, static_cast<double>(mask.masked_indices.size()), 1.0);
    g.backward(loss);
    ParameterSet grads = params.zeros_like();
    g.accumulate_param_grads(grads);
    benchmark::DoNotOptimize(grads);
  }
}
BENCHMARK(BM_EncoderStep)->Arg(30)->Arg(60)->Arg(120)->Unit(benchmark::kMicrosecond);

void BM_EncoderForward(benchmark::State& state) {
  const auto T = static_cast<std::size_t>(state.range(0));
  const EncoderConfig cfg = EncoderConfig::desk(8);
  const ParameterSet params = init_encoder_params(cfg, 1);
  const Tensor x = frames(T, 8);
  for (auto _ : state) {
    Graph g(&params);
    const auto out = encoder_forward(g, cfg, x);
    benchmark::DoNotOptimize(g.value(out.logits).data().data());
  }
}
BENCHMARK(BM_EncoderForward)->Arg(30)->Arg(120)->Unit(benchmark::kMicrosecond);

void BM_UtteranceClassifierStep(benchmark::State& state) {
  const EncoderConfig cfg = EncoderConfig::desk(8);
  ParameterSet params = init_encoder_params(cfg, 1);
  reset_ser_heads(params, cfg, 2);
  const Tensor x = frames(30, 8);
  const std::vector<bool> valid(30, true);
  const auto pooling = static_cast<Pooling>(state.range(0));
  for (auto _ : state) {
    Graph g(&params);
    Var loss = g.cross_entropy(utterance_logits(g, cfg, x, valid, pooling), {1});
    g.backward(loss);
    benchmark::DoNotOptimize(g.value(loss).data().data());
  }
  state.SetLabel(to_string(pooling));
}
BENCHMARK(BM_UtteranceClassifierStep)
    ->Arg(static_cast<int>(Pooling::attention))
    ->Arg(static_cast<int>(Pooling::average))
    ->Unit(benchmark::kMicrosecond);

}  // namespace
