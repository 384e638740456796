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


#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoalign/autograd.hpp"
#include "emoalign/cluster.hpp"
#include "emoalign/encoder.hpp"

namespace emoalign {

struct PretrainConfig {
  double alpha = 1.0;  // weight of the masked-frame term
  std::size_t steps = 2000;
  std::size_t warmup_steps = 200;
  double learning_rate = 5e-4;
  std::size_t batch_size = 8;
  double mask_prob = 0.08;
  std::size_t span_length = 10;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  bool freeze_extractor = true;
  std::size_t checkpoint_interval = 0;  // 0: no intermediate checkpoints
  std::filesystem::path checkpoint_dir;

  static PretrainConfig desk();
  static PretrainConfig full_scale();
  void validate() const;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

struct MlmLoss {
  double total = 0.0;     // alpha * masked + (1 - alpha) * unmasked
  double masked = 0.0;    // mean cross-entropy over masked frames
  double unmasked = 0.0;  // mean cross-entropy over unmasked frames
};

// Loss for one sequence. An empty masked (or unmasked) set contributes 0.
MlmLoss mlm_loss(const Tensor& logits, const std::vector<std::size_t>& codes, const MaskSpec& mask,
                 double alpha);

// Differentiable form with explicit normalizers, so batches can share
// per-batch means: alpha * CE_masked / masked_norm + (1 - alpha) *
// CE_unmasked / unmasked_norm, over the first codes.size() rows of
// logits. A term whose weight or normalizer is zero is left out of the
// graph. masked_sum / unmasked_sum receive the raw cross-entropy sums.
Var mlm_objective(Graph& g, Var logits, const std::vector<std::size_t>& codes, const MaskSpec& mask,
                  double alpha, double masked_norm, double unmasked_norm,
                  double* masked_sum = nullptr, double* unmasked_sum = nullptr);

// One training sequence with its frame-level targets.
struct PretrainExample {
  const Utterance* utterance = nullptr;
  const std::vector<std::size_t>* codes = nullptr;
};

// Pairs each selected utterance with its pseudo labels. Throws
// CoverageError for missing utterances and LabelError for a length or
// range mismatch against the post-extractor frame count.
std::vector<PretrainExample> make_examples(const Corpus& corpus,
                                           const std::vector<std::size_t>& utterance_indices,
                                           const std::vector<PseudoLabelSeq>& labels,
                                           const EncoderConfig& cfg);

struct PretrainResult {
  ParameterSet params;
  std::vector<double> loss_trajectory;  // L per step
  std::vector<std::filesystem::path> checkpoints;
};

PretrainResult run_pretrain(ParameterSet params, const EncoderConfig& cfg,
                            const std::vector<PretrainExample>& data, const PretrainConfig& config);

// Accuracy of argmax cluster predictions at masked frames, with masks
// drawn from (mask_prob, span_length, seed). Sequences whose sampled
// mask is empty get their middle frame masked.
double masked_prediction_accuracy(const ParameterSet& params, const EncoderConfig& cfg,
                                  const std::vector<PretrainExample>& data, double mask_prob,
                                  std::size_t span_length, std::uint64_t seed);

// Trailing-window mean of a trajectory ending at `step` (1-based).
double smoothed_loss(const std::vector<double>& trajectory, std::size_t step, std::size_t window);

// "step\tloss" lines after a header, values printed round-trip exact.
std::string encode_loss_trajectory(const std::vector<double>& trajectory);

}  // namespace emoalign
