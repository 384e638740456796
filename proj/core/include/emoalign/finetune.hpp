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
#include <vector>

#include <nlohmann/json.hpp>

#include "emoalign/autograd.hpp"
#include "emoalign/cluster.hpp"
#include "emoalign/corpus.hpp"
#include "emoalign/encoder.hpp"
#include "emoalign/eval.hpp"
#include "emoalign/pretrain.hpp"

namespace emoalign {

// Utterance-level pooling result. weights has one entry per input frame;
// invalid frames get weight 0.
struct PooledOutput {
  Tensor z;  // 1 x D
  std::vector<double> weights;
  std::size_t frames = 0;  // number of valid frames
};

// Soft attention: a_i = softmax over valid frames of tanh(W x_i), z = sum a_i x_i.
// W is 1 x D. An empty `valid` marks every frame valid.
PooledOutput attention_pool(const Tensor& x, const Tensor& W, const std::vector<bool>& valid = {});
Tensor average_pool(const Tensor& x, const std::vector<bool>& valid = {});

// Graph forms. `weights`, when given, receives the 1 x N attention row.
Var attention_pool(Graph& g, Var x, Var W, const std::vector<bool>& valid, Var* weights = nullptr);
Var average_pool(Graph& g, Var x, const std::vector<bool>& valid);

inline constexpr std::string_view kHeadPrefix = "head.";
inline constexpr std::string_view kAttentionHeadWeight = "head.attention.weight";
inline constexpr std::string_view kClassifierWeight = "head.classifier.weight";
inline constexpr std::string_view kClassifierBias = "head.classifier.bias";

// Drops any existing SER heads and adds fresh ones: the 1 x D attention
// vector and the D x 4 classifier.
void reset_ser_heads(ParameterSet& params, const EncoderConfig& cfg, std::uint64_t seed);

// Classifier logits (1 x 4) for one utterance.
Var utterance_logits(Graph& g, const EncoderConfig& cfg, const Tensor& input,
                     const std::vector<bool>& valid, Pooling pooling, Var* weights = nullptr);

struct FinetuneConfig {
  Pooling pooling = Pooling::attention;
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  // Control run: train labels, and the validation labels used to pick
  // the epoch, are permuted before training.
  bool shuffle_train_labels = false;

  static FinetuneConfig desk();
  static FinetuneConfig full_scale();
  void validate() const;
};

void to_json(nlohmann::json& j, const FinetuneConfig& c);
void from_json(const nlohmann::json& j, FinetuneConfig& c);

struct FinetuneResult {
  ParameterSet params;  // parameters of the selected epoch
  Metrics test;
  Metrics validation;
  std::size_t best_epoch = 0;  // 1-based
  std::vector<double> val_ua;
  std::vector<double> val_loss;  // mean cross-entropy per epoch
  std::vector<double> train_loss;  // mean per epoch
};

// Trains encoder and heads with cross-entropy on the fold's training
// speakers, keeps the epoch with the best validation UA (lowest
// validation loss among ties, then earliest) and reports test metrics
// for it. The SER heads must exist.
FinetuneResult run_finetune(ParameterSet params, const EncoderConfig& cfg, const Corpus& corpus,
                            const FoldPlan& fold, const FinetuneConfig& config);

std::vector<Emotion> predict(const ParameterSet& params, const EncoderConfig& cfg,
                             const Corpus& corpus, const std::vector<std::size_t>& indices,
                             Pooling pooling);

// Mean attention mass placed on frames whose frame-level truth matches
// the utterance label. Utterances without frame truth are skipped.
double attention_alignment(const ParameterSet& params, const EncoderConfig& cfg,
                           const Corpus& corpus, const std::vector<std::size_t>& indices);

struct TaptConfig {
  PretrainConfig pretrain;
  FinetuneConfig finetune;

  static TaptConfig desk();
  static TaptConfig full_scale();
  void validate() const;
};

void to_json(nlohmann::json& j, const TaptConfig& c);
void from_json(const nlohmann::json& j, TaptConfig& c);

struct TaptResult {
  ParameterSet params;
  std::vector<double> loss_trajectory;
  FinetuneResult finetune;
};

// Continued masked prediction on base-feature pseudo labels of the
// fold's training utterances, then average-pooling fine-tuning.
TaptResult run_tapt(ParameterSet params, const EncoderConfig& cfg, const Corpus& corpus,
                    const FoldPlan& fold, const Codebook& base_codebook, const TaptConfig& config);

// Pseudo labels from base features for the given utterances.
std::vector<PseudoLabelSeq> base_feature_labels(const Codebook& codebook, const EncoderConfig& cfg,
                                                const Corpus& corpus,
                                                const std::vector<std::size_t>& indices);

}  // namespace emoalign
