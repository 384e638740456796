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


#include "emoalign/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "emoalign/error.hpp"
#include "emoalign/optimizer.hpp"
#include "emoalign/training.hpp"

namespace emoalign {

// ---------------------------------------------------------------------------
// Pooling

namespace {

std::size_t count_valid(std::size_t n, const std::vector<bool>& valid) {
  if (valid.empty()) return n;
  if (valid.size() != n) {
    throw DimensionError(fmt::format("pooling: validity mask of length {} for {} frames", valid.size(), n));
  }
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
}

}  // namespace

Var attention_pool(Graph& g, Var x, Var W, const std::vector<bool>& valid, Var* weights) {
  const Tensor& X = g.value(x);
  const Tensor& w = g.value(W);
  if (w.rows() != 1 || w.cols() != X.cols()) {
    throw DimensionError(fmt::format("attention_pool: W is {} for frames {}", w.shape_str(), X.shape_str()));
  }
  if (X.rows() == 0 || count_valid(X.rows(), valid) == 0) {
    throw EmptyUtteranceError("attention_pool: no valid frames");
  }
  Var scores = g.transpose(g.tanh(g.matmul_nt(x, W)));  // 1 x N
  Var alpha = g.softmax_rows(scores, valid);
  if (weights) *weights = alpha;
  return g.matmul(alpha, x);
}

Var average_pool(Graph& g, Var x, const std::vector<bool>& valid) {
  const Tensor& X = g.value(x);
  const std::size_t n = X.rows() == 0 ? 0 : count_valid(X.rows(), valid);
  if (n == 0) throw EmptyUtteranceError("average_pool: no valid frames");
  Tensor row = Tensor::zeros(1, X.rows());
  const double w = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < X.rows(); ++i) row(0, i) = (valid.empty() || valid[i]) ? w : 0.0;
  return g.matmul(g.constant(std::move(row)), x);
}

PooledOutput attention_pool(const Tensor& x, const Tensor& W, const std::vector<bool>& valid) {
  Graph g;
  Var alpha;
  Var z = attention_pool(g, g.constant(x), g.constant(W), valid, &alpha);
  PooledOutput out;
  out.z = g.value(z);
  const auto a = g.value(alpha).data();
  out.weights.assign(a.begin(), a.end());
  out.frames = count_valid(x.rows(), valid);
  return out;
}

Tensor average_pool(const Tensor& x, const std::vector<bool>& valid) {
  Graph g;
  return g.value(average_pool(g, g.constant(x), valid));
}

// ---------------------------------------------------------------------------
// Heads

void reset_ser_heads(ParameterSet& params, const EncoderConfig& cfg, std::uint64_t seed) {
  params.erase_prefix(kHeadPrefix);
  std::mt19937_64 rng(seed ^ 0x5e4a11ce5eedULL);
  const std::size_t D = cfg.embed_dim;
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(D)));
  Tensor w = Tensor::zeros(1, D);
  for (double& v : w.data()) v = gauss(rng);
  Tensor c = Tensor::zeros(D, kNumEmotions);
  for (double& v : c.data()) v = gauss(rng);
  params.add(std::string(kAttentionHeadWeight), std::move(w));
  params.add(std::string(kClassifierWeight), std::move(c));
  params.add(std::string(kClassifierBias), Tensor::zeros(1, kNumEmotions));
}

Var utterance_logits(Graph& g, const EncoderConfig& cfg, const Tensor& input,
                     const std::vector<bool>& valid, Pooling pooling, Var* weights) {
  ForwardOptions opts;
  opts.valid = valid.empty() ? nullptr : &valid;
  opts.logits = false;
  const EncoderOutput enc = encoder_forward(g, cfg, input, opts);
  Var z = pooling == Pooling::attention
              ? attention_pool(g, enc.final, g.param(kAttentionHeadWeight), valid, weights)
              : average_pool(g, enc.final, valid);
  return g.add_row(g.matmul(z, g.param(kClassifierWeight)), g.param(kClassifierBias));
}

// ---------------------------------------------------------------------------
// Fine-tuning

FinetuneConfig FinetuneConfig::desk() { return FinetuneConfig{}; }

FinetuneConfig FinetuneConfig::full_scale() {
  FinetuneConfig c;
  c.epochs = 40;
  c.learning_rate = 1e-4;
  c.batch_size = 64;
  return c;
}

void FinetuneConfig::validate() const {
  if (epochs == 0) throw ConfigError("finetune: epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("finetune: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("finetune: learning_rate must be positive");
}

void to_json(nlohmann::json& j, const FinetuneConfig& c) {
  j = {{"pooling", to_string(c.pooling)},
       {"epochs", c.epochs},
       {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"weight_decay", c.weight_decay},
       {"warmup_steps", c.warmup_steps},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"shuffle_train_labels", c.shuffle_train_labels}};
}

void from_json(const nlohmann::json& j, FinetuneConfig& c) {
  FinetuneConfig d;
  c.pooling = pooling_from_string(j.value("pooling", to_string(d.pooling)));
  c.epochs = j.value("epochs", d.epochs);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.shuffle_train_labels = j.value("shuffle_train_labels", d.shuffle_train_labels);
}

namespace {

std::size_t argmax_row(const Tensor& t) {
  const auto d = t.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

std::vector<Emotion> truth_of(const Corpus& corpus, const std::vector<std::size_t>& indices) {
  std::vector<Emotion> out;
  for (std::size_t i : indices) out.push_back(corpus.utterances.at(i).label);
  return out;
}

}  // namespace

namespace {

// Classifier logits (1 x 4) per utterance.
std::vector<Tensor> utterance_scores(const ParameterSet& params, const EncoderConfig& cfg,
                                     const Corpus& corpus, const std::vector<std::size_t>& indices,
                                     Pooling pooling) {
  std::vector<Tensor> out(indices.size());
  parallel_for(indices.size(), [&](std::size_t k) {
    Graph g(&params);
    out[k] = g.value(utterance_logits(g, cfg, corpus.utterances.at(indices[k]).frames, {}, pooling));
  });
  return out;
}

double mean_cross_entropy(const std::vector<Tensor>& scores, const std::vector<Emotion>& truth) {
  double total = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const auto row = scores[k].data();
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - m);
    total += m + std::log(z) - row[index_of(truth[k])];
  }
  return total / static_cast<double>(scores.size());
}

std::vector<Emotion> argmax_labels(const std::vector<Tensor>& scores) {
  std::vector<Emotion> out;
  out.reserve(scores.size());
  for (const auto& s : scores) out.push_back(emotion_from_index(argmax_row(s)));
  return out;
}

}  // namespace

std::vector<Emotion> predict(const ParameterSet& params, const EncoderConfig& cfg,
                             const Corpus& corpus, const std::vector<std::size_t>& indices,
                             Pooling pooling) {
  return argmax_labels(utterance_scores(params, cfg, corpus, indices, pooling));
}

double attention_alignment(const ParameterSet& params, const EncoderConfig& cfg,
                           const Corpus& corpus, const std::vector<std::size_t>& indices) {
  double mass = 0.0;
  std::size_t counted = 0;
  for (std::size_t i : indices) {
    const Utterance& u = corpus.utterances.at(i);
    Graph g(&params);
    Var weights;
    utterance_logits(g, cfg, u.frames, {}, Pooling::attention, &weights);
    const Tensor& a = g.value(weights);
    if (u.frame_truth.size() != a.cols()) continue;
    double m = 0.0;
    for (std::size_t t = 0; t < a.cols(); ++t) {
      if (u.frame_truth[t] == u.label) m += a(0, t);
    }
    mass += m;
    ++counted;
  }
  return counted ? mass / static_cast<double>(counted) : 0.0;
}

FinetuneResult run_finetune(ParameterSet params, const EncoderConfig& cfg, const Corpus& corpus,
                            const FoldPlan& fold, const FinetuneConfig& config) {
  config.validate();
  const FoldPartition part = partition(corpus, fold);
  if (part.train.empty() || part.val.empty() || part.test.empty()) {
    throw FoldError(fmt::format("fold {}: empty partition (train {}, val {}, test {})", fold.fold_index,
                                part.train.size(), part.val.size(), part.test.size()));
  }
  for (auto name : {kAttentionHeadWeight, kClassifierWeight, kClassifierBias}) {
    if (!params.contains(name)) throw ConfigError(fmt::format("finetune: missing head parameter '{}'", name));
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> labels;
  std::vector<std::size_t> lengths;
  for (std::size_t i : part.train) {
    labels.push_back(index_of(corpus.utterances[i].label));
    lengths.push_back(corpus.utterances[i].num_frames());
  }
  // The control run must stay blind to the truth end to end: selecting the
  // epoch on true validation labels would leak it back in.
  std::vector<Emotion> val_truth = truth_of(corpus, part.val);
  if (config.shuffle_train_labels) {
    std::shuffle(labels.begin(), labels.end(), rng);
    std::shuffle(val_truth.begin(), val_truth.end(), rng);
  }

  AdamWConfig opt_cfg;
  opt_cfg.learning_rate = config.learning_rate;
  opt_cfg.beta1 = config.beta1;
  opt_cfg.beta2 = config.beta2;
  opt_cfg.weight_decay = config.weight_decay;
  opt_cfg.warmup_steps = config.warmup_steps;
  opt_cfg.schedule = config.warmup_steps > 0 ? LrSchedule::linear_warmup : LrSchedule::constant;
  AdamW optimizer(opt_cfg, params);
  std::vector<std::string_view> frozen = {kMlmHeadPrefix};
  if (config.pooling == Pooling::average) frozen.push_back(kAttentionHeadWeight);
  optimizer.set_trainable(trainable_mask(params, frozen));

  FinetuneResult result;
  result.params = params;
  double best_ua = -1.0;
  double best_loss = INFINITY;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const auto& batch : bucket_batches(lengths, config.batch_size, rng)) {
      std::vector<const Tensor*> inputs;
      for (std::size_t b : batch) inputs.push_back(&corpus.utterances[part.train[b]].frames);
      const PaddedBatch padded = pad_batch(cfg, inputs);
      ParameterSet grads = params.zeros_like();
      for (std::size_t j = 0; j < batch.size(); ++j) {
        Graph g(&params);
        Var logits = utterance_logits(g, cfg, padded.inputs[j], padded.valid[j], config.pooling);
        Var ce = g.cross_entropy(logits, {labels[batch[j]]});
        loss_sum += g.value(ce).item();
        g.backward(g.scale(ce, 1.0 / static_cast<double>(batch.size())));
        g.accumulate_param_grads(grads);
      }
      optimizer.step(params, grads);
    }
    result.train_loss.push_back(loss_sum / static_cast<double>(part.train.size()));

    const auto scores = utterance_scores(params, cfg, corpus, part.val, config.pooling);
    const Metrics val = compute_metrics(val_truth, argmax_labels(scores));
    const double val_loss = mean_cross_entropy(scores, val_truth);
    result.val_ua.push_back(val.ua);
    result.val_loss.push_back(val_loss);
    // Ties on UA go to the lower validation loss; a small validation split
    // saturates early, and the first saturated epoch is rarely the best.
    if (val.ua > best_ua || (val.ua == best_ua && val_loss < best_loss)) {
      best_ua = val.ua;
      best_loss = val_loss;
      result.best_epoch = epoch;
      result.params = params;
      result.validation = val;
    }
  }
  result.test = compute_metrics(truth_of(corpus, part.test),
                                predict(result.params, cfg, corpus, part.test, config.pooling));
  return result;
}

// ---------------------------------------------------------------------------
// TAPT

TaptConfig TaptConfig::desk() {
  TaptConfig c;
  c.finetune.pooling = Pooling::average;
  return c;
}

TaptConfig TaptConfig::full_scale() {
  TaptConfig c;
  c.pretrain = PretrainConfig::full_scale();
  c.finetune = FinetuneConfig::full_scale();
  c.finetune.pooling = Pooling::average;
  return c;
}

void TaptConfig::validate() const {
  pretrain.validate();
  finetune.validate();
  if (finetune.pooling != Pooling::average) throw ConfigError("tapt: fine-tuning uses average pooling");
}

void to_json(nlohmann::json& j, const TaptConfig& c) {
  j = {{"pretrain", c.pretrain}, {"finetune", c.finetune}};
}

void from_json(const nlohmann::json& j, TaptConfig& c) {
  c = TaptConfig::desk();
  if (j.contains("pretrain")) c.pretrain = j.at("pretrain").get<PretrainConfig>();
  if (j.contains("finetune")) c.finetune = j.at("finetune").get<FinetuneConfig>();
}

std::vector<PseudoLabelSeq> base_feature_labels(const Codebook& codebook, const EncoderConfig& cfg,
                                                const Corpus& corpus,
                                                const std::vector<std::size_t>& indices) {
  std::vector<PseudoLabelSeq> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const Utterance& u = corpus.utterances.at(i);
    out.push_back(kmeans_assign(codebook, base_features(cfg, u.frames), u.id));
  }
  return out;
}

TaptResult run_tapt(ParameterSet params, const EncoderConfig& cfg, const Corpus& corpus,
                    const FoldPlan& fold, const Codebook& base_codebook, const TaptConfig& config) {
  config.validate();
  if (base_codebook.provenance.feature_kind != FeatureKind::base_features) {
    throw ProvenanceError("tapt: codebook was not fit on base features");
  }
  if (base_codebook.dim() != cfg.input_dim) {
    throw ConfigError(fmt::format("tapt: codebook dim {} does not match input dim {}", base_codebook.dim(),
                                  cfg.input_dim));
  }
  const FoldPartition part = partition(corpus, fold);
  EncoderConfig mlm_cfg = cfg;
  mlm_cfg.num_clusters = base_codebook.K();
  reset_mlm_head(params, mlm_cfg, config.pretrain.seed);

  const auto labels = base_feature_labels(base_codebook, cfg, corpus, part.train);
  const auto examples = make_examples(corpus, part.train, labels, mlm_cfg);
  PretrainResult pre = run_pretrain(std::move(params), mlm_cfg, examples, config.pretrain);

  TaptResult result;
  result.loss_trajectory = std::move(pre.loss_trajectory);
  reset_ser_heads(pre.params, cfg, config.finetune.seed);
  result.finetune = run_finetune(std::move(pre.params), cfg, corpus, fold, config.finetune);
  result.params = result.finetune.params;
  return result;
}

}  // namespace emoalign
