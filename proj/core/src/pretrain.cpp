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


#include "emoalign/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <fmt/format.h>

#include "emoalign/checkpoint.hpp"
#include "emoalign/error.hpp"
#include "emoalign/optimizer.hpp"
#include "emoalign/training.hpp"

namespace emoalign {

PretrainConfig PretrainConfig::desk() { return PretrainConfig{}; }

PretrainConfig PretrainConfig::full_scale() {
  PretrainConfig c;
  c.steps = 20000;
  c.warmup_steps = 4000;
  c.learning_rate = 5e-4;
  return c;
}

void PretrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("pretrain: alpha must lie in [0, 1]");
  if (batch_size == 0) throw ConfigError("pretrain: batch_size must be >= 1");
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) throw ConfigError("pretrain: mask_prob must lie in [0, 1]");
  if (span_length == 0) throw ConfigError("pretrain: span_length must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("pretrain: learning_rate must be positive");
  if (checkpoint_interval > 0 && checkpoint_dir.empty())
    throw ConfigError("pretrain: checkpoint_interval needs checkpoint_dir");
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"alpha", c.alpha},
       {"steps", c.steps},
       {"warmup_steps", c.warmup_steps},
       {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"mask_prob", c.mask_prob},
       {"span_length", c.span_length},
       {"seed", c.seed},
       {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"freeze_extractor", c.freeze_extractor},
       {"checkpoint_interval", c.checkpoint_interval}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  PretrainConfig d;
  c.alpha = j.value("alpha", d.alpha);
  c.steps = j.value("steps", d.steps);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.mask_prob = j.value("mask_prob", d.mask_prob);
  c.span_length = j.value("span_length", d.span_length);
  c.seed = j.value("seed", d.seed);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.freeze_extractor = j.value("freeze_extractor", d.freeze_extractor);
  c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
}

// ---------------------------------------------------------------------------
// Loss

namespace {

void check_targets(std::size_t rows, std::size_t K, const std::vector<std::size_t>& codes,
                   const MaskSpec& mask) {
  if (codes.size() > rows) {
    throw LabelError(fmt::format("mlm loss: {} labels for {} frames", codes.size(), rows));
  }
  for (std::size_t c : codes) {
    if (c >= K) throw LabelError(fmt::format("mlm loss: label code {} >= K={}", c, K));
  }
  for (std::size_t i : mask.masked_indices) {
    if (i >= codes.size()) {
      throw DimensionError(fmt::format("mlm loss: mask index {} outside {} frames", i, codes.size()));
    }
  }
}

void split_frames(std::size_t T, const MaskSpec& mask, std::vector<std::size_t>& masked,
                  std::vector<std::size_t>& unmasked) {
  std::vector<bool> is_masked(T, false);
  for (std::size_t i : mask.masked_indices) is_masked[i] = true;
  for (std::size_t t = 0; t < T; ++t) (is_masked[t] ? masked : unmasked).push_back(t);
}

std::vector<std::size_t> gather(const std::vector<std::size_t>& codes,
                                const std::vector<std::size_t>& rows) {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(codes[r]);
  return out;
}

}  // namespace

Var mlm_objective(Graph& g, Var logits, const std::vector<std::size_t>& codes, const MaskSpec& mask,
                  double alpha, double masked_norm, double unmasked_norm, double* masked_sum,
                  double* unmasked_sum) {
  const Tensor& z = g.value(logits);
  check_targets(z.rows(), z.cols(), codes, mask);
  std::vector<std::size_t> masked, unmasked;
  split_frames(codes.size(), mask, masked, unmasked);

  Var total = g.constant(Tensor::scalar(0.0));
  auto term = [&](const std::vector<std::size_t>& rows, double weight, double norm, double* sum) {
    if (rows.empty()) {
      if (sum) *sum = 0.0;
      return;
    }
    const bool in_graph = weight != 0.0 && norm > 0.0;
    if (!in_graph && sum == nullptr) return;
    Var ce = g.cross_entropy(g.select_rows(logits, rows), gather(codes, rows));
    if (sum) *sum = g.value(ce).item();
    if (in_graph) total = g.add(total, g.scale(ce, weight / norm));
  };
  term(masked, alpha, masked_norm, masked_sum);
  term(unmasked, 1.0 - alpha, unmasked_norm, unmasked_sum);
  return total;
}

MlmLoss mlm_loss(const Tensor& logits, const std::vector<std::size_t>& codes, const MaskSpec& mask,
                 double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("mlm loss: alpha must lie in [0, 1]");
  if (codes.size() != logits.rows()) {
    throw LabelError(fmt::format("mlm loss: {} labels for {} frames", codes.size(), logits.rows()));
  }
  Graph g;
  double ms = 0.0, us = 0.0;
  const std::size_t n_masked = mask.masked_indices.size();
  const std::size_t n_unmasked = codes.size() - std::min(codes.size(), n_masked);
  mlm_objective(g, g.constant(logits), codes, mask, alpha, 0.0, 0.0, &ms, &us);
  MlmLoss out;
  out.masked = n_masked ? ms / static_cast<double>(n_masked) : 0.0;
  out.unmasked = n_unmasked ? us / static_cast<double>(n_unmasked) : 0.0;
  out.total = alpha * out.masked + (1.0 - alpha) * out.unmasked;
  return out;
}

// ---------------------------------------------------------------------------
// Training

std::vector<PretrainExample> make_examples(const Corpus& corpus,
                                           const std::vector<std::size_t>& utterance_indices,
                                           const std::vector<PseudoLabelSeq>& labels,
                                           const EncoderConfig& cfg) {
  std::map<std::string, const PseudoLabelSeq*> by_id;
  for (const auto& l : labels) by_id.emplace(l.utterance_id, &l);
  std::vector<std::string> missing;
  std::vector<PretrainExample> out;
  for (std::size_t idx : utterance_indices) {
    const Utterance& u = corpus.utterances.at(idx);
    auto it = by_id.find(u.id);
    if (it == by_id.end()) {
      missing.push_back(u.id);
      continue;
    }
    const std::size_t T = cfg.output_frames(u.num_frames());
    if (it->second->codes.size() != T) {
      throw LabelError(fmt::format("pseudo labels for '{}' have {} codes, encoder yields {} frames",
                                   u.id, it->second->codes.size(), T));
    }
    for (std::size_t c : it->second->codes) {
      if (c >= cfg.num_clusters) {
        throw LabelError(fmt::format("pseudo label {} in '{}' >= K={}", c, u.id, cfg.num_clusters));
      }
    }
    out.push_back({&u, &it->second->codes});
  }
  if (!missing.empty()) {
    std::string ids;
    for (const auto& m : missing) ids += (ids.empty() ? "" : ", ") + m;
    throw CoverageError(fmt::format("missing pseudo labels for {} utterance(s): {}", missing.size(), ids));
  }
  return out;
}

PretrainResult run_pretrain(ParameterSet params, const EncoderConfig& cfg,
                            const std::vector<PretrainExample>& data, const PretrainConfig& config) {
  config.validate();
  cfg.validate();
  if (data.empty()) throw CoverageError("pretrain: no training utterances");

  AdamWConfig opt_cfg;
  opt_cfg.learning_rate = config.learning_rate;
  opt_cfg.beta1 = config.beta1;
  opt_cfg.beta2 = config.beta2;
  opt_cfg.weight_decay = config.weight_decay;
  opt_cfg.warmup_steps = config.warmup_steps;
  opt_cfg.schedule = config.warmup_steps > 0 ? LrSchedule::linear_warmup : LrSchedule::constant;
  AdamW optimizer(opt_cfg, params);
  std::vector<bool> trainable = trainable_only(params, {"encoder.", kMlmHeadPrefix});
  if (config.freeze_extractor) {
    const auto frozen = trainable_mask(params, {kExtractorPrefix});
    for (std::size_t s = 0; s < trainable.size(); ++s) trainable[s] = trainable[s] && frozen[s];
  }
  optimizer.set_trainable(trainable);

  std::vector<std::size_t> lengths;
  for (const auto& ex : data) lengths.push_back(ex.utterance->num_frames());

  std::mt19937_64 rng(config.seed);
  PretrainResult result;
  result.loss_trajectory.reserve(config.steps);
  std::vector<std::vector<std::size_t>> batches;
  std::size_t next_batch = 0;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    if (next_batch == batches.size()) {
      batches = bucket_batches(lengths, config.batch_size, rng);
      next_batch = 0;
    }
    const auto& batch = batches[next_batch++];

    std::vector<const Tensor*> inputs;
    for (std::size_t i : batch) inputs.push_back(&data[i].utterance->frames);
    const PaddedBatch padded = pad_batch(cfg, inputs);

    std::vector<MaskSpec> masks;
    std::size_t n_masked = 0, n_unmasked = 0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      masks.push_back(sample_mask(padded.valid_frames[j], config.mask_prob, config.span_length, rng));
      n_masked += masks.back().masked_indices.size();
      n_unmasked += padded.valid_frames[j] - masks.back().masked_indices.size();
    }

    ParameterSet grads = params.zeros_like();
    double masked_sum = 0.0, unmasked_sum = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      Graph g(&params);
      ForwardOptions opts;
      opts.mask = &masks[j];
      opts.valid = &padded.valid[j];
      EncoderOutput out;
      try {
        out = encoder_forward(g, cfg, padded.inputs[j], opts);
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("pretrain step {}: {}", step, e.what()));
      }
      double ms = 0.0, us = 0.0;
      Var loss = mlm_objective(g, out.logits, *data[batch[j]].codes, masks[j], config.alpha,
                               static_cast<double>(n_masked), static_cast<double>(n_unmasked), &ms, &us);
      masked_sum += ms;
      unmasked_sum += us;
      g.backward(loss);
      g.accumulate_param_grads(grads);
    }

    const double lm = n_masked ? masked_sum / static_cast<double>(n_masked) : 0.0;
    const double lu = n_unmasked ? unmasked_sum / static_cast<double>(n_unmasked) : 0.0;
    const double loss = config.alpha * lm + (1.0 - config.alpha) * lu;
    if (!std::isfinite(loss)) throw NumericError(fmt::format("pretrain: non-finite loss at step {}", step));
    result.loss_trajectory.push_back(loss);

    try {
      optimizer.step(params, grads);
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("pretrain step {}: {}", step, e.what()));
    }

    if (config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0) {
      auto path = config.checkpoint_dir / fmt::format("pretrain_step{:06d}.ckpt", step);
      nlohmann::json meta = {{"phase", "pretrain"}, {"step", step}, {"encoder", cfg}};
      save_checkpoint(path, params, meta);
      result.checkpoints.push_back(std::move(path));
    }
  }
  result.params = std::move(params);
  return result;
}

double masked_prediction_accuracy(const ParameterSet& params, const EncoderConfig& cfg,
                                  const std::vector<PretrainExample>& data, double mask_prob,
                                  std::size_t span_length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t correct = 0, total = 0;
  for (const auto& ex : data) {
    const std::size_t T = cfg.output_frames(ex.utterance->num_frames());
    MaskSpec mask = sample_mask(T, mask_prob, span_length, rng);
    if (mask.empty()) mask.masked_indices = {T / 2};
    Graph g(&params);
    ForwardOptions opts;
    opts.mask = &mask;
    const auto out = encoder_forward(g, cfg, ex.utterance->frames, opts);
    const Tensor& z = g.value(out.logits);
    for (std::size_t t : mask.masked_indices) {
      const auto row = z.row(t);
      const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += pred == (*ex.codes)[t];
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

double smoothed_loss(const std::vector<double>& trajectory, std::size_t step, std::size_t window) {
  if (step == 0 || step > trajectory.size()) throw InputError("smoothed_loss: step out of range");
  const std::size_t begin = step > window ? step - window : 0;
  double s = 0.0;
  for (std::size_t i = begin; i < step; ++i) s += trajectory[i];
  return s / static_cast<double>(step - begin);
}

std::string encode_loss_trajectory(const std::vector<double>& trajectory) {
  std::string out = "step\tloss\n";
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    out += fmt::format("{}\t{:.17g}\n", i + 1, trajectory[i]);
  }
  return out;
}

}  // namespace emoalign
