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


#include "emoalign/encoder.hpp"

#include <cmath>

#include <fmt/format.h>

#include "emoalign/error.hpp"

namespace emoalign {

// ---------------------------------------------------------------------------
// EncoderConfig

EncoderConfig EncoderConfig::desk(std::size_t input_dim) {
  EncoderConfig c;
  c.input_dim = input_dim;
  return c;
}

EncoderConfig EncoderConfig::full_scale(std::size_t input_dim) {
  EncoderConfig c;
  c.input_dim = input_dim;
  c.conv_layers = {{512, 10, 5}, {512, 3, 2}, {512, 3, 2}, {512, 3, 2}, {512, 2, 2}, {512, 2, 2}};
  c.embed_dim = 768;
  c.num_layers = 12;
  c.num_heads = 12;
  c.ffn_dim = 3072;
  c.num_clusters = 50;
  c.max_frames = 4096;
  return c;
}

EncoderConfig EncoderConfig::preset(const std::string& name, std::size_t input_dim) {
  if (name == "desk") return desk(input_dim);
  if (name == "full_scale") return full_scale(input_dim);
  throw ConfigError("unknown encoder preset '" + name + "'");
}

void EncoderConfig::validate() const {
  if (input_dim == 0) throw ConfigError("encoder: input_dim must be positive");
  if (embed_dim == 0 || num_layers == 0 || num_heads == 0 || ffn_dim == 0 || num_clusters == 0 ||
      max_frames == 0) {
    throw ConfigError("encoder: dimensions and counts must be positive");
  }
  if (embed_dim % num_heads != 0) {
    throw ConfigError(fmt::format("encoder: embed_dim {} not divisible by num_heads {}", embed_dim,
                                  num_heads));
  }
  for (const auto& l : conv_layers) {
    if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0)
      throw ConfigError("encoder: conv layer fields must be positive");
  }
}

std::size_t EncoderConfig::total_stride() const {
  std::size_t s = 1;
  for (const auto& l : conv_layers) s *= l.stride;
  return s;
}

std::size_t EncoderConfig::receptive_field() const {
  std::size_t r = 1, jump = 1;
  for (const auto& l : conv_layers) {
    r += (l.kernel - 1) * jump;
    jump *= l.stride;
  }
  return r;
}

std::size_t EncoderConfig::output_frames(std::size_t input_frames) const {
  if (input_frames == 0) throw LengthError("encoder: zero-length input");
  std::size_t n = input_frames;
  for (const auto& l : conv_layers) {
    if (n < l.kernel) {
      throw LengthError(fmt::format("encoder: input of {} frames is shorter than the conv receptive field ({})",
                                    input_frames, receptive_field()));
    }
    n = (n - l.kernel) / l.stride + 1;
  }
  return n;
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  auto convs = nlohmann::json::array();
  for (const auto& l : c.conv_layers) {
    convs.push_back({{"out_channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride}});
  }
  j = {{"conv_layers", convs},           {"input_dim", c.input_dim},
       {"embed_dim", c.embed_dim},       {"num_layers", c.num_layers},
       {"num_heads", c.num_heads},       {"ffn_dim", c.ffn_dim},
       {"num_clusters", c.num_clusters}, {"max_frames", c.max_frames}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.conv_layers.clear();
  if (j.contains("conv_layers")) {
    for (const auto& l : j.at("conv_layers")) {
      c.conv_layers.push_back({l.at("out_channels").get<std::size_t>(), l.at("kernel").get<std::size_t>(),
                               l.at("stride").get<std::size_t>()});
    }
  }
  c.input_dim = j.value("input_dim", d.input_dim);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.num_layers = j.value("num_layers", d.num_layers);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  c.num_clusters = j.value("num_clusters", d.num_clusters);
  c.max_frames = j.value("max_frames", d.max_frames);
}

// ---------------------------------------------------------------------------
// Masking

MaskSpec sample_mask(std::size_t T, double mask_prob, std::size_t span_length,
                     std::mt19937_64& rng) {
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) throw ConfigError("mask_prob must lie in [0, 1]");
  if (span_length == 0) throw ConfigError("span_length must be >= 1");
  MaskSpec spec;
  spec.span_length = span_length;
  spec.mask_prob = mask_prob;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<bool> masked(T, false);
  for (std::size_t t = 0; t < T; ++t) {
    if (unit(rng) < mask_prob) {
      for (std::size_t k = t; k < std::min(T, t + span_length); ++k) masked[k] = true;
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    if (masked[t]) spec.masked_indices.push_back(t);
  }
  return spec;
}

void TapSpec::validate(const EncoderConfig& cfg) const {
  if (layer_index < 1 || layer_index > cfg.num_layers) {
    throw ConfigError(fmt::format("tap layer {} outside [1, {}]", layer_index, cfg.num_layers));
  }
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, stddev);
  Tensor t = Tensor::zeros(rows, cols);
  for (double& v : t.data()) v = gauss(rng);
  return t;
}

Tensor ones_row(std::size_t n) { return Tensor({1, n}, 1.0); }
Tensor zeros_row(std::size_t n) { return Tensor({1, n}, 0.0); }

void add_linear(ParameterSet& p, const std::string& name, std::size_t in, std::size_t out,
                std::mt19937_64& rng, bool bias = true) {
  p.add(name + ".weight", random_matrix(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  if (bias) p.add(name + ".bias", zeros_row(out));
}

void add_norm(ParameterSet& p, const std::string& name, std::size_t n) {
  p.add(name + ".gamma", ones_row(n));
  p.add(name + ".beta", zeros_row(n));
}

std::string layer_prefix(std::size_t i) { return fmt::format("encoder.layers.{}.", i); }

}  // namespace

ParameterSet init_encoder_params(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParameterSet p;
  const std::size_t D = cfg.embed_dim;
  std::size_t channels = cfg.input_dim;
  for (std::size_t l = 0; l < cfg.conv_layers.size(); ++l) {
    const auto& spec = cfg.conv_layers[l];
    const std::size_t fan_in = channels * spec.kernel;
    p.add(fmt::format("encoder.extractor.conv.{}.weight", l),
          random_matrix(spec.out_channels, fan_in, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
    p.add(fmt::format("encoder.extractor.conv.{}.bias", l), Tensor::zeros(spec.out_channels, 1));
    channels = spec.out_channels;
  }
  add_linear(p, "encoder.extractor.projection", channels, D, rng);
  add_norm(p, "encoder.extractor.norm", D);
  p.add("encoder.mask_embedding", random_matrix(1, D, 1.0, rng));
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    const auto pre = layer_prefix(i);
    add_norm(p, pre + "attn_norm", D);
    add_linear(p, pre + "attention.query", D, D, rng);
    // Key bias is omitted: softmax over keys is invariant to it.
    add_linear(p, pre + "attention.key", D, D, rng, /*bias=*/false);
    add_linear(p, pre + "attention.value", D, D, rng);
    add_linear(p, pre + "attention.output", D, D, rng);
    add_norm(p, pre + "ffn_norm", D);
    add_linear(p, pre + "ffn.fc1", D, cfg.ffn_dim, rng);
    add_linear(p, pre + "ffn.fc2", cfg.ffn_dim, D, rng);
  }
  add_norm(p, "encoder.final_norm", D);
  add_linear(p, "mlm_head", D, cfg.num_clusters, rng);
  return p;
}

void reset_mlm_head(ParameterSet& params, const EncoderConfig& cfg, std::uint64_t seed) {
  params.erase_prefix(kMlmHeadPrefix);
  std::mt19937_64 rng(seed);
  add_linear(params, "mlm_head", cfg.embed_dim, cfg.num_clusters, rng);
}

Tensor sinusoidal_positions(std::size_t T, std::size_t D) {
  Tensor pe = Tensor::zeros(T, D);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < D; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(D));
      pe(t, i) = std::sin(static_cast<double>(t) * freq);
      if (i + 1 < D) pe(t, i + 1) = std::cos(static_cast<double>(t) * freq);
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

Var linear(Graph& g, Var x, const std::string& name) {
  Var y = g.matmul(x, g.param(name + ".weight"));
  return g.add_row(y, g.param(name + ".bias"));
}

Var norm(Graph& g, Var x, const std::string& name) {
  return g.layer_norm(x, g.param(name + ".gamma"), g.param(name + ".beta"));
}

Var self_attention(Graph& g, const EncoderConfig& cfg, Var x, const std::string& pre,
                   const std::vector<bool>& valid) {
  Var q = linear(g, x, pre + "attention.query");
  Var k = g.matmul(x, g.param(pre + "attention.key.weight"));
  Var v = linear(g, x, pre + "attention.value");
  const std::size_t dh = cfg.embed_dim / cfg.num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(cfg.num_heads);
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    Var qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = g.slice_cols(v, h * dh, (h + 1) * dh);
    Var scores = g.scale(g.matmul_nt(qh, kh), scale);
    Var probs = g.softmax_rows(scores, valid);
    heads.push_back(g.matmul(probs, vh));
  }
  Var merged = cfg.num_heads == 1 ? heads[0] : g.concat_cols(heads);
  return linear(g, merged, pre + "attention.output");
}

}  // namespace

Var extract_features(Graph& g, const EncoderConfig& cfg, const Tensor& input) {
  if (input.rank() != 2 || input.rows() == 0) {
    throw LengthError("encoder: zero-length input");
  }
  if (input.cols() != cfg.input_dim) {
    throw DimensionError(fmt::format("encoder: input has {} channels, config expects {}",
                                     input.cols(), cfg.input_dim));
  }
  const std::size_t T = cfg.output_frames(input.rows());
  if (T > cfg.max_frames) {
    throw LengthError(fmt::format("encoder: {} frames exceed max_frames {}", T, cfg.max_frames));
  }
  Var x = g.constant(input);
  if (cfg.uses_conv()) {
    x = g.transpose(x);
    for (std::size_t l = 0; l < cfg.conv_layers.size(); ++l) {
      const auto& spec = cfg.conv_layers[l];
      x = g.conv1d(x, g.param(fmt::format("encoder.extractor.conv.{}.weight", l)),
                   g.param(fmt::format("encoder.extractor.conv.{}.bias", l)), spec.kernel,
                   spec.stride);
      x = g.gelu(x);
    }
    x = g.transpose(x);
  }
  x = linear(g, x, "encoder.extractor.projection");
  return norm(g, x, "encoder.extractor.norm");
}

EncoderOutput encoder_forward(Graph& g, const EncoderConfig& cfg, const Tensor& input,
                              const ForwardOptions& options) {
  EncoderOutput out;
  Var x = extract_features(g, cfg, input);
  const std::size_t T = g.value(x).rows();
  out.frames = T;

  static const std::vector<bool> kAllValid;
  const std::vector<bool>& valid = options.valid ? *options.valid : kAllValid;
  if (!valid.empty() && valid.size() != T) {
    throw DimensionError(fmt::format("encoder: validity mask has {} entries for {} frames",
                                     valid.size(), T));
  }

  if (options.mask != nullptr && !options.mask->empty()) {
    for (std::size_t idx : options.mask->masked_indices) {
      if (idx >= T) {
        throw DimensionError(fmt::format("encoder: mask index {} outside {} frames", idx, T));
      }
    }
    x = g.replace_rows(x, options.mask->masked_indices, g.param("encoder.mask_embedding"));
  }
  x = g.add(x, g.constant(sinusoidal_positions(T, cfg.embed_dim)));

  const std::size_t layers =
      options.max_layers == 0 ? cfg.num_layers : std::min(options.max_layers, cfg.num_layers);
  for (std::size_t i = 0; i < layers; ++i) {
    const auto pre = layer_prefix(i);
    try {
      Var h = norm(g, x, pre + "attn_norm");
      x = g.add(x, self_attention(g, cfg, h, pre, valid));
      Var f = norm(g, x, pre + "ffn_norm");
      f = linear(g, g.gelu(linear(g, f, pre + "ffn.fc1")), pre + "ffn.fc2");
      x = g.add(x, f);
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("encoder layer {}: {}", i + 1, e.what()));
    }
    out.hidden_states.push_back(x);
  }
  if (layers < cfg.num_layers) return out;

  out.final = norm(g, x, "encoder.final_norm");
  if (options.logits) out.logits = linear(g, out.final, "mlm_head");
  return out;
}

std::vector<Tensor> layer_embeddings(const std::vector<const Utterance*>& utterances,
                                     const ParameterSet& params, const EncoderConfig& cfg,
                                     TapSpec tap) {
  tap.validate(cfg);
  std::vector<Tensor> out;
  out.reserve(utterances.size());
  for (const Utterance* u : utterances) {
    Graph g(&params);
    ForwardOptions opts;
    opts.logits = false;
    opts.max_layers = tap.layer_index;
    auto res = encoder_forward(g, cfg, u->frames, opts);
    out.push_back(g.value(res.hidden_states[tap.layer_index - 1]));
  }
  return out;
}

}  // namespace emoalign
