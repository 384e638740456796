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
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoalign/autograd.hpp"
#include "emoalign/corpus.hpp"

namespace emoalign {

struct ConvLayerSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

// Shape of the miniature masked-prediction encoder.
//
// Inputs are always time x channels matrices. With conv_layers empty the
// rows are precomputed frames and are projected straight to embed_dim;
// otherwise the conv stack runs over time first (a raw waveform is the
// single-channel case) and its output frames are projected.
struct EncoderConfig {
  std::vector<ConvLayerSpec> conv_layers;
  std::size_t input_dim = 8;
  std::size_t embed_dim = 32;
  std::size_t num_layers = 3;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 64;
  std::size_t num_clusters = 4;
  std::size_t max_frames = 512;

  static EncoderConfig desk(std::size_t input_dim);
  static EncoderConfig full_scale(std::size_t input_dim);
  static EncoderConfig preset(const std::string& name, std::size_t input_dim);

  void validate() const;
  bool uses_conv() const noexcept { return !conv_layers.empty(); }
  std::size_t total_stride() const;
  std::size_t receptive_field() const;
  // Post-extractor frame count for an input of `input_frames` rows.
  std::size_t output_frames(std::size_t input_frames) const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

// Frames replaced by the mask embedding. Indices are sorted and unique.
struct MaskSpec {
  std::vector<std::size_t> masked_indices;
  std::size_t span_length = 10;
  double mask_prob = 0.08;

  bool empty() const noexcept { return masked_indices.empty(); }
};

// Every frame t starts a span [t, t + span_length) with probability
// mask_prob; spans are unioned and clipped at T.
MaskSpec sample_mask(std::size_t T, double mask_prob, std::size_t span_length,
                     std::mt19937_64& rng);

// 1-based transformer layer whose output is tapped for clustering.
struct TapSpec {
  std::size_t layer_index = 1;
  void validate(const EncoderConfig& cfg) const;
};

ParameterSet init_encoder_params(const EncoderConfig& cfg, std::uint64_t seed);
// Replaces the cluster-logit projection with a fresh num_clusters-wide head.
void reset_mlm_head(ParameterSet& params, const EncoderConfig& cfg, std::uint64_t seed);

inline constexpr std::string_view kExtractorPrefix = "encoder.extractor.";
inline constexpr std::string_view kMlmHeadPrefix = "mlm_head.";

// Fixed sinusoidal position table, T x D.
Tensor sinusoidal_positions(std::size_t T, std::size_t D);

struct EncoderOutput {
  std::vector<Var> hidden_states;  // output of each transformer layer, T x D
  Var final;                       // final layer norm output, T x D
  Var logits;                      // T x num_clusters, when requested
  std::size_t frames = 0;
};

struct ForwardOptions {
  const MaskSpec* mask = nullptr;
  // Post-extractor frame validity; padded frames are excluded as
  // attention keys. Empty means every frame is valid.
  const std::vector<bool>* valid = nullptr;
  bool logits = true;
  // Stop after this many transformer layers (0 = all); final/logits are
  // then left unset.
  std::size_t max_layers = 0;
};

Var extract_features(Graph& g, const EncoderConfig& cfg, const Tensor& input);
EncoderOutput encoder_forward(Graph& g, const EncoderConfig& cfg, const Tensor& input,
                              const ForwardOptions& options = {});

// Tap-layer embeddings for each utterance, computed without masking.
// The i-th matrix has output_frames(T_i) rows.
std::vector<Tensor> layer_embeddings(const std::vector<const Utterance*>& utterances,
                                     const ParameterSet& params, const EncoderConfig& cfg,
                                     TapSpec tap);

}  // namespace emoalign
