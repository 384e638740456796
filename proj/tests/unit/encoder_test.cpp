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


#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "emoalign/encoder.hpp"
#include "emoalign/error.hpp"
#include "emoalign/grad_check.hpp"
#include "emoalign/pretrain.hpp"
#include "test_support.hpp"

namespace emoalign {
namespace {

using testing::random_tensor;

EncoderConfig tiny_frames_config() {
  EncoderConfig c;
  c.input_dim = 3;
  c.embed_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.ffn_dim = 12;
  c.num_clusters = 3;
  return c;
}

EncoderConfig tiny_conv_config() {
  EncoderConfig c = tiny_frames_config();
  c.input_dim = 1;
  c.conv_layers = {{4, 3, 2}, {4, 2, 1}};
  c.num_layers = 1;
  return c;
}

TEST(EncoderConfig, PresetsValidate) {
  const EncoderConfig desk = EncoderConfig::desk(8);
  EXPECT_EQ(desk.embed_dim, 32u);
  EXPECT_EQ(desk.num_layers, 3u);
  EXPECT_NO_THROW(desk.validate());
  const EncoderConfig ref = EncoderConfig::full_scale(1);
  EXPECT_EQ(ref.embed_dim, 768u);
  EXPECT_EQ(ref.num_layers, 12u);
  EXPECT_EQ(ref.conv_layers.size(), 6u);
  EXPECT_NO_THROW(ref.validate());
  EXPECT_THROW(EncoderConfig::preset("huge", 8), ConfigError);
  EncoderConfig bad = desk;
  bad.num_heads = 5;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(EncoderConfig, JsonRoundTrip) {
  const EncoderConfig c = tiny_conv_config();
  EXPECT_EQ(nlohmann::json(c).get<EncoderConfig>(), c);
}

TEST(ExtractFeatures, StrideArithmetic) {
  EncoderConfig c = tiny_frames_config();
  c.input_dim = 1;
  c.conv_layers = {{4, 2, 2}, {4, 2, 2}};
  EXPECT_EQ(c.total_stride(), 4u);
  EXPECT_EQ(c.output_frames(400), 100u);
  c.conv_layers = {{4, 4, 4}};
  EXPECT_EQ(c.output_frames(400), 100u);

  const ParameterSet p = init_encoder_params(c, 1);
  std::mt19937_64 rng(2);
  Graph g(&p);
  Var y = extract_features(g, c, random_tensor(400, 1, rng));
  EXPECT_EQ(g.value(y).rows(), 100u);
  EXPECT_EQ(g.value(y).cols(), c.embed_dim);
}

TEST(ExtractFeatures, FramesPathKeepsFrameCount) {
  const EncoderConfig c = tiny_frames_config();
  const ParameterSet p = init_encoder_params(c, 1);
  std::mt19937_64 rng(2);
  Graph g(&p);
  Var y = extract_features(g, c, random_tensor(17, 3, rng));
  EXPECT_EQ(g.value(y).rows(), 17u);
  EXPECT_EQ(g.value(y).cols(), 8u);
}

TEST(ExtractFeatures, ShortInputsAreLengthErrors) {
  const EncoderConfig conv = tiny_conv_config();
  EXPECT_THROW(conv.output_frames(0), LengthError);
  EXPECT_THROW(conv.output_frames(conv.receptive_field() - 1), LengthError);
  EXPECT_EQ(conv.output_frames(conv.receptive_field()), 1u);
  const ParameterSet p = init_encoder_params(tiny_frames_config(), 1);
  Graph g(&p);
  EXPECT_THROW(extract_features(g, tiny_frames_config(), Tensor::zeros(0, 3)), LengthError);
}

TEST(SampleMask, DegenerateProbabilities) {
  std::mt19937_64 rng(1);
  EXPECT_TRUE(sample_mask(50, 0.0, 10, rng).empty());
  EXPECT_EQ(sample_mask(50, 1.0, 1, rng).masked_indices.size(), 50u);
  const MaskSpec m = sample_mask(3, 1.0, 10, rng);
  EXPECT_EQ(m.masked_indices, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(SampleMask, IndicesSortedUniqueInRange) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const MaskSpec m = sample_mask(37, 0.1, 5, rng);
    for (std::size_t i = 0; i < m.masked_indices.size(); ++i) {
      EXPECT_LT(m.masked_indices[i], 37u);
      if (i) EXPECT_LT(m.masked_indices[i - 1], m.masked_indices[i]);
    }
  }
}

TEST(SampleMask, ExpectedFractionOverSeeds) {
  // A frame stays unmasked only if none of the l starts covering it fire.
  const double expected = 1.0 - std::pow(1.0 - 0.08, 10);
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    total += static_cast<double>(sample_mask(1000, 0.08, 10, rng).masked_indices.size()) / 1000.0;
  }
  EXPECT_NEAR(total / 100.0, expected, 0.05);
}

TEST(SampleMask, DeterministicGivenSeed) {
  std::mt19937_64 a(3), b(3);
  EXPECT_EQ(sample_mask(200, 0.08, 10, a).masked_indices, sample_mask(200, 0.08, 10, b).masked_indices);
}

class Forward : public ::testing::Test {
 protected:
  EncoderConfig cfg = tiny_frames_config();
  ParameterSet params = init_encoder_params(cfg, 5);
  std::mt19937_64 rng{6};

  Tensor logits(const Tensor& x, const MaskSpec* mask) {
    Graph g(&params);
    ForwardOptions o;
    o.mask = mask;
    return g.value(encoder_forward(g, cfg, x, o).logits);
  }
};

TEST_F(Forward, ShapeContract) {
  Graph g(&params);
  const auto out = encoder_forward(g, cfg, random_tensor(9, 3, rng));
  ASSERT_EQ(out.hidden_states.size(), cfg.num_layers);
  for (Var h : out.hidden_states) {
    EXPECT_EQ(g.value(h).rows(), 9u);
    EXPECT_EQ(g.value(h).cols(), cfg.embed_dim);
  }
  EXPECT_EQ(g.value(out.logits).rows(), 9u);
  EXPECT_EQ(g.value(out.logits).cols(), cfg.num_clusters);
}

TEST_F(Forward, EmptyMaskEqualsUnmasked) {
  const Tensor x = random_tensor(10, 3, rng);
  const MaskSpec empty;
  EXPECT_TRUE(logits(x, &empty) == logits(x, nullptr));
}

TEST_F(Forward, AllMaskedIgnoresInput) {
  MaskSpec all;
  for (std::size_t i = 0; i < 8; ++i) all.masked_indices.push_back(i);
  EXPECT_TRUE(logits(random_tensor(8, 3, rng), &all) == logits(random_tensor(8, 3, rng), &all));
}

TEST_F(Forward, MaskingLocality) {
  const Tensor x = random_tensor(10, 3, rng);
  MaskSpec m;
  m.masked_indices = {2, 3, 4};
  Tensor masked_changed = x;
  masked_changed(3, 1) += 5.0;
  EXPECT_TRUE(logits(x, &m) == logits(masked_changed, &m));
  Tensor unmasked_changed = x;
  unmasked_changed(7, 1) += 5.0;
  const Tensor a = logits(x, &m), b = logits(unmasked_changed, &m);
  // Attention carries the change to other frames, masked ones included.
  EXPECT_NE(a(3, 0), b(3, 0));
}

TEST_F(Forward, Deterministic) {
  const Tensor x = random_tensor(12, 3, rng);
  EXPECT_TRUE(logits(x, nullptr) == logits(x, nullptr));
}

TEST_F(Forward, PaddedKeysDoNotLeak) {
  const Tensor x = random_tensor(6, 3, rng);
  Tensor padded = Tensor::zeros(9, 3);
  std::copy(x.data().begin(), x.data().end(), padded.data().begin());
  std::vector<bool> valid(9, false);
  std::fill_n(valid.begin(), 6, true);
  Graph g(&params);
  ForwardOptions o;
  o.valid = &valid;
  const Tensor& a = g.value(encoder_forward(g, cfg, padded, o).logits);
  const Tensor b = logits(x, nullptr);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t k = 0; k < cfg.num_clusters; ++k) EXPECT_NEAR(a(t, k), b(t, k), 1e-12);
}

TEST_F(Forward, NonFiniteActivationNamesLayer) {
  ParameterSet bad = params;
  bad.at("encoder.layers.1.ffn.fc1.weight").fill(std::numeric_limits<double>::max());
  Graph g(&bad);
  try {
    encoder_forward(g, cfg, random_tensor(5, 3, rng));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 2"), std::string::npos) << e.what();
  }
}

// Extract -> mask -> transformer -> masked cross-entropy, all parameters.
void check_composite(const EncoderConfig& cfg, std::size_t input_rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet p = init_encoder_params(cfg, seed);
  const Tensor x = random_tensor(input_rows, cfg.input_dim, rng);
  const std::size_t T = cfg.output_frames(input_rows);
  ASSERT_LE(T, 12u);
  std::vector<std::size_t> codes;
  for (std::size_t t = 0; t < T; ++t) codes.push_back(rng() % cfg.num_clusters);
  MaskSpec mask;
  mask.masked_indices = {0, T / 2};
  const auto r = grad_check(
      p,
      [&](Graph& g) {
        ForwardOptions o;
        o.mask = &mask;
        const auto out = encoder_forward(g, cfg, x, o);
        return mlm_objective(g, out.logits, codes, mask, 1.0, 2.0, 0.0);
      },
      1e-6);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter << "[" << r.worst_index << "] analytic "
                                        << r.analytic << " numeric " << r.numeric;
}

TEST(EncoderGradient, FramesPathComposite) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) check_composite(tiny_frames_config(), 7, seed);
}

TEST(EncoderGradient, ConvPathComposite) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) check_composite(tiny_conv_config(), 20, seed);
}

TEST(LayerEmbeddings, RowsMatchFrameCounts) {
  GenerationSpec s;
  s.utterances_per_speaker = 2;
  const Corpus c = generate_corpus(s);
  EncoderConfig cfg = EncoderConfig::desk(8);
  const ParameterSet p = init_encoder_params(cfg, 1);
  std::vector<const Utterance*> utts;
  std::size_t frames = 0;
  for (const auto& u : c.utterances) {
    utts.push_back(&u);
    frames += u.num_frames();
  }
  for (std::size_t layer = 1; layer <= 3; ++layer) {
    const auto emb = layer_embeddings(utts, p, cfg, TapSpec{layer});
    ASSERT_EQ(emb.size(), utts.size());
    std::size_t rows = 0;
    for (std::size_t i = 0; i < emb.size(); ++i) {
      EXPECT_EQ(emb[i].rows(), utts[i]->num_frames());
      EXPECT_EQ(emb[i].cols(), cfg.embed_dim);
      rows += emb[i].rows();
    }
    EXPECT_EQ(rows, frames);
  }
  EXPECT_THROW(layer_embeddings(utts, p, cfg, TapSpec{4}), ConfigError);
  EXPECT_THROW(layer_embeddings(utts, p, cfg, TapSpec{0}), ConfigError);
}

TEST(LayerEmbeddings, FullScalePresetTapsMirrorGrid) {
  const EncoderConfig ref = EncoderConfig::full_scale(1);
  for (std::size_t layer : {6u, 9u, 11u}) EXPECT_NO_THROW(TapSpec{layer}.validate(ref));
}

}  // namespace
}  // namespace emoalign
