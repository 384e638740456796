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

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <random>

#include "emoalign/autograd.hpp"
#include "emoalign/checkpoint.hpp"
#include "emoalign/error.hpp"
#include "emoalign/grad_check.hpp"
#include "emoalign/optimizer.hpp"
#include "test_support.hpp"

namespace emoalign {
namespace {

using testing::random_tensor;

constexpr int kTrials = 20;
constexpr double kTol = 1e-4;

// Projects an op output onto fixed random weights so every output entry
// contributes a distinct gradient.
Var probe(Graph& g, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Tensor& v = g.value(y);
  return g.sum(g.mul(y, g.constant(random_tensor(v.rows(), v.cols(), rng))));
}

std::size_t dim(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

void expect_grad_ok(ParameterSet& params, const ScalarObjective& f, const std::string& what) {
  const GradCheckReport r = grad_check(params, f, 1e-6);
  EXPECT_LT(r.max_relative_error, kTol) << what << ": worst " << r.worst_parameter << "[" << r.worst_index
                                        << "] analytic " << r.analytic << " numeric " << r.numeric;
  EXPECT_GT(r.checked, 0u);
}

TEST(Tensor, ShapesAndAccess) {
  Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t(1, 2), 6.0);
  EXPECT_EQ(t.shape_str(), "[2x3]");
  EXPECT_TRUE(t.all_finite());
  t(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  t(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(t.all_finite());
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  Graph g;
  Var y = g.softmax_rows(g.constant(Tensor::zeros(1, 3)));
  for (double v : g.value(y).data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < kTrials; ++trial) {
    Graph g;
    Var y = g.softmax_rows(g.constant(random_tensor(dim(rng, 1, 6), dim(rng, 1, 9), rng, 5.0)));
    const Tensor& t = g.value(y);
    for (std::size_t i = 0; i < t.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < t.cols(); ++j) s += t(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Ops, TanhAtOriginHasUnitSlope) {
  ParameterSet p;
  p.add("x", Tensor::zeros(1, 1));
  Graph g(&p);
  Var x = g.param("x");
  Var y = g.tanh(x);
  EXPECT_EQ(g.value(y).item(), 0.0);
  g.backward(y);
  EXPECT_DOUBLE_EQ(g.grad(x).item(), 1.0);
}

TEST(Ops, UniformTwoClassCrossEntropyIsLn2) {
  for (std::size_t label : {0u, 1u}) {
    Graph g;
    Var ce = g.cross_entropy(g.constant(Tensor::zeros(1, 2)), {label});
    EXPECT_NEAR(g.value(ce).item(), std::log(2.0), 1e-15);
  }
}

TEST(Ops, ShapeMismatchNamesBothShapes) {
  Graph g;
  try {
    g.matmul(g.constant(Tensor::zeros(2, 3)), g.constant(Tensor::zeros(2, 3)));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] and [2x3]"), std::string::npos) << e.what();
  }
}

TEST(Ops, NonFiniteIntermediateNamesTheOp) {
  Graph g;
  try {
    g.scale(g.constant(Tensor::from_rows({{1e300}})), 1e300);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("'scale'"), std::string::npos) << e.what();
  }
}

TEST(Ops, CrossEntropyRejectsOutOfRangeLabel) {
  Graph g;
  EXPECT_THROW(g.cross_entropy(g.constant(Tensor::zeros(2, 3)), {0, 3}), LabelError);
}

TEST(Ops, ConvRejectsShortInput) {
  Graph g;
  EXPECT_THROW(g.conv1d(g.constant(Tensor::zeros(1, 2)), g.constant(Tensor::zeros(1, 3)),
                        g.constant(Tensor::zeros(1, 1)), 3, 1),
               LengthError);
}

// ---------------------------------------------------------------------------
// Finite-difference checks, >= 20 random instances per op.

class OpGradient : public ::testing::Test {
 protected:
  std::mt19937_64 rng{20240607};
};

TEST_F(OpGradient, Matmul) {
  for (int t = 0; t < kTrials; ++t) {
    const auto m = dim(rng, 1, 6), k = dim(rng, 1, 6), n = dim(rng, 1, 6);
    ParameterSet p;
    p.add("a", random_tensor(m, k, rng));
    p.add("b", random_tensor(k, n, rng));
    expect_grad_ok(p, [&](Graph& g) { return probe(g, g.matmul(g.param("a"), g.param("b")), t); }, "matmul");
  }
}

TEST_F(OpGradient, MatmulNT) {
  for (int t = 0; t < kTrials; ++t) {
    const auto m = dim(rng, 1, 6), k = dim(rng, 1, 6), n = dim(rng, 1, 6);
    ParameterSet p;
    p.add("a", random_tensor(m, k, rng));
    p.add("b", random_tensor(n, k, rng));
    expect_grad_ok(p, [&](Graph& g) { return probe(g, g.matmul_nt(g.param("a"), g.param("b")), t); },
                   "matmul_nt");
  }
}

TEST_F(OpGradient, TransposeAddMulScale) {
  for (int t = 0; t < kTrials; ++t) {
    const auto m = dim(rng, 1, 6), n = dim(rng, 1, 6);
    ParameterSet p;
    p.add("a", random_tensor(m, n, rng));
    p.add("b", random_tensor(m, n, rng));
    p.add("r", random_tensor(1, n, rng));
    expect_grad_ok(p, [&](Graph& g) { return probe(g, g.transpose(g.param("a")), t); }, "transpose");
    expect_grad_ok(p, [&](Graph& g) { return probe(g, g.add(g.param("a"), g.param("b")), t); }, "add");
    expect_grad_ok(p, [&](Graph& g) { return probe(g, g.add_row(g.param("a"), g.param("r")), t); }, "add_row");
    expect_grad_ok(p, [&](Graph& g) { return probe(g, g.mul(g.param("a"), g.param("b")), t); }, "mul");
    expect_grad_ok(p, [&](Graph& g) { return probe(g, g.scale(g.param("a"), -1.7), t); }, "scale");
  }
}

TEST_F(OpGradient, Activations) {
  for (int t = 0; t < kTrials; ++t) {
    ParameterSet p;
    p.add("a", random_tensor(dim(rng, 1, 6), dim(rng, 1, 6), rng, 1.5));
    expect_grad_ok(p, [&](Graph& g) { return probe(g, g.tanh(g.param("a")), t); }, "tanh");
    expect_grad_ok(p, [&](Graph& g) { return probe(g, g.gelu(g.param("a")), t); }, "gelu");
  }
}

TEST_F(OpGradient, SoftmaxWithValidityMask) {
  for (int t = 0; t < kTrials; ++t) {
    const auto m = dim(rng, 1, 5), n = dim(rng, 1, 8);
    std::vector<bool> valid(n);
    for (std::size_t j = 0; j < n; ++j) valid[j] = (j == 0) || (rng() % 3 != 0);
    ParameterSet p;
    p.add("a", random_tensor(m, n, rng, 2.0));
    expect_grad_ok(p, [&](Graph& g) { return probe(g, g.softmax_rows(g.param("a"), valid), t); }, "softmax");
  }
}

TEST_F(OpGradient, LayerNorm) {
  for (int t = 0; t < kTrials; ++t) {
    // Width 2 pins each row to +-1, leaving only epsilon-sized gradients.
    const auto m = dim(rng, 1, 6), n = dim(rng, 3, 8);
    ParameterSet p;
    p.add("x", random_tensor(m, n, rng, 2.0));
    p.add("gamma", random_tensor(1, n, rng));
    p.add("beta", random_tensor(1, n, rng));
    expect_grad_ok(p,
                   [&](Graph& g) {
                     return probe(g, g.layer_norm(g.param("x"), g.param("gamma"), g.param("beta")), t);
                   },
                   "layer_norm");
  }
}

TEST_F(OpGradient, StridedConv1d) {
  for (int t = 0; t < kTrials; ++t) {
    const auto cin = dim(rng, 1, 3), cout = dim(rng, 1, 4), k = dim(rng, 1, 4), s = dim(rng, 1, 3);
    const auto L = k + dim(rng, 0, 8);
    ParameterSet p;
    p.add("x", random_tensor(cin, L, rng));  // channels x time
    p.add("w", random_tensor(cout, cin * k, rng));
    p.add("b", random_tensor(cout, 1, rng));
    expect_grad_ok(p,
                   [&](Graph& g) {
                     return probe(g, g.conv1d(g.param("x"), g.param("w"), g.param("b"), k, s), t);
                   },
                   "conv1d");
  }
}

TEST_F(OpGradient, RowAndColumnSelection) {
  for (int t = 0; t < kTrials; ++t) {
    const auto m = dim(rng, 2, 8), n = dim(rng, 2, 6);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < dim(rng, 1, 5); ++i) rows.push_back(rng() % m);
    const auto b = dim(rng, 0, n - 1), e = dim(rng, b + 1, n);
    ParameterSet p;
    p.add("table", random_tensor(m, n, rng));
    p.add("row", random_tensor(1, n, rng));
    expect_grad_ok(p, [&](Graph& g) { return probe(g, g.embedding(g.param("table"), rows), t); }, "embedding");
    expect_grad_ok(p, [&](Graph& g) { return probe(g, g.select_rows(g.param("table"), rows), t); },
                   "select_rows");
    std::vector<std::size_t> unique_rows(rows);
    std::sort(unique_rows.begin(), unique_rows.end());
    unique_rows.erase(std::unique(unique_rows.begin(), unique_rows.end()), unique_rows.end());
    expect_grad_ok(p,
                   [&](Graph& g) {
                     return probe(g, g.replace_rows(g.param("table"), unique_rows, g.param("row")), t);
                   },
                   "replace_rows");
    expect_grad_ok(p, [&](Graph& g) { return probe(g, g.slice_cols(g.param("table"), b, e), t); },
                   "slice_cols");
    expect_grad_ok(p,
                   [&](Graph& g) {
                     const std::array<Var, 2> parts = {g.param("table"), g.slice_cols(g.param("table"), b, e)};
                     return probe(g, g.concat_cols(parts), t);
                   },
                   "concat_cols");
  }
}

TEST_F(OpGradient, ReductionsAndCrossEntropy) {
  for (int t = 0; t < kTrials; ++t) {
    const auto m = dim(rng, 1, 6), K = dim(rng, 2, 6);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < m; ++i) labels.push_back(rng() % K);
    ParameterSet p;
    p.add("a", random_tensor(m, K, rng, 2.0));
    expect_grad_ok(p, [&](Graph& g) { return g.sum(g.tanh(g.param("a"))); }, "sum");
    expect_grad_ok(p, [&](Graph& g) { return g.mean(g.tanh(g.param("a"))); }, "mean");
    expect_grad_ok(p, [&](Graph& g) { return g.cross_entropy(g.param("a"), labels); }, "cross_entropy");
  }
}

// ---------------------------------------------------------------------------
// grad_check itself

TEST(GradCheck, SquareAtThree) {
  ParameterSet p;
  p.add("x", Tensor::from_rows({{3.0}}));
  const auto r = grad_check(p, [](Graph& g) { return g.mul(g.param("x"), g.param("x")); }, 1e-4);
  EXPECT_DOUBLE_EQ(r.analytic, 6.0);
  EXPECT_NEAR(r.numeric, 6.0, 1e-9);
  EXPECT_LT(r.max_relative_error, 1e-9);
  EXPECT_EQ(p.at("x")(0, 0), 3.0);
}

TEST(GradCheck, ConstantObjectiveHasZeroError) {
  ParameterSet p;
  p.add("x", Tensor::from_rows({{1.0, -2.0}}));
  const auto r = grad_check(p, [](Graph& g) { return g.constant(Tensor::scalar(4.0)); });
  EXPECT_EQ(r.analytic, 0.0);
  EXPECT_EQ(r.max_relative_error, 0.0);
}

TEST(GradCheck, RejectsEpsilonOutsideRange) {
  ParameterSet p;
  p.add("x", Tensor::zeros(1, 1));
  auto f = [](Graph& g) { return g.sum(g.param("x")); };
  EXPECT_THROW(grad_check(p, f, 1e-8), ConfigError);
  EXPECT_THROW(grad_check(p, f, 1e-2), ConfigError);
}

// ---------------------------------------------------------------------------
// AdamW

ParameterSet two_params() {
  ParameterSet p;
  p.add("w", Tensor::from_rows({{1.0, -2.0}, {0.5, 3.0}}));
  p.add("b", Tensor::from_rows({{0.25}}));
  return p;
}

TEST(AdamW, ZeroGradientZeroDecayIsFixedPoint) {
  ParameterSet p = two_params();
  const ParameterSet before = p;
  AdamWConfig c;
  c.weight_decay = 0.0;
  AdamW opt(c, p);
  for (int i = 0; i < 5; ++i) opt.step(p, p.zeros_like());
  EXPECT_TRUE(p == before);
  EXPECT_EQ(opt.step_count(), 5u);
}

TEST(AdamW, DecoupledDecayScalesParameters) {
  ParameterSet p = two_params();
  AdamWConfig c;
  c.learning_rate = 0.1;
  c.weight_decay = 0.2;
  AdamW opt(c, p);
  const double factor = 1.0 - 0.1 * 0.2;
  opt.step(p, p.zeros_like());
  opt.step(p, p.zeros_like());
  EXPECT_DOUBLE_EQ(p.at("w")(0, 1), -2.0 * factor * factor);
  EXPECT_DOUBLE_EQ(p.at("b")(0, 0), 0.25 * factor * factor);
}

TEST(AdamW, LinearWarmupHalfway) {
  ParameterSet p = two_params();
  AdamWConfig c;
  c.learning_rate = 5e-4;
  c.warmup_steps = 4000;
  c.schedule = LrSchedule::linear_warmup;
  AdamW opt(c, p);
  EXPECT_DOUBLE_EQ(opt.learning_rate_at(2000), 2.5e-4);
  EXPECT_DOUBLE_EQ(opt.learning_rate_at(4000), 5e-4);
  EXPECT_DOUBLE_EQ(opt.learning_rate_at(9000), 5e-4);
}

TEST(AdamW, FirstStepMatchesHandComputation) {
  ParameterSet p;
  p.add("x", Tensor::from_rows({{2.0}}));
  ParameterSet grad;
  grad.add("x", Tensor::from_rows({{0.5}}));
  AdamWConfig c;
  c.learning_rate = 0.01;
  c.weight_decay = 0.1;
  AdamW opt(c, p);
  opt.step(p, grad);
  // Bias-corrected moments equal g and g^2 after one step.
  const double expected = 2.0 * (1.0 - 0.01 * 0.1) - 0.01 * 0.5 / (0.5 + c.epsilon);
  EXPECT_NEAR(p.at("x")(0, 0), expected, 1e-15);
  EXPECT_TRUE(opt.first_moments()[0].same_shape(p.at("x")));
}

TEST(AdamW, NonFiniteGradientAborts) {
  ParameterSet p = two_params();
  const ParameterSet before = p;
  AdamW opt(AdamWConfig{}, p);
  ParameterSet g = p.zeros_like();
  g.at("b")(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(opt.step(p, g), NumericError);
  EXPECT_TRUE(p == before);
  EXPECT_EQ(opt.step_count(), 0u);
}

TEST(AdamW, FrozenParametersDoNotMove) {
  ParameterSet p = two_params();
  AdamW opt(AdamWConfig{}, p);
  opt.set_trainable({false, true});
  ParameterSet g = p.zeros_like();
  g.at("w").fill(1.0);
  g.at("b").fill(1.0);
  opt.step(p, g);
  EXPECT_TRUE(p.at("w") == two_params().at("w"));
  EXPECT_NE(p.at("b")(0, 0), 0.25);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(9);
  ParameterSet p;
  p.add("encoder.layers.0.attention.query.weight", random_tensor(4, 4, rng));
  p.add("encoder.mask_embedding", random_tensor(1, 4, rng));
  p.at("encoder.mask_embedding")(0, 1) = -0.0;
  p.at("encoder.mask_embedding")(0, 2) = 5e-324;
  const nlohmann::json meta = {{"phase", "test"}};
  const auto dir = testing::scratch_dir("ckpt");
  const std::string id = save_checkpoint(dir / "a.ckpt", p, meta);
  const Checkpoint c = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(c.id, id);
  EXPECT_EQ(c.metadata, meta);
  ASSERT_EQ(c.params.names(), p.names());
  for (std::size_t s = 0; s < p.size(); ++s) {
    const auto a = p.at(s).data();
    const auto b = c.params.at(s).data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(std::bit_cast<std::uint64_t>(a[i]), std::bit_cast<std::uint64_t>(b[i]));
    }
  }
}

TEST(Checkpoint, PayloadIsLittleEndianDoubles) {
  ParameterSet p;
  p.add("x", Tensor::from_rows({{1.0}}));
  const std::string bytes = encode_checkpoint(p, nlohmann::json::object());
  ASSERT_GE(bytes.size(), 8u);
  const std::string tail = bytes.substr(bytes.size() - 8);
  EXPECT_EQ(tail, std::string("\x00\x00\x00\x00\x00\x00\xf0\x3f", 8));
  EXPECT_EQ(bytes.rfind(kCheckpointMagic, 0), 0u);
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  ParameterSet p;
  p.add("x", Tensor::from_rows({{1.0, 2.0}}));
  const std::string bytes = encode_checkpoint(p, nlohmann::json::object());
  EXPECT_THROW(decode_checkpoint(std::string_view(bytes).substr(0, bytes.size() - 3)), ParseError);
  EXPECT_THROW(decode_checkpoint("not a checkpoint"), ParseError);
}

}  // namespace
}  // namespace emoalign
