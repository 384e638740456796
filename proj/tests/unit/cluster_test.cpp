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
#include <limits>
#include <random>

#include "emoalign/cluster.hpp"
#include "emoalign/error.hpp"
#include "test_support.hpp"

namespace emoalign {
namespace {

using testing::random_tensor;

double sq_dist(const Tensor& a, std::size_t i, const std::vector<double>& c) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.cols(); ++d) s += (a(i, d) - c[d]) * (a(i, d) - c[d]);
  return s;
}

// Exhaustive oracle: best inertia over every split of the points into two
// non-empty groups.
double brute_force_two_means(const Tensor& x) {
  const std::size_t n = x.rows(), D = x.cols();
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t bits = 1; bits < (1u << (n - 1)); ++bits) {
    std::vector<double> c0(D, 0.0), c1(D, 0.0);
    std::size_t n0 = 0, n1 = 0;
    // Point n-1 always sits in group 0, which fixes the label symmetry.
    auto in1 = [&](std::size_t i) { return i < n - 1 && ((bits >> i) & 1u); };
    for (std::size_t i = 0; i < n; ++i) {
      auto& c = in1(i) ? c1 : c0;
      (in1(i) ? n1 : n0)++;
      for (std::size_t d = 0; d < D; ++d) c[d] += x(i, d);
    }
    for (std::size_t d = 0; d < D; ++d) {
      c0[d] /= static_cast<double>(n0);
      c1[d] /= static_cast<double>(n1);
    }
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) inertia += sq_dist(x, i, in1(i) ? c1 : c0);
    best = std::min(best, inertia);
  }
  return best;
}

Tensor two_blobs(std::size_t per_blob, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  Tensor x = Tensor::zeros(2 * per_blob, 2);
  for (std::size_t i = 0; i < 2 * per_blob; ++i) {
    const double mean = i < per_blob ? -5.0 : 5.0;
    x(i, 0) = mean + noise(rng);
    x(i, 1) = mean + noise(rng);
  }
  return x;
}

TEST(KMeans, SingleClusterIsTheMean) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(30, 3, rng);
  const auto r = kmeans_fit(x, {1, 0, 100, 1e-9});
  std::vector<double> mean(3, 0.0);
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t d = 0; d < 3; ++d) mean[d] += x(i, d) / 30.0;
  double total = 0.0;
  for (std::size_t i = 0; i < 30; ++i) total += sq_dist(x, i, mean);
  for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(r.codebook.centroids(0, d), mean[d], 1e-12);
  EXPECT_NEAR(r.codebook.inertia, total, 1e-9);
}

TEST(KMeans, OneClusterPerPoint) {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor(7, 2, rng);
  const auto r = kmeans_fit(x, {7, 3, 100, 1e-9});
  EXPECT_NEAR(r.codebook.inertia, 0.0, 1e-20);
}

TEST(KMeans, TwoBlobs) {
  const Tensor x = two_blobs(100, 0.5, 3);
  const auto r = kmeans_fit(x, {2, 1, 100, 1e-9});
  std::vector<double> firsts = {r.codebook.centroids(0, 0), r.codebook.centroids(1, 0)};
  std::sort(firsts.begin(), firsts.end());
  EXPECT_NEAR(firsts[0], -5.0, 0.2);
  EXPECT_NEAR(firsts[1], 5.0, 0.2);
}

TEST(KMeans, MatchesBruteForceOnSmallInstances) {
  for (std::uint64_t instance = 0; instance < 10; ++instance) {
    std::mt19937_64 rng(100 + instance);
    const std::size_t n = 6 + instance % 7;  // 6..12 points
    const Tensor x = random_tensor(n, 2, rng);
    const double oracle = brute_force_two_means(x);
    double best = std::numeric_limits<double>::infinity();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      best = std::min(best, kmeans_fit(x, {2, seed, 100, 0.0}).codebook.inertia);
    }
    EXPECT_NEAR(best, oracle, 1e-9 * std::max(1.0, oracle)) << "instance " << instance;
  }
}

TEST(KMeans, InertiaNeverIncreases) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor x = random_tensor(200, 4, rng);
    const auto r = kmeans_fit(x, {6, seed, 100, 0.0});
    ASSERT_FALSE(r.inertia_history.empty());
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i) {
      EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] * (1 + 1e-12));
    }
  }
}

TEST(KMeans, DeterministicGivenSeed) {
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor(150, 3, rng);
  const auto a = kmeans_fit(x, {5, 42, 100, 1e-6});
  const auto b = kmeans_fit(x, {5, 42, 100, 1e-6});
  EXPECT_TRUE(a.codebook == b.codebook);
  EXPECT_EQ(a.assignments, b.assignments);
  EXPECT_EQ(a.codebook.id(), b.codebook.id());
}

TEST(KMeans, FewerPointsThanClustersIsConfigError) {
  EXPECT_THROW(kmeans_fit(Tensor::zeros(3, 2), {4, 0, 10, 1e-6}), ConfigError);
}

TEST(KMeans, DuplicatePointsDoNotLeaveEmptyClusters) {
  Tensor x = Tensor::zeros(10, 1);
  x(9, 0) = 1.0;
  x(8, 0) = 2.0;
  const auto r = kmeans_fit(x, {3, 0, 100, 0.0});
  EXPECT_NEAR(r.codebook.inertia, 0.0, 1e-20);
}

TEST(Assign, ExactAndTiedFrames) {
  Codebook cb;
  cb.centroids = Tensor::from_rows({{0, 0}, {-1, 0}, {1, 0}, {5, 5}});
  const Tensor frames = Tensor::from_rows({{5, 5}, {0, 0.5}, {0, 10}});
  const auto codes = kmeans_assign(cb, frames, "u").codes;
  EXPECT_EQ(codes[0], 3u);
  EXPECT_EQ(codes[1], 0u);
  // Equidistant from centroids 1 and 2 only.
  Codebook two;
  two.centroids = Tensor::from_rows({{9, 9}, {-1, 0}, {1, 0}});
  EXPECT_EQ(kmeans_assign(two, Tensor::from_rows({{0, 0}})).codes[0], 1u);
}

TEST(Assign, ReproducesFitAssignments) {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor(120, 3, rng);
  const auto r = kmeans_fit(x, {5, 7, 100, 1e-6});
  EXPECT_EQ(kmeans_assign(r.codebook, x).codes, r.assignments);
}

TEST(Assign, TranslationInvariant) {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor(60, 3, rng);
  const auto r = kmeans_fit(x, {4, 1, 100, 1e-6});
  Codebook moved = r.codebook;
  Tensor xs = x;
  for (std::size_t i = 0; i < xs.rows(); ++i)
    for (std::size_t d = 0; d < 3; ++d) xs(i, d) += 0.75 * static_cast<double>(d + 1);
  for (std::size_t k = 0; k < moved.K(); ++k)
    for (std::size_t d = 0; d < 3; ++d) moved.centroids(k, d) += 0.75 * static_cast<double>(d + 1);
  EXPECT_EQ(kmeans_assign(moved, xs).codes, kmeans_assign(r.codebook, x).codes);
}

TEST(Assign, DimensionMismatchIsConfigError) {
  Codebook cb;
  cb.centroids = Tensor::zeros(2, 3);
  EXPECT_THROW(kmeans_assign(cb, Tensor::zeros(4, 2)), ConfigError);
}

Corpus diag_corpus(std::uint64_t seed) {
  GenerationSpec s;
  s.utterances_per_speaker = 8;
  s.seed = seed;
  return generate_corpus(s);
}

std::vector<PseudoLabelSeq> truth_codes(const Corpus& c) {
  std::vector<PseudoLabelSeq> out;
  for (const auto& u : c.utterances) {
    PseudoLabelSeq l{u.id, "cb", {}};
    for (Emotion e : u.frame_truth) l.codes.push_back(index_of(e));
    out.push_back(l);
  }
  return out;
}

TEST(Diagnostics, PerfectClusteringHasPurityOne) {
  const Corpus c = diag_corpus(1);
  EXPECT_DOUBLE_EQ(cluster_diagnostics(truth_codes(c), c, 4).purity, 1.0);
}

TEST(Diagnostics, RandomCodesNearMajorityFrequency) {
  // Codes independent of emotion give each cluster the corpus label mix, so
  // purity falls to the majority frequency (0.25 for balanced labels).
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Corpus c = diag_corpus(seed);
    auto labels = truth_codes(c);
    std::array<std::size_t, kNumEmotions> counts{};
    std::size_t total = 0;
    std::mt19937_64 rng(seed);
    for (auto& l : labels) {
      for (auto& code : l.codes) {
        ++counts[code];
        ++total;
        code = rng() % 4;
      }
    }
    const double majority =
        static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(total);
    const double purity = cluster_diagnostics(labels, c, 4).purity;
    EXPECT_GE(purity, majority - 1e-12);
    EXPECT_NEAR(purity, majority, 0.03);
  }
}

TEST(Diagnostics, SingleClusterGivesMajorityFrequency) {
  const Corpus c = diag_corpus(2);
  auto labels = truth_codes(c);
  std::array<std::size_t, kNumEmotions> counts{};
  std::size_t total = 0;
  for (auto& l : labels) {
    for (auto& code : l.codes) {
      ++counts[code];
      ++total;
      code = 0;
    }
  }
  const double majority = static_cast<double>(*std::max_element(counts.begin(), counts.end())) / total;
  EXPECT_DOUBLE_EQ(cluster_diagnostics(labels, c, 1).purity, majority);
}

TEST(Diagnostics, MissingUtterancesAreListed) {
  const Corpus c = diag_corpus(3);
  auto labels = truth_codes(c);
  const std::string dropped = labels[4].utterance_id;
  labels.erase(labels.begin() + 4);
  try {
    cluster_diagnostics(labels, c, 4);
    FAIL() << "expected CoverageError";
  } catch (const CoverageError& e) {
    EXPECT_NE(std::string(e.what()).find(dropped), std::string::npos) << e.what();
  }
}

TEST(ClusterFiles, RoundTrip) {
  std::mt19937_64 rng(6);
  auto r = kmeans_fit(random_tensor(50, 3, rng), {4, 2, 100, 1e-6});
  r.codebook.provenance = {2, "abc123", 2, FeatureKind::transformer_layer, 1, {"Ses01F", "Ses02M"}, false};
  const auto dir = testing::scratch_dir("cluster");
  save_codebook(r.codebook, dir / "cb.json");
  const Codebook back = load_codebook(dir / "cb.json");
  EXPECT_TRUE(back == r.codebook);
  EXPECT_EQ(back.id(), r.codebook.id());

  std::vector<PseudoLabelSeq> labels = {{"u1", r.codebook.id(), {0, 1, 3}}, {"u2", r.codebook.id(), {2}}};
  save_pseudo_labels(labels, 4, dir / "pl.jsonl");
  std::size_t K = 0;
  EXPECT_EQ(load_pseudo_labels(dir / "pl.jsonl", &K), labels);
  EXPECT_EQ(K, 4u);
}

TEST(ClusterFiles, TamperedCodebookIsRejected) {
  std::mt19937_64 rng(7);
  const auto r = kmeans_fit(random_tensor(20, 2, rng), {2, 0, 100, 1e-6});
  std::string text = encode_codebook(r.codebook);
  const auto pos = text.find("\"tap_layer\":0");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 13, "\"tap_layer\":5");
  EXPECT_THROW(decode_codebook(text), ParseError);
}

TEST(ClusterFiles, OutOfRangeCodeIsRejected) {
  const std::string text = encode_pseudo_labels({{"u1", "cb", {0, 4}}}, 4);
  EXPECT_THROW(decode_pseudo_labels(text), ParseError);
}

}  // namespace
}  // namespace emoalign
