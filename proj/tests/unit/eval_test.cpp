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
#include <random>

#include "emoalign/error.hpp"
#include "emoalign/eval.hpp"

namespace emoalign {
namespace {

constexpr Emotion H = Emotion::happy, S = Emotion::sad, N = Emotion::neutral, A = Emotion::angry;

TEST(ComputeMetrics, PerfectPredictions) {
  const std::vector<Emotion> t = {H, S, N, A, A};
  const Metrics m = compute_metrics(t, t);
  EXPECT_EQ(m.ua, 1.0);
  EXPECT_EQ(m.wa, 1.0);
}

TEST(ComputeMetrics, HandCountedExample) {
  const Metrics m = compute_metrics({H, H, H, S}, {H, H, S, S});
  EXPECT_EQ(m.ua, (2.0 / 3.0 + 1.0) / 2.0);
  EXPECT_EQ(m.wa, 0.75);
  EXPECT_EQ(m.confusion[0][0], 2u);
  EXPECT_EQ(m.confusion[0][1], 1u);
  EXPECT_EQ(m.confusion[1][1], 1u);
  EXPECT_EQ(m.total(), 4u);
}

TEST(ComputeMetrics, ConstantPredictorOnBalancedSet) {
  std::vector<Emotion> t;
  for (Emotion e : kAllEmotions) t.insert(t.end(), 5, e);
  const Metrics m = compute_metrics(t, std::vector<Emotion>(t.size(), N));
  EXPECT_DOUBLE_EQ(m.ua, 0.25);
  EXPECT_DOUBLE_EQ(m.wa, 0.25);
}

TEST(ComputeMetrics, UaIgnoresClassSizesAtFixedRecall) {
  // Recalls 1/2 and 3/4 in both sets; class sizes differ.
  const Metrics small = compute_metrics({H, H, S, S, S, S}, {H, A, S, S, S, A});
  std::vector<Emotion> t, p;
  for (int i = 0; i < 20; ++i) {
    t.push_back(H);
    p.push_back(i < 10 ? H : N);
  }
  for (int i = 0; i < 8; ++i) {
    t.push_back(S);
    p.push_back(i < 6 ? S : H);
  }
  const Metrics big = compute_metrics(t, p);
  EXPECT_NEAR(small.ua, big.ua, 1e-12);
  EXPECT_NE(small.wa, big.wa);
}

TEST(ComputeMetrics, OrderDoesNotMatter) {
  std::mt19937_64 rng(1);
  std::vector<std::pair<Emotion, Emotion>> pairs;
  for (int i = 0; i < 50; ++i) pairs.emplace_back(emotion_from_index(rng() % 4), emotion_from_index(rng() % 4));
  auto metrics_of = [](const std::vector<std::pair<Emotion, Emotion>>& ps) {
    std::vector<Emotion> t, p;
    for (auto [a, b] : ps) {
      t.push_back(a);
      p.push_back(b);
    }
    return compute_metrics(t, p);
  };
  const Metrics a = metrics_of(pairs);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  EXPECT_EQ(a, metrics_of(pairs));
  EXPECT_GE(a.ua, 0.0);
  EXPECT_LE(a.ua, 1.0);
}

TEST(ComputeMetrics, InputErrors) {
  EXPECT_THROW(compute_metrics({H, S}, {H}), InputError);
  EXPECT_THROW(compute_metrics({}, {}), InputError);
}

TEST(AggregateFolds, UnweightedMean) {
  std::vector<Metrics> folds(5);
  const double uas[] = {0.7, 0.8, 0.9, 0.6, 1.0};
  for (int i = 0; i < 5; ++i) {
    folds[i].ua = uas[i];
    folds[i].wa = 0.5;
  }
  const FoldAggregate agg = aggregate_folds(folds);
  EXPECT_NEAR(agg.ua_mean, 0.80, 1e-12);
  EXPECT_NEAR(agg.wa_mean, 0.5, 1e-12);
  EXPECT_EQ(agg.per_fold.size(), 5u);
  folds.pop_back();
  EXPECT_THROW(aggregate_folds(folds), InputError);
}

TEST(AggregateFolds, IdenticalFoldsReturnThatFold) {
  const Metrics m = compute_metrics({H, H, H, S}, {H, H, S, S});
  const FoldAggregate agg = aggregate_folds(std::vector<Metrics>(5, m));
  EXPECT_NEAR(agg.ua_mean, m.ua, 1e-15);
  EXPECT_NEAR(agg.wa_mean, m.wa, 1e-15);
}

TEST(MetricsRecord, RoundTrip) {
  const Metrics m = compute_metrics({H, S, N, A, A, N}, {H, N, N, A, S, N});
  const auto j = metrics_record(3, m);
  EXPECT_EQ(j.at("fold"), 3);
  EXPECT_EQ(j.at("confusion").size(), 16u);
  EXPECT_EQ(metrics_from_record(j), m);
  auto bad = j;
  bad["confusion"].erase(0);
  EXPECT_THROW(metrics_from_record(bad), ParseError);
}

TEST(RenderReport, FullGrid) {
  AblationReport r;
  for (std::size_t layer : {1u, 2u, 3u})
    for (std::size_t k : {4u, 8u, 16u})
      for (Pooling p : {Pooling::average, Pooling::attention}) r.cells[{layer, k, p}] = {0.5, 0.25, "", ""};
  const RenderedReport out = render_report(r);
  EXPECT_EQ(out.json["cells"].size(), 18u);
  // Header plus nine (layer, K) rows.
  EXPECT_EQ(std::count(out.csv.begin(), out.csv.end(), '\n'), 10);
  EXPECT_NE(out.csv.find("layer 2,8,50.0/25.0,50.0/25.0"), std::string::npos) << out.csv;
}

TEST(RenderReport, EmptyGridHasHeadersOnly) {
  const RenderedReport out = render_report(AblationReport{});
  EXPECT_EQ(out.csv, "Layers,Clusters,Average Pooling,Attention Pooling\n");
  EXPECT_TRUE(out.json["cells"].empty());
}

TEST(RenderReport, MissingAndFailedCells) {
  AblationReport r;
  r.cells[{2, 4, Pooling::attention}] = {0.9, 0.8, "", ""};
  r.cells[{3, 4, Pooling::average}] = {std::nullopt, std::nullopt, "K=64 exceeds frames", ""};
  const RenderedReport out = render_report(r);
  EXPECT_NE(out.csv.find("layer 2,4,,90.0/80.0"), std::string::npos) << out.csv;
  EXPECT_NE(out.csv.find("layer 3,4,failed,"), std::string::npos) << out.csv;
}

TEST(RenderReport, ReferenceRowsPrecedeComputedRows) {
  AblationReport r;
  r.reference_rows = full_scale_reference_rows();
  r.baseline_rows = {{"TAPT (this run)", "-", format_ua_wa(0.8, 0.7), "-"}};
  r.cells[{1, 4, Pooling::average}] = {0.6, 0.6, "", ""};
  const RenderedReport out = render_report(r);
  const auto ref = out.text.find("75.7/74.7");
  const auto base = out.text.find("80.0/70.0");
  const auto cell = out.text.find("60.0/60.0");
  ASSERT_NE(ref, std::string::npos);
  EXPECT_LT(ref, base);
  EXPECT_LT(base, cell);
  EXPECT_EQ(out.json["reference_rows"].size(), 3u);
  EXPECT_EQ(out.json["baseline_rows"].size(), 1u);
}

TEST(FormatUaWa, OneDecimalPercent) {
  EXPECT_EQ(format_ua_wa(0.757, 0.747), "75.7/74.7");
  EXPECT_EQ(format_ua_wa(1.0, 0.0), "100.0/0.0");
}

TEST(Pooling, StringRoundTrip) {
  for (Pooling p : {Pooling::attention, Pooling::average}) EXPECT_EQ(pooling_from_string(to_string(p)), p);
  EXPECT_THROW(pooling_from_string("max"), ConfigError);
}

}  // namespace
}  // namespace emoalign
