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

#include "emoalign/corpus.hpp"
#include "emoalign/tensor.hpp"

namespace emoalign {

enum class FeatureKind { transformer_layer, base_features };

std::string to_string(FeatureKind k);
FeatureKind feature_kind_from_string(const std::string& s);

struct CodebookProvenance {
  std::size_t tap_layer = 0;  // 0 for base features
  std::string source_checkpoint;
  std::uint64_t seed = 0;
  FeatureKind feature_kind = FeatureKind::base_features;
  int fold_index = -1;  // -1: not tied to a fold
  std::vector<std::string> fit_speakers;
  bool leaky = false;  // fit on data outside the fold's training speakers

  friend bool operator==(const CodebookProvenance&, const CodebookProvenance&) = default;
};

struct Codebook {
  Tensor centroids;  // K x D
  CodebookProvenance provenance;
  double inertia = 0.0;

  std::size_t K() const { return centroids.rows(); }
  std::size_t dim() const { return centroids.cols(); }
  // Content id over centroids and provenance.
  std::string id() const;
  void validate() const;

  friend bool operator==(const Codebook&, const Codebook&) = default;
};

struct KMeansOptions {
  std::size_t K = 4;
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
  double tol = 1e-6;
};

struct KMeansResult {
  Codebook codebook;
  // Nearest-centroid codes of the fit points under the final centroids.
  std::vector<std::size_t> assignments;
  // Sum of squared distances after each assignment step; non-increasing.
  std::vector<double> inertia_history;
  std::size_t iterations = 0;
};

// Lloyd iterations from seeded k-means++ initialization. An empty cluster
// is re-seeded with the point farthest from its current centroid. Once Lloyd
// settles, single-point transfers that lower inertia are applied and Lloyd
// resumes; the loop stops when neither changes anything (or at max_iters).
KMeansResult kmeans_fit(const Tensor& points, const KMeansOptions& options);

// Nearest centroid per row; ties go to the lowest index.
std::vector<std::size_t> nearest_centroids(const Tensor& centroids, const Tensor& frames);

struct PseudoLabelSeq {
  std::string utterance_id;
  std::string codebook_id;
  std::vector<std::size_t> codes;
  friend bool operator==(const PseudoLabelSeq&, const PseudoLabelSeq&) = default;
};

PseudoLabelSeq kmeans_assign(const Codebook& codebook, const Tensor& frames,
                             std::string utterance_id = {});

struct ClusterDiagnostics {
  double purity = 0.0;
  std::vector<std::array<std::size_t, kNumEmotions>> label_histogram;  // per cluster
  double code_transition_rate = 0.0;  // fraction of adjacent frame pairs with differing codes
  std::size_t total_frames = 0;
};

// Purity is sum_k max_e |cluster k with emotion e| / total frames, using
// frame_truth when present and the utterance label otherwise. Every
// corpus utterance must be covered.
ClusterDiagnostics cluster_diagnostics(const std::vector<PseudoLabelSeq>& labels,
                                       const Corpus& corpus, std::size_t K);

// Codebook file: one JSON document
//   {"format":"emoalign-codebook","version":1,"id","K","dim","inertia",
//    "centroids":[row-major],"provenance":{...}}
std::string encode_codebook(const Codebook& cb);
Codebook decode_codebook(std::string_view text);
void save_codebook(const Codebook& cb, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

// Pseudo-label file: line-delimited JSON, a header record then one
// record per utterance.
//   {"record":"header","format":"emoalign-pseudo-labels","version":1,"codebook_id","K","count"}
//   {"record":"labels","utterance_id","codebook_id","codes":[...]}
std::string encode_pseudo_labels(const std::vector<PseudoLabelSeq>& labels, std::size_t K);
std::vector<PseudoLabelSeq> decode_pseudo_labels(std::string_view text, std::size_t* K = nullptr);
void save_pseudo_labels(const std::vector<PseudoLabelSeq>& labels, std::size_t K,
                        const std::filesystem::path& path);
std::vector<PseudoLabelSeq> load_pseudo_labels(const std::filesystem::path& path,
                                               std::size_t* K = nullptr);

}  // namespace emoalign
