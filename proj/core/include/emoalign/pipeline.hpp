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
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoalign/corpus.hpp"
#include "emoalign/encoder.hpp"
#include "emoalign/eval.hpp"
#include "emoalign/finetune.hpp"
#include "emoalign/pretrain.hpp"

namespace emoalign {

struct ExperimentConfig {
  // Corpus: generated from `corpus` unless corpus_path names an existing file.
  GenerationSpec corpus;
  std::filesystem::path corpus_path;
  std::string encoder_preset = "desk";
  std::size_t tap_layer = 2;
  std::size_t num_clusters = 4;
  std::size_t base_clusters = 4;  // codebook over base features, phase 1
  Pooling pooling = Pooling::attention;
  // Fit codebooks on every speaker instead of the fold's training speakers.
  bool leaky_codebook = false;
  std::size_t kmeans_max_iters = 100;
  TaptConfig tapt = TaptConfig::desk();
  PretrainConfig pretrain = PretrainConfig::desk();
  FinetuneConfig finetune = FinetuneConfig::desk();
  // Master seed. Phase seeds are derived from it by derive_seeds().
  std::uint64_t seed = 0;
  std::vector<std::size_t> folds;  // empty: all five
  std::filesystem::path output_dir = "emoalign_out";
  std::size_t threads = 1;

  // Ablation grid.
  std::vector<std::size_t> grid_layers = {1, 2, 3};
  std::vector<std::size_t> grid_clusters = {4, 8, 16};
  std::vector<Pooling> grid_poolings = {Pooling::average, Pooling::attention};
  std::vector<std::uint64_t> grid_seeds = {0};

  void validate() const;
  EncoderConfig encoder_config(std::size_t input_dim) const;
  // Sets every phase seed from `seed`.
  void derive_seeds();
  // EMOALIGN_OUTPUT_DIR and EMOALIGN_THREADS.
  void apply_env_overrides();
  std::vector<std::size_t> fold_indices() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// File layout under an output directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path corpus() const;
  std::filesystem::path fold_dir(std::size_t fold) const;
  std::filesystem::path base_codebook(std::size_t fold) const;
  std::filesystem::path phase1_checkpoint(std::size_t fold) const;
  std::filesystem::path tapt_metrics(std::size_t fold) const;
  std::filesystem::path tapt_loss(std::size_t fold) const;
  std::filesystem::path cell_dir(std::size_t fold, std::size_t layer, std::size_t K) const;
  std::filesystem::path codebook(std::size_t fold, std::size_t layer, std::size_t K) const;
  std::filesystem::path pseudo_labels(std::size_t fold, std::size_t layer, std::size_t K) const;
  std::filesystem::path cpt_checkpoint(std::size_t fold, std::size_t layer, std::size_t K) const;
  std::filesystem::path pretrain_loss(std::size_t fold, std::size_t layer, std::size_t K) const;
  std::filesystem::path pretrain_eval(std::size_t fold, std::size_t layer, std::size_t K) const;
  std::filesystem::path metrics(std::size_t fold, std::size_t layer, std::size_t K, Pooling p) const;
  std::filesystem::path summary(std::size_t layer, std::size_t K, Pooling p) const;
};

// Phase commands. Each reads its inputs from the run directory, checks
// their provenance ids, and writes its outputs there.
std::filesystem::path cmd_gen_corpus(const ExperimentConfig& cfg);
void cmd_tapt(const ExperimentConfig& cfg, std::size_t fold);
void cmd_cluster(const ExperimentConfig& cfg, std::size_t fold);
void cmd_pretrain(const ExperimentConfig& cfg, std::size_t fold);
void cmd_finetune(const ExperimentConfig& cfg, std::size_t fold);

struct EvalSummary {
  std::vector<std::size_t> folds;
  std::vector<Metrics> per_fold;
  double ua = 0.0;  // unweighted mean over folds
  double wa = 0.0;
  // Phase-1 (average pooling) baseline over the same folds, when available.
  std::optional<double> tapt_ua;
  std::optional<double> tapt_wa;
  nlohmann::json document;  // the summary as written
};

// Aggregates the per-fold metrics for the configured cell and writes the
// summary and the report files. All five folds go through
// aggregate_folds; a fold subset is averaged the same way and flagged
// partial.
EvalSummary cmd_eval(const ExperimentConfig& cfg);

// All phases for every configured fold, then evaluation.
EvalSummary run_experiment(const ExperimentConfig& cfg);

struct AblationResult {
  AblationReport report;
  RenderedReport rendered;
};

// Runs the grid for every seed and fold; each cell holds the median over
// seeds of the fold-mean UA and WA. Failed cells keep their error.
AblationResult run_ablation(const ExperimentConfig& cfg);

Corpus load_or_generate_corpus(const ExperimentConfig& cfg);

}  // namespace emoalign
