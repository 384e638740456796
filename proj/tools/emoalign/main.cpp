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


#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "emoalign/checkpoint.hpp"
#include "emoalign/error.hpp"
#include "emoalign/pipeline.hpp"

namespace {

using emoalign::ExperimentConfig;

struct Options {
  std::string config;
  std::string output_dir;
  std::optional<std::size_t> fold;
  std::optional<std::size_t> tap_layer;
  std::optional<std::size_t> clusters;
  std::optional<std::string> pooling;
  std::optional<std::uint64_t> seed;
  bool leaky = false;
  bool verbose = false;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg;
  if (!o.config.empty()) cfg = emoalign::load_experiment_config(o.config);
  cfg.apply_env_overrides();
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  if (o.tap_layer) cfg.tap_layer = *o.tap_layer;
  if (o.clusters) cfg.num_clusters = *o.clusters;
  if (o.pooling) cfg.pooling = emoalign::pooling_from_string(*o.pooling);
  if (o.seed) cfg.seed = *o.seed;
  if (o.leaky) cfg.leaky_codebook = true;
  cfg.derive_seeds();
  return cfg;
}

template <typename Fn>
void for_folds(const Options& o, const ExperimentConfig& cfg, const char* phase, Fn fn) {
  const auto folds = o.fold ? std::vector<std::size_t>{*o.fold} : cfg.fold_indices();
  for (std::size_t f : folds) {
    spdlog::info("{}: fold {}", phase, f);
    fn(cfg, f);
  }
}

void print_error(const std::string& kind, const std::string& message) {
  const nlohmann::json rec = {{"error", {{"kind", kind}, {"message", message}}}};
  std::cerr << rec.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"emoalign: frame-level emotion alignment pipeline on synthetic speech features"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool per_fold) {
    sub->add_option("-c,--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("-o,--output-dir", o.output_dir, "output directory (overrides config and EMOALIGN_OUTPUT_DIR)");
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_flag("-v,--verbose", o.verbose, "debug logging");
    if (per_fold) sub->add_option("--fold", o.fold, "run a single fold (0-4)")->check(CLI::Range(0, 4));
  };
  auto add_cell = [&](CLI::App* sub) {
    sub->add_option("--tap-layer", o.tap_layer, "transformer layer clustered for pseudo labels");
    sub->add_option("-k,--clusters", o.clusters, "number of k-means clusters");
    sub->add_flag("--leaky", o.leaky, "fit codebooks on all speakers");
  };

  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  add_common(gen, false);
  auto* tapt = app.add_subcommand("tapt", "phase 1: task-adaptive pretraining and average-pooling fine-tuning");
  add_common(tapt, true);
  tapt->add_flag("--leaky", o.leaky, "fit the base codebook on all speakers");
  auto* cluster = app.add_subcommand("cluster", "fit a codebook on a phase-1 layer and write pseudo labels");
  add_common(cluster, true);
  add_cell(cluster);
  auto* pretrain = app.add_subcommand("pretrain", "phase 2: masked prediction of frame pseudo labels");
  add_common(pretrain, true);
  add_cell(pretrain);
  auto* finetune = app.add_subcommand("finetune", "phase 3: pooled fine-tuning for emotion classes");
  add_common(finetune, true);
  add_cell(finetune);
  finetune->add_option("--pooling", o.pooling, "attention or average");
  auto* eval = app.add_subcommand("eval", "aggregate fold metrics and write the report");
  add_common(eval, false);
  add_cell(eval);
  eval->add_option("--pooling", o.pooling, "attention or average");
  auto* run = app.add_subcommand("run", "all phases for every fold, then eval");
  add_common(run, false);
  add_cell(run);
  run->add_option("--pooling", o.pooling, "attention or average");
  auto* ablation = app.add_subcommand("ablation", "layer x clusters x pooling grid");
  add_common(ablation, false);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(o.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    const ExperimentConfig cfg = resolve(o);
    if (gen->parsed()) {
      std::cout << emoalign::cmd_gen_corpus(cfg).string() << '\n';
    } else if (tapt->parsed()) {
      for_folds(o, cfg, "tapt", emoalign::cmd_tapt);
    } else if (cluster->parsed()) {
      for_folds(o, cfg, "cluster", emoalign::cmd_cluster);
    } else if (pretrain->parsed()) {
      for_folds(o, cfg, "pretrain", emoalign::cmd_pretrain);
    } else if (finetune->parsed()) {
      for_folds(o, cfg, "finetune", emoalign::cmd_finetune);
    } else if (eval->parsed() || run->parsed()) {
      const auto s = eval->parsed() ? emoalign::cmd_eval(cfg) : emoalign::run_experiment(cfg);
      std::cout << emoalign::read_file(cfg.output_dir / "report.txt");
      spdlog::info("UA {:.4f} WA {:.4f} over {} fold(s)", s.ua, s.wa, s.folds.size());
    } else if (ablation->parsed()) {
      std::cout << emoalign::run_ablation(cfg).rendered.text;
    }
  } catch (const emoalign::Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
