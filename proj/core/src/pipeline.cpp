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


#include "emoalign/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <set>

#include <fmt/format.h>

#include "emoalign/checkpoint.hpp"
#include "emoalign/cluster.hpp"
#include "emoalign/error.hpp"
#include "emoalign/training.hpp"

namespace emoalign {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  corpus.validate();
  const EncoderConfig enc = encoder_config(corpus.feature_dim);
  TapSpec{tap_layer}.validate(enc);
  if (num_clusters < 2) throw ConfigError("num_clusters must be >= 2");
  if (base_clusters < 2) throw ConfigError("base_clusters must be >= 2");
  tapt.validate();
  pretrain.validate();
  finetune.validate();
  for (std::size_t f : folds) {
    if (f >= 5) throw ConfigError(fmt::format("fold index {} outside [0, 4]", f));
  }
  if (output_dir.empty()) throw ConfigError("output_dir must be set");
  for (std::size_t l : grid_layers) TapSpec{l}.validate(enc);
  for (std::size_t k : grid_clusters) {
    if (k < 2) throw ConfigError("grid cluster counts must be >= 2");
  }
}

EncoderConfig ExperimentConfig::encoder_config(std::size_t input_dim) const {
  return EncoderConfig::preset(encoder_preset, input_dim);
}

void ExperimentConfig::derive_seeds() {
  tapt.pretrain.seed = seed * 1000 + 11;
  tapt.finetune.seed = seed * 1000 + 12;
  pretrain.seed = seed * 1000 + 21;
  finetune.seed = seed * 1000 + 31;
}

void ExperimentConfig::apply_env_overrides() {
  if (const char* dir = std::getenv("EMOALIGN_OUTPUT_DIR"); dir && *dir) output_dir = dir;
  if (const char* t = std::getenv("EMOALIGN_THREADS"); t && *t) {
    try {
      threads = std::max<std::size_t>(1, std::stoul(t));
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("EMOALIGN_THREADS: not a number: '{}'", t));
    }
  }
}

std::vector<std::size_t> ExperimentConfig::fold_indices() const {
  if (!folds.empty()) return folds;
  return {0, 1, 2, 3, 4};
}

namespace {

std::uint64_t init_seed(const ExperimentConfig& c) { return c.seed * 1000 + 1; }
std::uint64_t kmeans_seed(const ExperimentConfig& c) { return c.seed * 1000 + 2; }
std::uint64_t head_seed(const ExperimentConfig& c) { return c.seed * 1000 + 3; }
std::uint64_t eval_seed(const ExperimentConfig& c) { return c.seed * 1000 + 4; }

std::vector<std::string> pooling_names(const std::vector<Pooling>& ps) {
  std::vector<std::string> out;
  for (Pooling p : ps) out.push_back(to_string(p));
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"corpus", c.corpus},
       {"corpus_path", c.corpus_path.string()},
       {"encoder_preset", c.encoder_preset},
       {"tap_layer", c.tap_layer},
       {"num_clusters", c.num_clusters},
       {"base_clusters", c.base_clusters},
       {"pooling", to_string(c.pooling)},
       {"leaky_codebook", c.leaky_codebook},
       {"kmeans_max_iters", c.kmeans_max_iters},
       {"tapt", c.tapt},
       {"pretrain", c.pretrain},
       {"finetune", c.finetune},
       {"seed", c.seed},
       {"derived_seeds",
        {{"init", init_seed(c)},
         {"kmeans", kmeans_seed(c)},
         {"heads", head_seed(c)},
         {"masked_eval", eval_seed(c)},
         {"tapt_pretrain", c.tapt.pretrain.seed},
         {"tapt_finetune", c.tapt.finetune.seed},
         {"pretrain", c.pretrain.seed},
         {"finetune", c.finetune.seed}}},
       {"folds", c.folds},
       {"output_dir", c.output_dir.string()},
       {"threads", c.threads},
       {"grid",
        {{"layers", c.grid_layers},
         {"clusters", c.grid_clusters},
         {"poolings", pooling_names(c.grid_poolings)},
         {"seeds", c.grid_seeds}}}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  if (j.contains("corpus")) c.corpus = j.at("corpus").get<GenerationSpec>();
  c.corpus_path = j.value("corpus_path", std::string{});
  c.encoder_preset = j.value("encoder_preset", c.encoder_preset);
  c.tap_layer = j.value("tap_layer", c.tap_layer);
  c.num_clusters = j.value("num_clusters", c.num_clusters);
  c.base_clusters = j.value("base_clusters", c.base_clusters);
  c.pooling = pooling_from_string(j.value("pooling", to_string(c.pooling)));
  c.leaky_codebook = j.value("leaky_codebook", c.leaky_codebook);
  c.kmeans_max_iters = j.value("kmeans_max_iters", c.kmeans_max_iters);
  if (j.contains("tapt")) c.tapt = j.at("tapt").get<TaptConfig>();
  if (j.contains("pretrain")) c.pretrain = j.at("pretrain").get<PretrainConfig>();
  if (j.contains("finetune")) c.finetune = j.at("finetune").get<FinetuneConfig>();
  c.seed = j.value("seed", c.seed);
  c.folds = j.value("folds", c.folds);
  c.output_dir = j.value("output_dir", c.output_dir.string());
  c.threads = j.value("threads", c.threads);
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    c.grid_layers = g.value("layers", c.grid_layers);
    c.grid_clusters = g.value("clusters", c.grid_clusters);
    if (g.contains("poolings")) {
      c.grid_poolings.clear();
      for (const auto& p : g.at("poolings")) c.grid_poolings.push_back(pooling_from_string(p.get<std::string>()));
    }
    c.grid_seeds = g.value("seeds", c.grid_seeds);
  }
  c.derive_seeds();
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text).get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

// ---------------------------------------------------------------------------
// Layout

fs::path RunPaths::corpus() const { return root / "corpus.jsonl"; }
fs::path RunPaths::fold_dir(std::size_t fold) const { return root / fmt::format("fold{}", fold); }
fs::path RunPaths::base_codebook(std::size_t fold) const { return fold_dir(fold) / "base_codebook.json"; }
fs::path RunPaths::phase1_checkpoint(std::size_t fold) const { return fold_dir(fold) / "phase1.ckpt"; }
fs::path RunPaths::tapt_metrics(std::size_t fold) const { return fold_dir(fold) / "tapt_metrics.jsonl"; }
fs::path RunPaths::tapt_loss(std::size_t fold) const { return fold_dir(fold) / "tapt_loss.tsv"; }
fs::path RunPaths::cell_dir(std::size_t fold, std::size_t layer, std::size_t K) const {
  return fold_dir(fold) / fmt::format("layer{}_k{}", layer, K);
}
fs::path RunPaths::codebook(std::size_t fold, std::size_t layer, std::size_t K) const {
  return cell_dir(fold, layer, K) / "codebook.json";
}
fs::path RunPaths::pseudo_labels(std::size_t fold, std::size_t layer, std::size_t K) const {
  return cell_dir(fold, layer, K) / "pseudo_labels.jsonl";
}
fs::path RunPaths::cpt_checkpoint(std::size_t fold, std::size_t layer, std::size_t K) const {
  return cell_dir(fold, layer, K) / "cpt.ckpt";
}
fs::path RunPaths::pretrain_loss(std::size_t fold, std::size_t layer, std::size_t K) const {
  return cell_dir(fold, layer, K) / "pretrain_loss.tsv";
}
fs::path RunPaths::pretrain_eval(std::size_t fold, std::size_t layer, std::size_t K) const {
  return cell_dir(fold, layer, K) / "pretrain_eval.json";
}
fs::path RunPaths::metrics(std::size_t fold, std::size_t layer, std::size_t K, Pooling p) const {
  return cell_dir(fold, layer, K) / to_string(p) / "metrics.jsonl";
}
fs::path RunPaths::summary(std::size_t layer, std::size_t K, Pooling p) const {
  return root / fmt::format("summary_layer{}_k{}_{}.json", layer, K, to_string(p));
}

// ---------------------------------------------------------------------------
// Phases

namespace {

ExperimentConfig effective(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.derive_seeds();
  c.validate();
  set_num_threads(c.threads);
  return c;
}

struct LoadedCorpus {
  Corpus corpus;
  std::string id;
};

LoadedCorpus load_run_corpus(const RunPaths& paths) {
  if (!fs::exists(paths.corpus())) {
    throw InputError(fmt::format("{} not found; run gen-corpus first", paths.corpus().string()));
  }
  return {load_corpus(paths.corpus()), short_id(read_file(paths.corpus()))};
}

FoldPlan fold_plan(const Corpus& corpus, std::size_t fold) {
  const auto plans = make_folds(corpus);
  if (fold >= plans.size()) throw FoldError(fmt::format("fold {} outside [0, {})", fold, plans.size()));
  return plans[fold];
}

Tensor stack_rows(const std::vector<const Tensor*>& parts) {
  std::size_t rows = 0;
  const std::size_t cols = parts.empty() ? 0 : parts.front()->cols();
  for (const Tensor* t : parts) rows += t->rows();
  Tensor out = Tensor::zeros(rows, cols);
  auto dst = out.data().begin();
  for (const Tensor* t : parts) dst = std::copy(t->data().begin(), t->data().end(), dst);
  return out;
}

std::vector<std::size_t> all_indices(const Corpus& corpus) {
  std::vector<std::size_t> v(corpus.utterances.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

std::vector<std::string> speakers_of(const Corpus& corpus, const std::vector<std::size_t>& indices) {
  std::set<std::string> s;
  for (std::size_t i : indices) s.insert(corpus.utterances[i].speaker);
  return {s.begin(), s.end()};
}

// Config as recorded in artifacts. Where a run lives and how many threads
// it uses do not change its outputs, so they are left out of ids and hashes.
nlohmann::json artifact_config(const ExperimentConfig& cfg) {
  nlohmann::json j = cfg;
  j.erase("output_dir");
  j.erase("threads");
  return j;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ProvenanceError(what);
}

// Per-phase manifest: config, input ids and output hashes.
void write_manifest(const fs::path& dir, const std::string& phase, const ExperimentConfig& cfg,
                    std::size_t fold, const nlohmann::json& inputs, const std::vector<fs::path>& outputs) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& p : outputs) out[p.filename().string()] = file_sha256(p);
  const nlohmann::json m = {{"phase", phase}, {"fold", fold}, {"config", artifact_config(cfg)}, {"inputs", inputs}, {"outputs", out}};
  write_file(dir / fmt::format("manifest.{}.json", phase), m.dump(2) + "\n");
}

void check_leakage(const ExperimentConfig& cfg, const Codebook& cb, const Corpus& corpus,
                   const FoldPlan& plan) {
  if (cfg.leaky_codebook) return;
  require(!cb.provenance.leaky, "codebook was fit with the leaky variant but leaky_codebook is off");
  const auto allowed = train_speakers(corpus, plan);
  for (const auto& s : cb.provenance.fit_speakers) {
    require(std::find(allowed.begin(), allowed.end(), s) != allowed.end(),
            fmt::format("codebook {} was fit on speaker {} outside fold {} training speakers", cb.id(), s,
                        plan.fold_index));
  }
}

const Checkpoint load_phase1(const RunPaths& paths, std::size_t fold, const std::string& corpus_id) {
  if (!fs::exists(paths.phase1_checkpoint(fold))) {
    throw InputError(fmt::format("{} not found; run tapt first", paths.phase1_checkpoint(fold).string()));
  }
  Checkpoint ck = load_checkpoint(paths.phase1_checkpoint(fold));
  require(ck.metadata.value("corpus_id", "") == corpus_id,
          fmt::format("phase-1 checkpoint {} was trained on corpus {}, not {}", ck.id,
                      ck.metadata.value("corpus_id", "?"), corpus_id));
  require(ck.metadata.value("fold", -1) == static_cast<int>(fold),
          fmt::format("phase-1 checkpoint {} belongs to another fold", ck.id));
  return ck;
}

}  // namespace

Corpus load_or_generate_corpus(const ExperimentConfig& cfg) {
  if (!cfg.corpus_path.empty()) return load_corpus(cfg.corpus_path);
  return generate_corpus(cfg.corpus);
}

fs::path cmd_gen_corpus(const ExperimentConfig& config) {
  const ExperimentConfig cfg = effective(config);
  const RunPaths paths{cfg.output_dir};
  const Corpus corpus = load_or_generate_corpus(cfg);
  if (corpus.feature_dim != cfg.corpus.feature_dim && cfg.corpus_path.empty()) {
    throw ConfigError("generated corpus feature_dim mismatch");
  }
  save_corpus(corpus, paths.corpus());
  write_manifest(cfg.output_dir, "gen-corpus", cfg, 0, nlohmann::json::object(), {paths.corpus()});
  return paths.corpus();
}

void cmd_tapt(const ExperimentConfig& config, std::size_t fold) {
  const ExperimentConfig cfg = effective(config);
  const RunPaths paths{cfg.output_dir};
  const auto [corpus, corpus_id] = load_run_corpus(paths);
  const EncoderConfig enc = cfg.encoder_config(corpus.feature_dim);
  const FoldPlan plan = fold_plan(corpus, fold);
  const FoldPartition part = partition(corpus, plan);

  const auto fit = cfg.leaky_codebook ? all_indices(corpus) : part.train;
  std::vector<Tensor> feats;
  for (std::size_t i : fit) feats.push_back(base_features(enc, corpus.utterances[i].frames));
  std::vector<const Tensor*> ptrs;
  for (const auto& f : feats) ptrs.push_back(&f);
  KMeansResult km = kmeans_fit(stack_rows(ptrs), {cfg.base_clusters, kmeans_seed(cfg), cfg.kmeans_max_iters, 1e-6});
  Codebook cb = std::move(km.codebook);
  cb.provenance = {0, "corpus:" + corpus_id, kmeans_seed(cfg), FeatureKind::base_features,
                   static_cast<int>(fold), speakers_of(corpus, fit), cfg.leaky_codebook};
  save_codebook(cb, paths.base_codebook(fold));

  ParameterSet params = init_encoder_params(enc, init_seed(cfg));
  TaptResult res = run_tapt(std::move(params), enc, corpus, plan, cb, cfg.tapt);

  const nlohmann::json meta = {{"phase", "tapt"},
                               {"fold", fold},
                               {"corpus_id", corpus_id},
                               {"base_codebook_id", cb.id()},
                               {"encoder", enc},
                               {"best_epoch", res.finetune.best_epoch},
                               {"config", artifact_config(cfg)}};
  const std::string ckpt_id = save_checkpoint(paths.phase1_checkpoint(fold), res.params, meta);
  nlohmann::json record = metrics_record(fold, res.finetune.test);
  record["pooling"] = to_string(Pooling::average);
  record["best_epoch"] = res.finetune.best_epoch;
  record["validation_UA"] = res.finetune.validation.ua;
  record["checkpoint_id"] = ckpt_id;
  write_file(paths.tapt_metrics(fold), record.dump() + "\n");
  write_file(paths.tapt_loss(fold), encode_loss_trajectory(res.loss_trajectory));
  write_manifest(paths.fold_dir(fold), "tapt", cfg, fold, {{"corpus_id", corpus_id}},
                 {paths.base_codebook(fold), paths.phase1_checkpoint(fold), paths.tapt_metrics(fold),
                  paths.tapt_loss(fold)});
}

void cmd_cluster(const ExperimentConfig& config, std::size_t fold) {
  const ExperimentConfig cfg = effective(config);
  const RunPaths paths{cfg.output_dir};
  const auto [corpus, corpus_id] = load_run_corpus(paths);
  const EncoderConfig enc = cfg.encoder_config(corpus.feature_dim);
  const FoldPlan plan = fold_plan(corpus, fold);
  const FoldPartition part = partition(corpus, plan);
  const Checkpoint ck = load_phase1(paths, fold, corpus_id);

  std::vector<const Utterance*> utts;
  for (const auto& u : corpus.utterances) utts.push_back(&u);
  const auto emb = layer_embeddings(utts, ck.params, enc, TapSpec{cfg.tap_layer});

  const auto fit = cfg.leaky_codebook ? all_indices(corpus) : part.train;
  std::vector<const Tensor*> ptrs;
  for (std::size_t i : fit) ptrs.push_back(&emb[i]);
  KMeansResult km = kmeans_fit(stack_rows(ptrs), {cfg.num_clusters, kmeans_seed(cfg), cfg.kmeans_max_iters, 1e-6});
  Codebook cb = std::move(km.codebook);
  cb.provenance = {cfg.tap_layer, ck.id, kmeans_seed(cfg), FeatureKind::transformer_layer,
                   static_cast<int>(fold), speakers_of(corpus, fit), cfg.leaky_codebook};

  std::vector<PseudoLabelSeq> labels;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    labels.push_back(kmeans_assign(cb, emb[i], corpus.utterances[i].id));
  }
  const ClusterDiagnostics diag = cluster_diagnostics(labels, corpus, cfg.num_clusters);

  const auto cb_path = paths.codebook(fold, cfg.tap_layer, cfg.num_clusters);
  const auto pl_path = paths.pseudo_labels(fold, cfg.tap_layer, cfg.num_clusters);
  const auto diag_path = paths.cell_dir(fold, cfg.tap_layer, cfg.num_clusters) / "cluster_diagnostics.json";
  save_codebook(cb, cb_path);
  save_pseudo_labels(labels, cfg.num_clusters, pl_path);
  const nlohmann::json d = {{"codebook_id", cb.id()},
                            {"purity", diag.purity},
                            {"code_transition_rate", diag.code_transition_rate},
                            {"total_frames", diag.total_frames},
                            {"label_histogram", diag.label_histogram},
                            {"inertia_history", km.inertia_history},
                            {"iterations", km.iterations}};
  write_file(diag_path, d.dump(2) + "\n");
  write_manifest(paths.cell_dir(fold, cfg.tap_layer, cfg.num_clusters), "cluster", cfg, fold,
                 {{"corpus_id", corpus_id}, {"phase1_id", ck.id}}, {cb_path, pl_path, diag_path});
}

void cmd_pretrain(const ExperimentConfig& config, std::size_t fold) {
  const ExperimentConfig cfg = effective(config);
  const RunPaths paths{cfg.output_dir};
  const auto [corpus, corpus_id] = load_run_corpus(paths);
  const EncoderConfig enc = cfg.encoder_config(corpus.feature_dim);
  const FoldPlan plan = fold_plan(corpus, fold);
  const FoldPartition part = partition(corpus, plan);
  const Checkpoint ck = load_phase1(paths, fold, corpus_id);

  const auto cb_path = paths.codebook(fold, cfg.tap_layer, cfg.num_clusters);
  const auto pl_path = paths.pseudo_labels(fold, cfg.tap_layer, cfg.num_clusters);
  if (!fs::exists(cb_path) || !fs::exists(pl_path)) {
    throw InputError(fmt::format("{} not found; run cluster first", cb_path.parent_path().string()));
  }
  const Codebook cb = load_codebook(cb_path);
  std::size_t K = 0;
  const auto labels = load_pseudo_labels(pl_path, &K);
  const std::string cb_id = cb.id();
  require(cb.provenance.feature_kind == FeatureKind::transformer_layer,
          fmt::format("codebook {} was not fit on transformer-layer features", cb_id));
  require(cb.provenance.tap_layer == cfg.tap_layer,
          fmt::format("codebook {} was fit at layer {}, config declares layer {}", cb_id,
                      cb.provenance.tap_layer, cfg.tap_layer));
  require(cb.K() == cfg.num_clusters && K == cfg.num_clusters,
          fmt::format("codebook {} has K={}, config declares K={}", cb_id, cb.K(), cfg.num_clusters));
  require(cb.provenance.source_checkpoint == ck.id,
          fmt::format("codebook {} was built from checkpoint {}, not {}", cb_id,
                      cb.provenance.source_checkpoint, ck.id));
  require(cb.provenance.fold_index == static_cast<int>(fold),
          fmt::format("codebook {} belongs to fold {}", cb_id, cb.provenance.fold_index));
  for (const auto& l : labels) {
    require(l.codebook_id == cb_id, fmt::format("pseudo labels for {} reference codebook {}, expected {}",
                                                l.utterance_id, l.codebook_id, cb_id));
  }
  check_leakage(cfg, cb, corpus, plan);

  EncoderConfig mlm_cfg = enc;
  mlm_cfg.num_clusters = cfg.num_clusters;
  ParameterSet params = ck.params;
  reset_mlm_head(params, mlm_cfg, cfg.pretrain.seed);
  const auto train = make_examples(corpus, part.train, labels, mlm_cfg);
  PretrainResult res = run_pretrain(std::move(params), mlm_cfg, train, cfg.pretrain);

  std::vector<std::size_t> held_out = part.val;
  held_out.insert(held_out.end(), part.test.begin(), part.test.end());
  const auto held = make_examples(corpus, held_out, labels, mlm_cfg);
  const double acc = masked_prediction_accuracy(res.params, mlm_cfg, held, cfg.pretrain.mask_prob,
                                                cfg.pretrain.span_length, eval_seed(cfg));
  nlohmann::json eval = {{"codebook_id", cb_id},
                         {"held_out_masked_accuracy", acc},
                         {"chance", 1.0 / static_cast<double>(cfg.num_clusters)},
                         {"steps", res.loss_trajectory.size()}};
  const std::size_t n = res.loss_trajectory.size();
  if (n >= 50) {
    eval["smoothed_loss_step50"] = smoothed_loss(res.loss_trajectory, 50, 50);
    eval["smoothed_loss_end"] = smoothed_loss(res.loss_trajectory, n, 50);
  }

  const nlohmann::json meta = {{"phase", "pretrain"},
                               {"fold", fold},
                               {"corpus_id", corpus_id},
                               {"phase1_id", ck.id},
                               {"codebook_id", cb_id},
                               {"tap_layer", cfg.tap_layer},
                               {"num_clusters", cfg.num_clusters},
                               {"encoder", mlm_cfg},
                               {"config", artifact_config(cfg)}};
  const auto ckpt_path = paths.cpt_checkpoint(fold, cfg.tap_layer, cfg.num_clusters);
  const auto loss_path = paths.pretrain_loss(fold, cfg.tap_layer, cfg.num_clusters);
  const auto eval_path = paths.pretrain_eval(fold, cfg.tap_layer, cfg.num_clusters);
  save_checkpoint(ckpt_path, res.params, meta);
  write_file(loss_path, encode_loss_trajectory(res.loss_trajectory));
  write_file(eval_path, eval.dump(2) + "\n");
  write_manifest(paths.cell_dir(fold, cfg.tap_layer, cfg.num_clusters), "pretrain", cfg, fold,
                 {{"corpus_id", corpus_id}, {"phase1_id", ck.id}, {"codebook_id", cb_id}},
                 {ckpt_path, loss_path, eval_path});
}

void cmd_finetune(const ExperimentConfig& config, std::size_t fold) {
  const ExperimentConfig cfg = effective(config);
  const RunPaths paths{cfg.output_dir};
  const auto [corpus, corpus_id] = load_run_corpus(paths);
  const EncoderConfig enc = cfg.encoder_config(corpus.feature_dim);
  const FoldPlan plan = fold_plan(corpus, fold);

  const auto ckpt_path = paths.cpt_checkpoint(fold, cfg.tap_layer, cfg.num_clusters);
  const auto cb_path = paths.codebook(fold, cfg.tap_layer, cfg.num_clusters);
  if (!fs::exists(ckpt_path)) {
    throw InputError(fmt::format("{} not found; run pretrain first", ckpt_path.string()));
  }
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Codebook cb = load_codebook(cb_path);
  const std::string cb_id = cb.id();
  require(ck.metadata.value("codebook_id", "") == cb_id,
          fmt::format("checkpoint {} was pretrained against codebook {}, not {}", ck.id,
                      ck.metadata.value("codebook_id", "?"), cb_id));
  require(ck.metadata.value("corpus_id", "") == corpus_id,
          fmt::format("checkpoint {} was trained on another corpus", ck.id));
  require(ck.metadata.value("tap_layer", 0u) == cfg.tap_layer &&
              ck.metadata.value("num_clusters", 0u) == cfg.num_clusters,
          fmt::format("checkpoint {} does not match tap layer {} / K={}", ck.id, cfg.tap_layer,
                      cfg.num_clusters));
  check_leakage(cfg, cb, corpus, plan);

  ParameterSet params = ck.params;
  reset_ser_heads(params, enc, head_seed(cfg));
  FinetuneConfig ft = cfg.finetune;
  ft.pooling = cfg.pooling;
  FinetuneResult res = run_finetune(std::move(params), enc, corpus, plan, ft);

  nlohmann::json record = metrics_record(fold, res.test);
  record["pooling"] = to_string(cfg.pooling);
  record["best_epoch"] = res.best_epoch;
  record["validation_UA"] = res.validation.ua;
  if (cfg.pooling == Pooling::attention) {
    record["attention_alignment"] = attention_alignment(res.params, enc, corpus, partition(corpus, plan).test);
  }
  record["provenance"] = {{"corpus_id", corpus_id},
                          {"phase1_id", ck.metadata.value("phase1_id", "")},
                          {"codebook_id", cb_id},
                          {"cpt_id", ck.id}};
  const auto out = paths.metrics(fold, cfg.tap_layer, cfg.num_clusters, cfg.pooling);
  write_file(out, record.dump() + "\n");
  write_manifest(out.parent_path(), "finetune", cfg, fold, record["provenance"], {out});
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

nlohmann::json read_record(const fs::path& path) {
  if (!fs::exists(path)) throw InputError(fmt::format("{} not found; run finetune first", path.string()));
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::pair<double, double> fold_means(const std::vector<Metrics>& ms) {
  if (ms.size() == 5) {
    const FoldAggregate agg = aggregate_folds(ms);
    return {agg.ua_mean, agg.wa_mean};
  }
  double ua = 0.0, wa = 0.0;
  for (const auto& m : ms) {
    ua += m.ua;
    wa += m.wa;
  }
  return {ua / static_cast<double>(ms.size()), wa / static_cast<double>(ms.size())};
}

EvalSummary summarize(const ExperimentConfig& cfg) {
  const RunPaths paths{cfg.output_dir};
  EvalSummary s;
  s.folds = cfg.fold_indices();
  nlohmann::json records = nlohmann::json::array();
  std::vector<Metrics> tapt;
  for (std::size_t f : s.folds) {
    const auto rec = read_record(paths.metrics(f, cfg.tap_layer, cfg.num_clusters, cfg.pooling));
    require(rec.at("fold").get<std::size_t>() == f, fmt::format("metrics record for fold {} names fold {}", f,
                                                                 rec.at("fold").dump()));
    s.per_fold.push_back(metrics_from_record(rec));
    records.push_back(rec);
    if (fs::exists(paths.tapt_metrics(f))) tapt.push_back(metrics_from_record(read_record(paths.tapt_metrics(f))));
  }
  std::tie(s.ua, s.wa) = fold_means(s.per_fold);
  if (tapt.size() == s.folds.size()) {
    const auto [ua, wa] = fold_means(tapt);
    s.tapt_ua = ua;
    s.tapt_wa = wa;
  }
  s.document = {{"tap_layer", cfg.tap_layer},
                {"num_clusters", cfg.num_clusters},
                {"pooling", to_string(cfg.pooling)},
                {"folds", s.folds},
                {"partial", s.folds.size() != 5},
                {"UA_mean", s.ua},
                {"WA_mean", s.wa},
                {"per_fold", records},
                {"config", artifact_config(cfg)}};
  if (s.tapt_ua) s.document["tapt"] = {{"UA_mean", *s.tapt_ua}, {"WA_mean", *s.tapt_wa}};
  return s;
}

void write_report(const fs::path& root, const std::string& stem, const RenderedReport& r) {
  write_file(root / (stem + ".csv"), r.csv);
  write_file(root / (stem + ".txt"), r.text);
  write_file(root / (stem + ".json"), r.json.dump(2) + "\n");
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

EvalSummary cmd_eval(const ExperimentConfig& config) {
  const ExperimentConfig cfg = effective(config);
  const RunPaths paths{cfg.output_dir};
  EvalSummary s = summarize(cfg);
  write_file(paths.summary(cfg.tap_layer, cfg.num_clusters, cfg.pooling), s.document.dump(2) + "\n");

  AblationReport report;
  report.title = "emoalign cross-validated test results";
  report.reference_rows = full_scale_reference_rows();
  if (s.tapt_ua) report.baseline_rows.push_back({"TAPT (this run)", "-", format_ua_wa(*s.tapt_ua, *s.tapt_wa), ""});
  ReportCell cell;
  cell.ua = s.ua;
  cell.wa = s.wa;
  cell.provenance = paths.summary(cfg.tap_layer, cfg.num_clusters, cfg.pooling).filename().string();
  report.cells[{cfg.tap_layer, cfg.num_clusters, cfg.pooling}] = cell;
  write_report(cfg.output_dir, "report", render_report(report));
  return s;
}

EvalSummary run_experiment(const ExperimentConfig& config) {
  const ExperimentConfig cfg = effective(config);
  cmd_gen_corpus(cfg);
  for (std::size_t f : cfg.fold_indices()) {
    cmd_tapt(cfg, f);
    cmd_cluster(cfg, f);
    cmd_pretrain(cfg, f);
    cmd_finetune(cfg, f);
  }
  return cmd_eval(cfg);
}

AblationResult run_ablation(const ExperimentConfig& config) {
  const ExperimentConfig cfg = effective(config);
  if (cfg.grid_layers.empty() || cfg.grid_clusters.empty() || cfg.grid_poolings.empty() ||
      cfg.grid_seeds.empty()) {
    throw ConfigError("ablation grid is empty");
  }

  std::map<ReportKey, std::vector<double>> ua, wa;
  std::map<ReportKey, std::string> errors;
  std::map<ReportKey, std::vector<std::string>> summaries;
  std::vector<double> tapt_ua, tapt_wa;

  for (std::uint64_t seed : cfg.grid_seeds) {
    ExperimentConfig run = cfg;
    run.seed = seed;
    run.derive_seeds();
    run.output_dir = cfg.output_dir / fmt::format("seed{}", seed);
    cmd_gen_corpus(run);

    std::string phase1_error;
    for (std::size_t f : run.fold_indices()) {
      try {
        cmd_tapt(run, f);
      } catch (const Error& e) {
        phase1_error = fmt::format("seed {} fold {} tapt: {}", seed, f, e.what());
        break;
      }
    }
    for (std::size_t layer : cfg.grid_layers) {
      for (std::size_t K : cfg.grid_clusters) {
        ExperimentConfig cell = run;
        cell.tap_layer = layer;
        cell.num_clusters = K;
        std::string cell_error = phase1_error;
        if (cell_error.empty()) {
          for (std::size_t f : run.fold_indices()) {
            try {
              cmd_cluster(cell, f);
              cmd_pretrain(cell, f);
            } catch (const Error& e) {
              cell_error = fmt::format("seed {} fold {}: {}", seed, f, e.what());
              break;
            }
          }
        }
        for (Pooling p : cfg.grid_poolings) {
          const ReportKey key{layer, K, p};
          if (errors.count(key)) continue;
          if (!cell_error.empty()) {
            errors[key] = cell_error;
            continue;
          }
          cell.pooling = p;
          try {
            for (std::size_t f : run.fold_indices()) cmd_finetune(cell, f);
            const EvalSummary s = summarize(effective(cell));
            const auto path = RunPaths{run.output_dir}.summary(layer, K, p);
            write_file(path, s.document.dump(2) + "\n");
            ua[key].push_back(s.ua);
            wa[key].push_back(s.wa);
            summaries[key].push_back(fs::relative(path, cfg.output_dir).string());
            if (layer == cfg.grid_layers.front() && K == cfg.grid_clusters.front() &&
                p == cfg.grid_poolings.front() && s.tapt_ua) {
              tapt_ua.push_back(*s.tapt_ua);
              tapt_wa.push_back(*s.tapt_wa);
            }
          } catch (const Error& e) {
            errors[key] = fmt::format("seed {}: {}", seed, e.what());
          }
        }
      }
    }
  }

  AblationResult out;
  out.report.title = fmt::format("emoalign ablation, median over {} seed(s)", cfg.grid_seeds.size());
  out.report.reference_rows = full_scale_reference_rows();
  if (!tapt_ua.empty()) {
    out.report.baseline_rows.push_back(
        {"TAPT (this run)", "-", format_ua_wa(median(tapt_ua), median(tapt_wa)), ""});
  }
  for (std::size_t layer : cfg.grid_layers) {
    for (std::size_t K : cfg.grid_clusters) {
      for (Pooling p : cfg.grid_poolings) {
        const ReportKey key{layer, K, p};
        ReportCell c;
        if (auto it = errors.find(key); it != errors.end()) {
          c.error = it->second;
        } else {
          c.ua = median(ua[key]);
          c.wa = median(wa[key]);
        }
        std::string prov;
        for (const auto& s : summaries[key]) prov += (prov.empty() ? "" : ";") + s;
        c.provenance = prov;
        out.report.cells[key] = c;
      }
    }
  }
  out.rendered = render_report(out.report);
  write_report(cfg.output_dir, "ablation_report", out.rendered);
  return out;
}

}  // namespace emoalign
