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


#include "emoalign/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "emoalign/checkpoint.hpp"
#include "emoalign/error.hpp"

namespace emoalign {

std::string to_string(FeatureKind k) {
  return k == FeatureKind::transformer_layer ? "transformer_layer" : "base_features";
}

FeatureKind feature_kind_from_string(const std::string& s) {
  if (s == "transformer_layer") return FeatureKind::transformer_layer;
  if (s == "base_features") return FeatureKind::base_features;
  throw ParseError("unknown feature kind '" + s + "'");
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double inertia_of(const Tensor& points, const Tensor& centroids,
                  const std::vector<std::size_t>& assign) {
  double j = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    j += squared_distance(points.row(i), centroids.row(assign[i]));
  }
  return j;
}

nlohmann::json provenance_json(const CodebookProvenance& p) {
  return {{"tap_layer", p.tap_layer},       {"source_checkpoint", p.source_checkpoint},
          {"seed", p.seed},                 {"feature_kind", to_string(p.feature_kind)},
          {"fold_index", p.fold_index},     {"fit_speakers", p.fit_speakers},
          {"leaky", p.leaky}};
}

CodebookProvenance provenance_from_json(const nlohmann::json& j) {
  CodebookProvenance p;
  p.tap_layer = j.at("tap_layer").get<std::size_t>();
  p.source_checkpoint = j.at("source_checkpoint").get<std::string>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.feature_kind = feature_kind_from_string(j.at("feature_kind").get<std::string>());
  p.fold_index = j.at("fold_index").get<int>();
  p.fit_speakers = j.at("fit_speakers").get<std::vector<std::string>>();
  p.leaky = j.at("leaky").get<bool>();
  return p;
}

nlohmann::json codebook_body(const Codebook& cb) {
  return {{"K", cb.K()},
          {"dim", cb.dim()},
          {"inertia", cb.inertia},
          {"centroids", std::vector<double>(cb.centroids.data().begin(), cb.centroids.data().end())},
          {"provenance", provenance_json(cb.provenance)}};
}

}  // namespace

std::string Codebook::id() const { return short_id(codebook_body(*this).dump()); }

void Codebook::validate() const {
  if (centroids.rank() != 2 || centroids.rows() < 1) throw ConfigError("codebook: K must be >= 1");
  if (!centroids.all_finite()) throw NumericError("codebook: non-finite centroid");
}

std::vector<std::size_t> nearest_centroids(const Tensor& centroids, const Tensor& frames) {
  if (frames.cols() != centroids.cols()) {
    throw ConfigError(fmt::format("frame dim {} does not match centroid dim {}", frames.cols(),
                                  centroids.cols()));
  }
  std::vector<std::size_t> codes(frames.rows());
  for (std::size_t i = 0; i < frames.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t k = 0; k < centroids.rows(); ++k) {
      const double d = squared_distance(frames.row(i), centroids.row(k));
      if (d < best) {
        best = d;
        arg = k;
      }
    }
    codes[i] = arg;
  }
  return codes;
}

KMeansResult kmeans_fit(const Tensor& points, const KMeansOptions& options) {
  const std::size_t N = points.rows(), D = points.cols(), K = options.K;
  if (K == 0) throw ConfigError("kmeans: K must be >= 1");
  if (N < K) throw ConfigError(fmt::format("kmeans: {} points cannot support K={}", N, K));
  if (!points.all_finite()) throw ConfigError("kmeans: points must be finite");

  std::mt19937_64 rng(options.seed);
  Tensor centroids = Tensor::zeros(K, D);
  std::vector<bool> chosen(N, false);

  // k-means++ seeding.
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, N - 1)(rng);
  chosen[first] = true;
  std::copy_n(points.row(first).begin(), D, centroids.row(0).begin());
  std::vector<double> d2(N);
  for (std::size_t i = 0; i < N; ++i) d2[i] = squared_distance(points.row(i), centroids.row(0));
  for (std::size_t k = 1; k < K; ++k) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = N;
    if (total > 0.0) {
      const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      double cum = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        if (d2[i] <= 0.0) continue;
        cum += d2[i];
        pick = i;
        if (cum > u) break;
      }
    } else {
      for (std::size_t i = 0; i < N && pick == N; ++i) {
        if (!chosen[i]) pick = i;
      }
    }
    chosen[pick] = true;
    std::copy_n(points.row(pick).begin(), D, centroids.row(k).begin());
    for (std::size_t i = 0; i < N; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.row(i), centroids.row(k)));
    }
  }

  KMeansResult result;
  std::vector<std::size_t> assign = nearest_centroids(centroids, points);
  result.inertia_history.push_back(inertia_of(points, centroids, assign));

  std::vector<std::size_t> counts(K, 0);
  auto recount = [&] {
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t a : assign) ++counts[a];
  };
  auto recompute_centroids = [&] {
    Tensor next = Tensor::zeros(K, D);
    for (std::size_t i = 0; i < N; ++i) {
      auto row = next.row(assign[i]);
      auto p = points.row(i);
      for (std::size_t d = 0; d < D; ++d) row[d] += p[d];
    }
    double movement = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      auto row = next.row(k);
      for (double& v : row) v /= static_cast<double>(counts[k]);
      movement = std::max(movement, std::sqrt(squared_distance(row, centroids.row(k))));
    }
    centroids = std::move(next);
    return movement;
  };

  // Single-point transfers (Hartigan): moving x from cluster a to b changes
  // inertia by n_b/(n_b+1)|x-c_b|^2 - n_a/(n_a-1)|x-c_a|^2. Lloyd can stall
  // where such a move still pays, because it ignores how the move shifts
  // both centroids. A partition stable under transfers is a Lloyd fixed
  // point, so the refinement never breaks the nearest-centroid contract.
  auto transfer_pass = [&] {
    bool moved = false;
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t a = assign[i];
      if (counts[a] < 2) continue;
      const auto x = points.row(i);
      const double na = static_cast<double>(counts[a]);
      const double leave = na / (na - 1.0) * squared_distance(x, centroids.row(a));
      std::size_t best = a;
      double best_gain = 1e-12 * std::max(1.0, leave);
      for (std::size_t b = 0; b < K; ++b) {
        if (b == a) continue;
        const double nb = static_cast<double>(counts[b]);
        const double gain = leave - nb / (nb + 1.0) * squared_distance(x, centroids.row(b));
        if (gain > best_gain) {
          best_gain = gain;
          best = b;
        }
      }
      if (best == a) continue;
      auto ca = centroids.row(a);
      auto cb = centroids.row(best);
      const double nb = static_cast<double>(counts[best]);
      for (std::size_t d = 0; d < D; ++d) {
        ca[d] = (na * ca[d] - x[d]) / (na - 1.0);
        cb[d] = (nb * cb[d] + x[d]) / (nb + 1.0);
      }
      --counts[a];
      ++counts[best];
      assign[i] = best;
      moved = true;
    }
    return moved;
  };

  bool refine = true;
  for (std::size_t it = 1; it <= options.max_iters; ++it) {
    recount();
    // Empty clusters take the point farthest from its centroid, drawn from
    // clusters that keep at least one member.
    for (std::size_t k = 0; k < K; ++k) {
      if (counts[k] != 0) continue;
      std::size_t far = N;
      double far_d = -1.0;
      for (std::size_t i = 0; i < N; ++i) {
        if (counts[assign[i]] < 2) continue;
        const double d = squared_distance(points.row(i), centroids.row(assign[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far == N) throw NumericError("kmeans: cannot repair empty cluster");
      --counts[assign[far]];
      assign[far] = k;
      counts[k] = 1;
    }

    const double movement = recompute_centroids();
    assign = nearest_centroids(centroids, points);
    result.inertia_history.push_back(inertia_of(points, centroids, assign));
    result.iterations = it;
    if (movement > options.tol) continue;

    // Lloyd has settled; try transfers once per settled state.
    if (!refine) break;
    recount();
    if (std::find(counts.begin(), counts.end(), 0) != counts.end()) continue;
    if (!transfer_pass()) break;
    recompute_centroids();  // exact means after the incremental updates
    assign = nearest_centroids(centroids, points);
    result.inertia_history.push_back(inertia_of(points, centroids, assign));
    refine = it < options.max_iters;
  }

  result.codebook.centroids = std::move(centroids);
  result.codebook.inertia = result.inertia_history.back();
  result.codebook.provenance.seed = options.seed;
  result.assignments = std::move(assign);
  return result;
}

PseudoLabelSeq kmeans_assign(const Codebook& codebook, const Tensor& frames,
                             std::string utterance_id) {
  PseudoLabelSeq seq;
  seq.utterance_id = std::move(utterance_id);
  seq.codebook_id = codebook.id();
  seq.codes = nearest_centroids(codebook.centroids, frames);
  return seq;
}

ClusterDiagnostics cluster_diagnostics(const std::vector<PseudoLabelSeq>& labels,
                                       const Corpus& corpus, std::size_t K) {
  std::set<std::string> have;
  for (const auto& l : labels) have.insert(l.utterance_id);
  std::vector<std::string> missing;
  for (const auto& u : corpus.utterances) {
    if (!have.contains(u.id)) missing.push_back(u.id);
  }
  if (!missing.empty()) {
    throw CoverageError(fmt::format("pseudo labels missing for {} utterance(s): {}", missing.size(),
                                    fmt::join(missing, ", ")));
  }

  ClusterDiagnostics diag;
  diag.label_histogram.assign(K, {});
  std::size_t transitions = 0, pairs = 0;
  for (const auto& l : labels) {
    const Utterance& u = corpus.utterances[corpus.find(l.utterance_id)];
    const bool per_frame = u.frame_truth.size() == l.codes.size();
    for (std::size_t t = 0; t < l.codes.size(); ++t) {
      if (l.codes[t] >= K) {
        throw LabelError(fmt::format("code {} >= K={} in '{}'", l.codes[t], K, l.utterance_id));
      }
      const Emotion e = per_frame ? u.frame_truth[t] : u.label;
      ++diag.label_histogram[l.codes[t]][index_of(e)];
      ++diag.total_frames;
      if (t > 0) {
        ++pairs;
        if (l.codes[t] != l.codes[t - 1]) ++transitions;
      }
    }
  }
  std::size_t majority = 0;
  for (const auto& h : diag.label_histogram) majority += *std::max_element(h.begin(), h.end());
  diag.purity = diag.total_frames ? static_cast<double>(majority) / diag.total_frames : 0.0;
  diag.code_transition_rate = pairs ? static_cast<double>(transitions) / pairs : 0.0;
  return diag;
}

// ---------------------------------------------------------------------------
// Files

std::string encode_codebook(const Codebook& cb) {
  nlohmann::json j = codebook_body(cb);
  j["format"] = "emoalign-codebook";
  j["version"] = 1;
  j["id"] = cb.id();
  return j.dump() + "\n";
}

Codebook decode_codebook(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "emoalign-codebook") throw ParseError("codebook: wrong format tag");
    Codebook cb;
    const auto K = j.at("K").get<std::size_t>();
    const auto dim = j.at("dim").get<std::size_t>();
    cb.centroids = Tensor({K, dim}, j.at("centroids").get<std::vector<double>>());
    cb.inertia = j.at("inertia").get<double>();
    cb.provenance = provenance_from_json(j.at("provenance"));
    if (cb.id() != j.at("id").get<std::string>()) throw ParseError("codebook: id does not match content");
    cb.validate();
    return cb;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("codebook: ") + e.what());
  } catch (const DimensionError& e) {
    throw ParseError(std::string("codebook: ") + e.what());
  }
}

void save_codebook(const Codebook& cb, const std::filesystem::path& path) {
  write_file(path, encode_codebook(cb));
}

Codebook load_codebook(const std::filesystem::path& path) { return decode_codebook(read_file(path)); }

std::string encode_pseudo_labels(const std::vector<PseudoLabelSeq>& labels, std::size_t K) {
  nlohmann::json header = {{"record", "header"},
                           {"format", "emoalign-pseudo-labels"},
                           {"version", 1},
                           {"codebook_id", labels.empty() ? "" : labels.front().codebook_id},
                           {"K", K},
                           {"count", labels.size()}};
  std::string out = header.dump() + "\n";
  for (const auto& l : labels) {
    nlohmann::json rec = {{"record", "labels"},
                          {"utterance_id", l.utterance_id},
                          {"codebook_id", l.codebook_id},
                          {"codes", l.codes}};
    out += rec.dump() + "\n";
  }
  return out;
}

std::vector<PseudoLabelSeq> decode_pseudo_labels(std::string_view text, std::size_t* K_out) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    if (nl > pos) lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (lines.empty()) throw ParseError("pseudo labels: missing header record");
  std::vector<PseudoLabelSeq> out;
  std::size_t count = 0, K = 0;
  try {
    const auto h = nlohmann::json::parse(lines[0]);
    if (h.at("format") != "emoalign-pseudo-labels") throw ParseError("pseudo labels: wrong format tag");
    count = h.at("count").get<std::size_t>();
    K = h.at("K").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("pseudo labels: malformed header: ") + e.what());
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    try {
      const auto r = nlohmann::json::parse(lines[i]);
      PseudoLabelSeq s;
      s.utterance_id = r.at("utterance_id").get<std::string>();
      s.codebook_id = r.at("codebook_id").get<std::string>();
      s.codes = r.at("codes").get<std::vector<std::size_t>>();
      for (std::size_t c : s.codes) {
        if (c >= K) throw ParseError(fmt::format("code {} >= K={}", c, K));
      }
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("pseudo labels: malformed record at line {}: {}", i + 1, e.what()));
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("pseudo labels: bad record at line {}: {}", i + 1, e.what()));
    }
  }
  if (out.size() != count) {
    throw ParseError(fmt::format("pseudo labels: header declares {} records, file holds {}", count,
                                 out.size()));
  }
  if (K_out) *K_out = K;
  return out;
}

void save_pseudo_labels(const std::vector<PseudoLabelSeq>& labels, std::size_t K,
                        const std::filesystem::path& path) {
  write_file(path, encode_pseudo_labels(labels, K));
}

std::vector<PseudoLabelSeq> load_pseudo_labels(const std::filesystem::path& path, std::size_t* K) {
  return decode_pseudo_labels(read_file(path), K);
}

}  // namespace emoalign
