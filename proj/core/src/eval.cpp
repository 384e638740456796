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


#include "emoalign/eval.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "emoalign/error.hpp"

namespace emoalign {

std::size_t Metrics::total() const {
  std::size_t n = 0;
  for (const auto& row : confusion)
    for (std::size_t v : row) n += v;
  return n;
}

Metrics compute_metrics(const std::vector<Emotion>& truth, const std::vector<Emotion>& predicted) {
  if (truth.size() != predicted.size()) {
    throw InputError(fmt::format("compute_metrics: {} true labels vs {} predictions", truth.size(),
                                 predicted.size()));
  }
  if (truth.empty()) throw InputError("compute_metrics: empty label sequence");
  Metrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++m.confusion[index_of(truth[i])][index_of(predicted[i])];
  }
  std::size_t correct = 0, present = 0;
  double recall_sum = 0.0;
  for (std::size_t c = 0; c < kNumEmotions; ++c) {
    std::size_t row = 0;
    for (std::size_t v : m.confusion[c]) row += v;
    correct += m.confusion[c][c];
    if (row == 0) continue;
    ++present;
    recall_sum += static_cast<double>(m.confusion[c][c]) / static_cast<double>(row);
  }
  m.ua = recall_sum / static_cast<double>(present);
  m.wa = static_cast<double>(correct) / static_cast<double>(truth.size());
  return m;
}

nlohmann::json metrics_record(std::size_t fold, const Metrics& m) {
  std::vector<std::size_t> flat;
  for (const auto& row : m.confusion) flat.insert(flat.end(), row.begin(), row.end());
  return {{"fold", fold}, {"UA", m.ua}, {"WA", m.wa}, {"confusion", flat}};
}

Metrics metrics_from_record(const nlohmann::json& j) {
  Metrics m;
  const auto flat = j.at("confusion").get<std::vector<std::size_t>>();
  if (flat.size() != kNumEmotions * kNumEmotions) throw ParseError("metrics record: confusion must hold 16 counts");
  for (std::size_t i = 0; i < flat.size(); ++i) m.confusion[i / kNumEmotions][i % kNumEmotions] = flat[i];
  m.ua = j.at("UA").get<double>();
  m.wa = j.at("WA").get<double>();
  return m;
}

FoldAggregate aggregate_folds(const std::vector<Metrics>& folds) {
  if (folds.size() != 5) {
    throw InputError(fmt::format("aggregate_folds: expected 5 fold results, got {}", folds.size()));
  }
  FoldAggregate agg;
  for (const auto& f : folds) {
    agg.ua_mean += f.ua;
    agg.wa_mean += f.wa;
  }
  agg.ua_mean /= 5.0;
  agg.wa_mean /= 5.0;
  agg.per_fold = folds;
  return agg;
}

std::string to_string(Pooling p) { return p == Pooling::attention ? "attention" : "average"; }

Pooling pooling_from_string(const std::string& s) {
  if (s == "attention" || s == "attn") return Pooling::attention;
  if (s == "average" || s == "avg") return Pooling::average;
  throw ConfigError("unknown pooling '" + s + "'");
}

std::vector<ReportRow> full_scale_reference_rows() {
  return {
      {"BL (reference, full scale)", "-", "74.3/-", "-"},
      {"TAPT (reference, full scale)", "-", "74.1/72.8", "-"},
      {"9th layer (reference, full scale)", "50", "75.1/73.5", "75.7/74.7"},
  };
}

std::string format_ua_wa(double ua, double wa) {
  return fmt::format("{:.1f}/{:.1f}", 100.0 * ua, 100.0 * wa);
}

namespace {

std::string cell_text(const std::map<ReportKey, ReportCell>& cells, const ReportKey& key) {
  auto it = cells.find(key);
  if (it == cells.end()) return "";
  const auto& c = it->second;
  if (!c.error.empty()) return "failed";
  if (!c.ua || !c.wa) return "";
  return format_ua_wa(*c.ua, *c.wa);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

RenderedReport render_report(const AblationReport& report) {
  std::set<std::pair<std::size_t, std::size_t>> grid;
  for (const auto& [key, cell] : report.cells) grid.emplace(std::get<0>(key), std::get<1>(key));

  std::vector<ReportRow> rows = report.reference_rows;
  const std::size_t computed_begin = rows.size();
  rows.insert(rows.end(), report.baseline_rows.begin(), report.baseline_rows.end());
  for (const auto& [layer, k] : grid) {
    rows.push_back({fmt::format("layer {}", layer), std::to_string(k),
                    cell_text(report.cells, {layer, k, Pooling::average}),
                    cell_text(report.cells, {layer, k, Pooling::attention})});
  }

  RenderedReport out;
  const std::array<std::string, 4> header = {"Layers", "Clusters", "Average Pooling",
                                             "Attention Pooling"};
  out.csv = fmt::format("{},{},{},{}\n", header[0], header[1], header[2], header[3]);
  for (const auto& r : rows) {
    out.csv += fmt::format("{},{},{},{}\n", csv_escape(r.label), csv_escape(r.clusters),
                           csv_escape(r.average), csv_escape(r.attention));
  }

  std::array<std::size_t, 4> width{};
  for (std::size_t i = 0; i < 4; ++i) width[i] = header[i].size();
  for (const auto& r : rows) {
    width[0] = std::max(width[0], r.label.size());
    width[1] = std::max(width[1], r.clusters.size());
    width[2] = std::max(width[2], r.average.size());
    width[3] = std::max(width[3], r.attention.size());
  }
  auto line = [&](const std::string& a, const std::string& b, const std::string& c,
                  const std::string& d) {
    return fmt::format("{:<{}}  {:<{}}  {:<{}}  {:<{}}\n", a, width[0], b, width[1], c, width[2], d,
                       width[3]);
  };
  if (!report.title.empty()) out.text += report.title + "\n";
  out.text += "UA/WA (%)\n";
  out.text += line(header[0], header[1], header[2], header[3]);
  out.text += std::string(width[0] + width[1] + width[2] + width[3] + 6, '-') + "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i == computed_begin && computed_begin > 0) {
      out.text += std::string(width[0] + width[1] + width[2] + width[3] + 6, '-') + "\n";
    }
    out.text += line(rows[i].label, rows[i].clusters, rows[i].average, rows[i].attention);
  }

  out.json = {{"title", report.title}, {"cells", nlohmann::json::array()},
              {"reference_rows", nlohmann::json::array()}, {"baseline_rows", nlohmann::json::array()}};
  auto row_json = [](const ReportRow& r) {
    return nlohmann::json{{"label", r.label}, {"clusters", r.clusters}, {"average", r.average},
                          {"attention", r.attention}};
  };
  for (const auto& r : report.reference_rows) out.json["reference_rows"].push_back(row_json(r));
  for (const auto& r : report.baseline_rows) out.json["baseline_rows"].push_back(row_json(r));
  for (const auto& [key, cell] : report.cells) {
    nlohmann::json c = {{"layer", std::get<0>(key)},
                        {"clusters", std::get<1>(key)},
                        {"pooling", to_string(std::get<2>(key))},
                        {"provenance", cell.provenance}};
    if (cell.ua) c["UA"] = *cell.ua;
    if (cell.wa) c["WA"] = *cell.wa;
    if (!cell.error.empty()) c["error"] = cell.error;
    out.json["cells"].push_back(std::move(c));
  }
  return out;
}

}  // namespace emoalign
