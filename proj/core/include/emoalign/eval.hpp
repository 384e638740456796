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

#include <array>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoalign/corpus.hpp"

namespace emoalign {

struct Metrics {
  // rows = true class, cols = predicted class
  std::array<std::array<std::size_t, kNumEmotions>, kNumEmotions> confusion{};
  double ua = 0.0;  // mean recall over classes present in the truth
  double wa = 0.0;  // trace / total

  std::size_t total() const;
  friend bool operator==(const Metrics&, const Metrics&) = default;
};

Metrics compute_metrics(const std::vector<Emotion>& truth, const std::vector<Emotion>& predicted);

// One structured record: {"fold","UA","WA","confusion":[16 counts, row-major]}
nlohmann::json metrics_record(std::size_t fold, const Metrics& m);
Metrics metrics_from_record(const nlohmann::json& j);

struct FoldAggregate {
  double ua_mean = 0.0;
  double wa_mean = 0.0;
  std::vector<Metrics> per_fold;
};

// Unweighted mean over exactly five folds.
FoldAggregate aggregate_folds(const std::vector<Metrics>& folds);

enum class Pooling { attention, average };
std::string to_string(Pooling p);
Pooling pooling_from_string(const std::string& s);

// Ablation grid keyed by (tap layer, clusters, pooling).
struct ReportCell {
  std::optional<double> ua;  // fractions in [0,1]
  std::optional<double> wa;
  std::string error;  // non-empty for a failed cell
  std::string provenance;
};

using ReportKey = std::tuple<std::size_t, std::size_t, Pooling>;

struct ReportRow {
  std::string label;
  std::string clusters;
  std::string average;
  std::string attention;
};

struct AblationReport {
  std::map<ReportKey, ReportCell> cells;
  // Reference rows shown verbatim, never computed here.
  std::vector<ReportRow> reference_rows;
  // Computed baselines, listed before the grid rows.
  std::vector<ReportRow> baseline_rows;
  std::string title;
};

// Reference rows holding full-scale numbers. Reproducing them needs the
// large pretrained backbone and the real corpus; they are display-only.
std::vector<ReportRow> full_scale_reference_rows();

// "75.7/74.7": UA and WA in percent with one decimal.
std::string format_ua_wa(double ua, double wa);

struct RenderedReport {
  std::string csv;
  std::string text;
  nlohmann::json json;
};

RenderedReport render_report(const AblationReport& report);

}  // namespace emoalign
