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
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoalign/tensor.hpp"

namespace emoalign {

// Four-class emotion alphabet; the integer encoding is stable.
enum class Emotion : std::uint8_t { happy = 0, sad = 1, neutral = 2, angry = 3 };

inline constexpr std::size_t kNumEmotions = 4;
inline constexpr std::array<Emotion, kNumEmotions> kAllEmotions = {
    Emotion::happy, Emotion::sad, Emotion::neutral, Emotion::angry};

std::string_view to_string(Emotion e);
Emotion emotion_from_string(std::string_view s);
Emotion emotion_from_index(std::size_t i);
inline std::size_t index_of(Emotion e) { return static_cast<std::size_t>(e); }

// Parameters of the synthetic corpus generator. Class means are placed
// so that every pair is at least class_separation * frame_noise apart.
struct GenerationSpec {
  std::size_t sessions = 5;
  std::size_t utterances_per_speaker = 20;
  std::size_t feature_dim = 8;
  std::size_t frames_min = 20;
  std::size_t frames_max = 40;
  double inconsistency_rate = 0.0;
  std::uint64_t seed = 0;
  double class_separation = 2.0;
  double frame_noise = 1.0;
  double speaker_offset = 0.25;  // per-speaker mean shift, in units of frame_noise

  void validate() const;
  friend bool operator==(const GenerationSpec&, const GenerationSpec&) = default;
};

void to_json(nlohmann::json& j, const GenerationSpec& s);
void from_json(const nlohmann::json& j, GenerationSpec& s);

struct Speaker {
  std::string id;
  int session = 0;
  char gender = 'F';
  friend bool operator==(const Speaker&, const Speaker&) = default;
};

struct Utterance {
  std::string id;
  int session = 0;
  std::string speaker;
  Emotion label = Emotion::neutral;
  Tensor frames;                     // T x F
  std::vector<Emotion> frame_truth;  // empty, or one entry per frame

  std::size_t num_frames() const { return frames.rows(); }
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Corpus {
  std::vector<Utterance> utterances;
  std::vector<Speaker> speakers;
  std::size_t sessions = 0;
  std::size_t speakers_per_session = 2;
  std::size_t feature_dim = 0;
  GenerationSpec generation_spec;

  const Speaker& speaker(std::string_view id) const;
  // Index of the utterance with this id; throws CoverageError if absent.
  std::size_t find(std::string_view utterance_id) const;
  // Checks every structural invariant; throws ConfigError on violation.
  void validate() const;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

Corpus generate_corpus(const GenerationSpec& spec);

// Leave-one-session-out split for one fold. The held-out session's two
// speakers are split into validation (lexicographically smaller id) and
// test.
struct FoldPlan {
  std::size_t fold_index = 0;
  int held_out_session = 0;
  std::vector<int> train_sessions;
  std::string val_speaker;
  std::string test_speaker;
  friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

void to_json(nlohmann::json& j, const FoldPlan& f);

std::vector<FoldPlan> make_folds(const Corpus& corpus);

struct FoldPartition {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Utterance indices per partition, in corpus order.
FoldPartition partition(const Corpus& corpus, const FoldPlan& plan);
std::vector<std::string> train_speakers(const Corpus& corpus, const FoldPlan& plan);

// Line-delimited JSON: one header record, then one record per utterance.
//   {"record":"header","format":"emoalign-corpus","version":1,"sessions":S,
//    "speakers_per_session":2,"feature_dim":F,"num_utterances":N,
//    "speakers":[{"id","session","gender"}...],"generation_spec":{...}}
//   {"record":"utterance","id","session","speaker","label","num_frames":T,
//    "frames":[row-major T*F values],"frame_truth":[labels] (optional)}
std::string encode_corpus(const Corpus& corpus);
Corpus decode_corpus(std::string_view text);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace emoalign
