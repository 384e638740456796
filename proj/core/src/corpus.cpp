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


#include "emoalign/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "emoalign/checkpoint.hpp"
#include "emoalign/error.hpp"

namespace emoalign {

namespace {

constexpr std::array<std::string_view, kNumEmotions> kEmotionNames = {"happy", "sad", "neutral",
                                                                      "angry"};

std::string speaker_id(std::size_t session, char gender) {
  return fmt::format("Ses{:02d}{}", session, gender);
}

}  // namespace

std::string_view to_string(Emotion e) { return kEmotionNames[index_of(e)]; }

Emotion emotion_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kNumEmotions; ++i) {
    if (kEmotionNames[i] == s) return static_cast<Emotion>(i);
  }
  throw ParseError("unknown emotion label '" + std::string(s) + "'");
}

Emotion emotion_from_index(std::size_t i) {
  if (i >= kNumEmotions) throw LabelError("emotion index " + std::to_string(i) + " out of range");
  return static_cast<Emotion>(i);
}

// ---------------------------------------------------------------------------
// GenerationSpec

void GenerationSpec::validate() const {
  if (sessions < 1) throw ConfigError("generation spec: sessions must be >= 1");
  if (utterances_per_speaker < 1)
    throw ConfigError("generation spec: utterances_per_speaker must be >= 1");
  if (feature_dim < kNumEmotions)
    throw ConfigError("generation spec: feature_dim must be >= 4 to separate the classes");
  if (frames_min < 4) throw ConfigError("generation spec: frames_min must be >= 4");
  if (frames_max < frames_min) throw ConfigError("generation spec: frames_max < frames_min");
  if (!(inconsistency_rate >= 0.0 && inconsistency_rate < 1.0))
    throw ConfigError("generation spec: inconsistency_rate must lie in [0, 1)");
  if (!(class_separation >= 2.0))
    throw ConfigError("generation spec: class_separation must be >= 2 (noise units)");
  if (!(frame_noise > 0.0)) throw ConfigError("generation spec: frame_noise must be positive");
  if (!(speaker_offset >= 0.0)) throw ConfigError("generation spec: speaker_offset must be >= 0");
}

void to_json(nlohmann::json& j, const GenerationSpec& s) {
  j = {{"sessions", s.sessions},
       {"utterances_per_speaker", s.utterances_per_speaker},
       {"feature_dim", s.feature_dim},
       {"frames_min", s.frames_min},
       {"frames_max", s.frames_max},
       {"inconsistency_rate", s.inconsistency_rate},
       {"seed", s.seed},
       {"class_separation", s.class_separation},
       {"frame_noise", s.frame_noise},
       {"speaker_offset", s.speaker_offset}};
}

void from_json(const nlohmann::json& j, GenerationSpec& s) {
  GenerationSpec d;
  s.sessions = j.value("sessions", d.sessions);
  s.utterances_per_speaker = j.value("utterances_per_speaker", d.utterances_per_speaker);
  s.feature_dim = j.value("feature_dim", d.feature_dim);
  s.frames_min = j.value("frames_min", d.frames_min);
  s.frames_max = j.value("frames_max", d.frames_max);
  s.inconsistency_rate = j.value("inconsistency_rate", d.inconsistency_rate);
  s.seed = j.value("seed", d.seed);
  s.class_separation = j.value("class_separation", d.class_separation);
  s.frame_noise = j.value("frame_noise", d.frame_noise);
  s.speaker_offset = j.value("speaker_offset", d.speaker_offset);
}

// ---------------------------------------------------------------------------
// Corpus

const Speaker& Corpus::speaker(std::string_view id) const {
  for (const auto& s : speakers) {
    if (s.id == id) return s;
  }
  throw ConfigError("unknown speaker '" + std::string(id) + "'");
}

std::size_t Corpus::find(std::string_view utterance_id) const {
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    if (utterances[i].id == utterance_id) return i;
  }
  throw CoverageError("utterance '" + std::string(utterance_id) + "' not in corpus");
}

void Corpus::validate() const {
  for (std::size_t s = 1; s <= sessions; ++s) {
    const auto n = std::count_if(speakers.begin(), speakers.end(),
                                 [&](const Speaker& sp) { return sp.session == static_cast<int>(s); });
    if (static_cast<std::size_t>(n) != speakers_per_session) {
      throw ConfigError(fmt::format("session {} has {} speakers, expected {}", s, n,
                                    speakers_per_session));
    }
  }
  std::set<std::string> ids;
  for (const auto& sp : speakers) {
    if (sp.session < 1 || static_cast<std::size_t>(sp.session) > sessions)
      throw ConfigError("speaker '" + sp.id + "' references unknown session");
    if (!ids.insert(sp.id).second) throw ConfigError("duplicate speaker '" + sp.id + "'");
  }
  std::set<std::string> utt_ids;
  for (const auto& u : utterances) {
    if (!utt_ids.insert(u.id).second) throw ConfigError("duplicate utterance id '" + u.id + "'");
    const Speaker& sp = speaker(u.speaker);
    if (sp.session != u.session)
      throw ConfigError("utterance '" + u.id + "' session does not match its speaker");
    if (u.frames.rank() != 2 || u.frames.rows() < 1 || u.frames.cols() != feature_dim)
      throw ConfigError("utterance '" + u.id + "' has frames of shape " + u.frames.shape_str());
    if (!u.frames.all_finite()) throw ConfigError("utterance '" + u.id + "' has non-finite frames");
    if (!u.frame_truth.empty() && u.frame_truth.size() != u.frames.rows())
      throw ConfigError("utterance '" + u.id + "' frame_truth length mismatch");
  }
}

Corpus generate_corpus(const GenerationSpec& spec) {
  spec.validate();
  const std::size_t F = spec.feature_dim;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> length(spec.frames_min, spec.frames_max);

  // Class c is active on the dimensions d with d % 4 == c. Two distinct
  // classes differ on at least two such dimensions, so a per-dimension
  // offset of sep / sqrt(2) keeps every pair sep * noise apart.
  const double level = spec.class_separation * spec.frame_noise / std::sqrt(2.0);
  std::array<std::vector<double>, kNumEmotions> class_means;
  for (std::size_t c = 0; c < kNumEmotions; ++c) {
    class_means[c].assign(F, 0.0);
    for (std::size_t d = 0; d < F; ++d) {
      if (d % kNumEmotions == c) class_means[c][d] = level;
    }
  }

  Corpus corpus;
  corpus.sessions = spec.sessions;
  corpus.speakers_per_session = 2;
  corpus.feature_dim = F;
  corpus.generation_spec = spec;

  for (std::size_t s = 1; s <= spec.sessions; ++s) {
    for (char gender : {'F', 'M'}) {
      Speaker sp{speaker_id(s, gender), static_cast<int>(s), gender};
      std::vector<double> offset(F);
      for (double& o : offset) o = spec.speaker_offset * spec.frame_noise * gauss(rng);

      for (std::size_t u = 0; u < spec.utterances_per_speaker; ++u) {
        Utterance utt;
        utt.id = fmt::format("{}_u{:03d}", sp.id, u);
        utt.session = sp.session;
        utt.speaker = sp.id;
        utt.label = emotion_from_index(u % kNumEmotions);

        const std::size_t T = length(rng);
        // One contiguous run of off-label frames, drawn from the neutral class.
        const auto bad = static_cast<std::size_t>(std::llround(spec.inconsistency_rate * T));
        std::size_t bad_start = 0;
        if (bad > 0) bad_start = std::uniform_int_distribution<std::size_t>(0, T - bad)(rng);

        utt.frames = Tensor::zeros(T, F);
        utt.frame_truth.resize(T);
        for (std::size_t t = 0; t < T; ++t) {
          const bool off_label = t >= bad_start && t < bad_start + bad;
          const Emotion truth = off_label ? Emotion::neutral : utt.label;
          utt.frame_truth[t] = truth;
          const auto& mu = class_means[index_of(truth)];
          for (std::size_t d = 0; d < F; ++d) {
            utt.frames(t, d) = mu[d] + offset[d] + spec.frame_noise * gauss(rng);
          }
        }
        corpus.utterances.push_back(std::move(utt));
      }
      corpus.speakers.push_back(std::move(sp));
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Folds

void to_json(nlohmann::json& j, const FoldPlan& f) {
  j = {{"fold_index", f.fold_index},
       {"held_out_session", f.held_out_session},
       {"train_sessions", f.train_sessions},
       {"val_speaker", f.val_speaker},
       {"test_speaker", f.test_speaker}};
}

std::vector<FoldPlan> make_folds(const Corpus& corpus) {
  if (corpus.sessions != 5) {
    throw ConfigError(fmt::format("make_folds needs exactly 5 sessions, corpus has {}",
                                  corpus.sessions));
  }
  std::vector<FoldPlan> folds;
  for (std::size_t k = 0; k < 5; ++k) {
    const int held = static_cast<int>(k + 1);
    std::vector<std::string> held_speakers;
    for (const auto& sp : corpus.speakers) {
      if (sp.session == held) held_speakers.push_back(sp.id);
    }
    if (held_speakers.size() != 2) {
      throw ConfigError(fmt::format("make_folds needs 2 speakers in session {}, found {}", held,
                                    held_speakers.size()));
    }
    std::sort(held_speakers.begin(), held_speakers.end());
    FoldPlan plan;
    plan.fold_index = k;
    plan.held_out_session = held;
    for (int s = 1; s <= 5; ++s) {
      if (s != held) plan.train_sessions.push_back(s);
    }
    plan.val_speaker = held_speakers[0];
    plan.test_speaker = held_speakers[1];
    folds.push_back(std::move(plan));
  }
  return folds;
}

FoldPartition partition(const Corpus& corpus, const FoldPlan& plan) {
  FoldPartition p;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const auto& u = corpus.utterances[i];
    if (u.speaker == plan.val_speaker) {
      p.val.push_back(i);
    } else if (u.speaker == plan.test_speaker) {
      p.test.push_back(i);
    } else if (std::find(plan.train_sessions.begin(), plan.train_sessions.end(), u.session) !=
               plan.train_sessions.end()) {
      p.train.push_back(i);
    }
  }
  return p;
}

std::vector<std::string> train_speakers(const Corpus& corpus, const FoldPlan& plan) {
  std::vector<std::string> out;
  for (const auto& sp : corpus.speakers) {
    if (std::find(plan.train_sessions.begin(), plan.train_sessions.end(), sp.session) !=
        plan.train_sessions.end()) {
      out.push_back(sp.id);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::string encode_corpus(const Corpus& corpus) {
  nlohmann::json header = {{"record", "header"},
                           {"format", "emoalign-corpus"},
                           {"version", 1},
                           {"sessions", corpus.sessions},
                           {"speakers_per_session", corpus.speakers_per_session},
                           {"feature_dim", corpus.feature_dim},
                           {"num_utterances", corpus.utterances.size()},
                           {"generation_spec", corpus.generation_spec}};
  header["speakers"] = nlohmann::json::array();
  for (const auto& sp : corpus.speakers) {
    header["speakers"].push_back(
        {{"id", sp.id}, {"session", sp.session}, {"gender", std::string(1, sp.gender)}});
  }
  std::string out = header.dump() + "\n";
  for (const auto& u : corpus.utterances) {
    nlohmann::json rec = {{"record", "utterance"},
                          {"id", u.id},
                          {"session", u.session},
                          {"speaker", u.speaker},
                          {"label", to_string(u.label)},
                          {"num_frames", u.frames.rows()},
                          {"frames", std::vector<double>(u.frames.data().begin(), u.frames.data().end())}};
    if (!u.frame_truth.empty()) {
      auto& ft = rec["frame_truth"] = nlohmann::json::array();
      for (Emotion e : u.frame_truth) ft.push_back(to_string(e));
    }
    out += rec.dump();
    out += "\n";
  }
  return out;
}

Corpus decode_corpus(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    if (nl > pos) lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (lines.empty()) throw ParseError("corpus: empty file, missing header record");

  Corpus corpus;
  std::size_t expected = 0;
  try {
    const auto header = nlohmann::json::parse(lines[0]);
    if (header.at("record") != "header" || header.at("format") != "emoalign-corpus")
      throw ParseError("corpus: line 1 is not a corpus header record");
    if (header.at("version").get<int>() != 1) throw ParseError("corpus: unsupported version");
    corpus.sessions = header.at("sessions").get<std::size_t>();
    corpus.speakers_per_session = header.at("speakers_per_session").get<std::size_t>();
    corpus.feature_dim = header.at("feature_dim").get<std::size_t>();
    corpus.generation_spec = header.at("generation_spec").get<GenerationSpec>();
    expected = header.at("num_utterances").get<std::size_t>();
    for (const auto& sp : header.at("speakers")) {
      const auto g = sp.at("gender").get<std::string>();
      corpus.speakers.push_back(
          {sp.at("id").get<std::string>(), sp.at("session").get<int>(), g.empty() ? '?' : g[0]});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("corpus: malformed header record: ") + e.what());
  }

  for (std::size_t li = 1; li < lines.size(); ++li) {
    std::string where = fmt::format("line {}", li + 1);
    try {
      const auto rec = nlohmann::json::parse(lines[li]);
      if (rec.contains("id")) where += " (utterance '" + rec["id"].get<std::string>() + "')";
      if (rec.at("record") != "utterance") throw ParseError("not an utterance record");
      Utterance u;
      u.id = rec.at("id").get<std::string>();
      u.session = rec.at("session").get<int>();
      u.speaker = rec.at("speaker").get<std::string>();
      u.label = emotion_from_string(rec.at("label").get<std::string>());
      const auto T = rec.at("num_frames").get<std::size_t>();
      auto values = rec.at("frames").get<std::vector<double>>();
      if (values.size() != T * corpus.feature_dim)
        throw ParseError(fmt::format("frames hold {} values, expected {}", values.size(),
                                     T * corpus.feature_dim));
      u.frames = Tensor({T, corpus.feature_dim}, std::move(values));
      if (rec.contains("frame_truth")) {
        for (const auto& e : rec["frame_truth"]) u.frame_truth.push_back(emotion_from_string(e.get<std::string>()));
      }
      corpus.utterances.push_back(std::move(u));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("corpus: malformed record at " + where + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError("corpus: bad record at " + where + ": " + e.what());
    }
  }
  if (corpus.utterances.size() != expected) {
    throw ParseError(fmt::format("corpus: header declares {} utterances, file holds {} (truncated?)",
                                 expected, corpus.utterances.size()));
  }
  try {
    corpus.validate();
  } catch (const ConfigError& e) {
    throw ParseError(std::string("corpus: ") + e.what());
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  write_file(path, encode_corpus(corpus));
}

Corpus load_corpus(const std::filesystem::path& path) { return decode_corpus(read_file(path)); }

}  // namespace emoalign
