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

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "emoalign/autograd.hpp"

namespace emoalign {

// Named-tensor container.
//
//   line 1   "EMOALIGN-TENSORS 1"
//   line 2   one-line JSON header:
//            {"metadata": {...},
//             "tensors": [{"name", "shape", "dtype": "float64", "offset", "nbytes"}, ...],
//             "payload_bytes": N}
//   rest     raw little-endian IEEE-754 payload; offsets are relative to
//            the first payload byte.
//
// Tensor order follows ParameterSet order, so round trips are bit-exact.
struct Checkpoint {
  nlohmann::json metadata;
  ParameterSet params;
  std::string id;  // content hash of the file bytes
};

inline constexpr std::string_view kCheckpointMagic = "EMOALIGN-TENSORS 1";

std::string encode_checkpoint(const ParameterSet& params, const nlohmann::json& metadata);
Checkpoint decode_checkpoint(std::string_view bytes);

// Returns the id of the written checkpoint.
std::string save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                            const nlohmann::json& metadata);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// SHA-256 helpers used for content ids and determinism checks.
std::string sha256_hex(std::string_view bytes);
std::string short_id(std::string_view bytes);  // first 16 hex digits of sha256
std::string file_sha256(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename, so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace emoalign
