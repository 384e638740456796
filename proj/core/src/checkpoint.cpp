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


#include "emoalign/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/sha.h>

#include "emoalign/error.hpp"

namespace emoalign {

namespace {

void append_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string encode_checkpoint(const ParameterSet& params, const nlohmann::json& metadata) {
  nlohmann::json header;
  header["metadata"] = metadata;
  header["tensors"] = nlohmann::json::array();
  std::string payload;
  payload.reserve(params.num_scalars() * 8);
  for (std::size_t s = 0; s < params.size(); ++s) {
    const Tensor& t = params.at(s);
    header["tensors"].push_back({{"name", params.name(s)},
                                 {"shape", t.shape()},
                                 {"dtype", "float64"},
                                 {"offset", payload.size()},
                                 {"nbytes", t.size() * 8}});
    for (double v : t.data()) append_le(payload, v);
  }
  header["payload_bytes"] = payload.size();

  std::string out(kCheckpointMagic);
  out += '\n';
  out += header.dump();
  out += '\n';
  out += payload;
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  const auto first_nl = bytes.find('\n');
  if (first_nl == std::string_view::npos || bytes.substr(0, first_nl) != kCheckpointMagic) {
    throw ParseError("checkpoint: missing or unsupported magic line");
  }
  const auto second_nl = bytes.find('\n', first_nl + 1);
  if (second_nl == std::string_view::npos) throw ParseError("checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(first_nl + 1, second_nl - first_nl - 1));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: malformed header: ") + e.what());
  }

  const std::string_view payload = bytes.substr(second_nl + 1);
  Checkpoint ckpt;
  try {
    if (payload.size() != header.at("payload_bytes").get<std::size_t>()) {
      throw ParseError("checkpoint: payload is " + std::to_string(payload.size()) +
                       " bytes, header declares " + header.at("payload_bytes").dump());
    }
    ckpt.metadata = header.at("metadata");
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      if (entry.at("dtype").get<std::string>() != "float64") {
        throw ParseError("checkpoint: tensor '" + name + "' has unsupported dtype");
      }
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto nbytes = entry.at("nbytes").get<std::size_t>();
      if (offset + nbytes > payload.size() || nbytes % 8 != 0) {
        throw ParseError("checkpoint: tensor '" + name + "' exceeds the payload");
      }
      std::vector<double> data(nbytes / 8);
      for (std::size_t i = 0; i < data.size(); ++i) data[i] = read_le(payload.data() + offset + 8 * i);
      try {
        ckpt.params.add(name, Tensor(shape, std::move(data)));
      } catch (const DimensionError& e) {
        throw ParseError("checkpoint: tensor '" + name + "': " + e.what());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: malformed header: ") + e.what());
  }
  ckpt.id = short_id(bytes);
  return ckpt;
}

std::string save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                            const nlohmann::json& metadata) {
  const std::string bytes = encode_checkpoint(params, metadata);
  write_file(path, bytes);
  return short_id(bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char c : digest) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 0xf]);
  }
  return out;
}

std::string short_id(std::string_view bytes) { return sha256_hex(bytes).substr(0, 16); }

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace emoalign
