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

#include <stdexcept>
#include <string>

namespace emoalign {

// Base of every error raised by the library. kind() is a stable
// machine-readable tag used by the CLI error record.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

#define EMOALIGN_DEFINE_ERROR(Name, tag)                         \
  class Name : public Error {                                    \
   public:                                                       \
    using Error::Error;                                          \
    const char* kind() const noexcept override { return tag; }   \
  };

EMOALIGN_DEFINE_ERROR(ConfigError, "config")
EMOALIGN_DEFINE_ERROR(DimensionError, "dimension")
EMOALIGN_DEFINE_ERROR(NumericError, "numeric")
EMOALIGN_DEFINE_ERROR(LengthError, "length")
EMOALIGN_DEFINE_ERROR(ParseError, "parse")
EMOALIGN_DEFINE_ERROR(CoverageError, "coverage")
EMOALIGN_DEFINE_ERROR(LabelError, "label")
EMOALIGN_DEFINE_ERROR(FoldError, "fold")
EMOALIGN_DEFINE_ERROR(InputError, "input")
EMOALIGN_DEFINE_ERROR(EmptyUtteranceError, "empty_utterance")
EMOALIGN_DEFINE_ERROR(ProvenanceError, "provenance")
EMOALIGN_DEFINE_ERROR(IoError, "io")

#undef EMOALIGN_DEFINE_ERROR

}  // namespace emoalign
