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

#include <cstdint>
#include <functional>
#include <random>
#include <string_view>
#include <vector>

#include "emoalign/autograd.hpp"
#include "emoalign/encoder.hpp"

namespace emoalign {

// Length-bucketed mini-batches: items are shuffled, stably sorted by
// length, cut into consecutive groups of batch_size, and the group order
// is shuffled. Returns indices into `lengths`.
std::vector<std::vector<std::size_t>> bucket_batches(const std::vector<std::size_t>& lengths,
                                                     std::size_t batch_size,
                                                     std::mt19937_64& rng);

// Right-pads every input of a batch to the longest one with zero rows.
// valid[j] flags the post-extractor frames of item j that come from real
// input.
struct PaddedBatch {
  std::vector<Tensor> inputs;
  std::vector<std::vector<bool>> valid;
  std::vector<std::size_t> valid_frames;
};

PaddedBatch pad_batch(const EncoderConfig& cfg, const std::vector<const Tensor*>& inputs);

// Trainable mask for the optimizer: false for every parameter whose name
// starts with one of the frozen prefixes.
std::vector<bool> trainable_mask(const ParameterSet& params,
                                 const std::vector<std::string_view>& frozen_prefixes);

// Same, but only parameters under one of the given prefixes train.
std::vector<bool> trainable_only(const ParameterSet& params,
                                 const std::vector<std::string_view>& prefixes);

// Extractor-aligned raw features: the input frames themselves on the
// projection path, or the mean of the input rows under each output
// frame's receptive field on the conv path.
Tensor base_features(const EncoderConfig& cfg, const Tensor& input);

// Worker count for read-only evaluation loops; 1 by default.
void set_num_threads(std::size_t n);
std::size_t num_threads();

// Runs fn(0..n-1), split into contiguous chunks across the workers.
// Results must be written to per-index slots; the first exception is
// rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace emoalign
