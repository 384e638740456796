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


#include "emoalign/training.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <numeric>

#include "emoalign/error.hpp"

namespace emoalign {

std::vector<std::vector<std::size_t>> bucket_batches(const std::vector<std::size_t>& lengths,
                                                     std::size_t batch_size,
                                                     std::mt19937_64& rng) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + batch_size));
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

PaddedBatch pad_batch(const EncoderConfig& cfg, const std::vector<const Tensor*>& inputs) {
  PaddedBatch batch;
  std::size_t longest = 0;
  for (const Tensor* t : inputs) longest = std::max(longest, t->rows());
  const std::size_t padded_frames = longest ? cfg.output_frames(longest) : 0;
  for (const Tensor* t : inputs) {
    const std::size_t n = cfg.output_frames(t->rows());
    Tensor padded = Tensor::zeros(longest, t->cols());
    std::copy(t->data().begin(), t->data().end(), padded.data().begin());
    std::vector<bool> valid(padded_frames, false);
    std::fill_n(valid.begin(), n, true);
    batch.inputs.push_back(std::move(padded));
    batch.valid.push_back(std::move(valid));
    batch.valid_frames.push_back(n);
  }
  return batch;
}

std::vector<bool> trainable_mask(const ParameterSet& params,
                                 const std::vector<std::string_view>& frozen_prefixes) {
  std::vector<bool> mask(params.size(), true);
  for (std::size_t s = 0; s < params.size(); ++s) {
    for (auto p : frozen_prefixes) {
      if (params.name(s).starts_with(p)) mask[s] = false;
    }
  }
  return mask;
}

std::vector<bool> trainable_only(const ParameterSet& params,
                                 const std::vector<std::string_view>& prefixes) {
  std::vector<bool> mask(params.size(), false);
  for (std::size_t s = 0; s < params.size(); ++s) {
    for (auto p : prefixes) {
      if (params.name(s).starts_with(p)) mask[s] = true;
    }
  }
  return mask;
}

Tensor base_features(const EncoderConfig& cfg, const Tensor& input) {
  if (!cfg.uses_conv()) return input;
  const std::size_t T = cfg.output_frames(input.rows());
  const std::size_t stride = cfg.total_stride();
  const std::size_t field = cfg.receptive_field();
  Tensor out = Tensor::zeros(T, input.cols());
  for (std::size_t j = 0; j < T; ++j) {
    for (std::size_t r = j * stride; r < j * stride + field; ++r)
      for (std::size_t c = 0; c < input.cols(); ++c) out(j, c) += input(r, c);
    for (std::size_t c = 0; c < input.cols(); ++c) out(j, c) /= static_cast<double>(field);
  }
  return out;
}

namespace {
std::atomic<std::size_t> g_threads{1};
}

void set_num_threads(std::size_t n) { g_threads = std::max<std::size_t>(1, n); }
std::size_t num_threads() { return g_threads; }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(num_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

}  // namespace emoalign
