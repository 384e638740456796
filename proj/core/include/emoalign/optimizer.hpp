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

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "emoalign/autograd.hpp"

namespace emoalign {

enum class LrSchedule { constant, linear_warmup };

LrSchedule lr_schedule_from_string(const std::string& s);
std::string to_string(LrSchedule s);

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 0;
  LrSchedule schedule = LrSchedule::constant;

  void validate() const;
};

// Adam with decoupled weight decay. Decay multiplies the parameter by
// (1 - lr * weight_decay) and never passes through the moment estimates.
class AdamW {
 public:
  AdamW(AdamWConfig config, const ParameterSet& params);

  // Learning rate used by the given 1-based step. Under linear_warmup the
  // rate ramps as base * step / warmup_steps and holds at base afterwards.
  double learning_rate_at(std::size_t step) const;

  // Applies one update. Slots with trainable[slot] == false are left
  // untouched (their moments stay zero). Throws NumericError on a
  // non-finite gradient before modifying anything.
  void step(ParameterSet& params, const ParameterSet& grads);

  void set_trainable(std::vector<bool> mask);
  std::size_t step_count() const noexcept { return step_; }
  const AdamWConfig& config() const noexcept { return config_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  AdamWConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::vector<bool> trainable_;
  std::size_t step_ = 0;
};

}  // namespace emoalign
