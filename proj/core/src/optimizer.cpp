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


#include "emoalign/optimizer.hpp"

#include <cmath>

#include "emoalign/error.hpp"

namespace emoalign {

LrSchedule lr_schedule_from_string(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "linear_warmup") return LrSchedule::linear_warmup;
  throw ConfigError("unknown learning-rate schedule '" + s + "'");
}

std::string to_string(LrSchedule s) {
  return s == LrSchedule::constant ? "constant" : "linear_warmup";
}

void AdamWConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (schedule == LrSchedule::linear_warmup && warmup_steps == 0)
    throw ConfigError("linear_warmup schedule needs warmup_steps > 0");
}

AdamW::AdamW(AdamWConfig config, const ParameterSet& params)
    : config_(config), trainable_(params.size(), true) {
  config_.validate();
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.at(i).shape(), 0.0);
    v_.emplace_back(params.at(i).shape(), 0.0);
  }
}

void AdamW::set_trainable(std::vector<bool> mask) {
  if (mask.size() != m_.size()) throw DimensionError("trainable mask size mismatch");
  trainable_ = std::move(mask);
}

double AdamW::learning_rate_at(std::size_t step) const {
  if (config_.schedule == LrSchedule::linear_warmup && step < config_.warmup_steps) {
    return config_.learning_rate * static_cast<double>(step) /
           static_cast<double>(config_.warmup_steps);
  }
  return config_.learning_rate;
}

void AdamW::step(ParameterSet& params, const ParameterSet& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw DimensionError("optimizer: parameter/gradient count mismatch");
  }
  for (std::size_t s = 0; s < grads.size(); ++s) {
    if (!grads.at(s).same_shape(params.at(s))) {
      throw DimensionError("optimizer: gradient " + grads.at(s).shape_str() + " for parameter '" +
                           params.name(s) + "' of shape " + params.at(s).shape_str());
    }
    if (trainable_[s] && !grads.at(s).all_finite()) {
      throw NumericError("optimizer: non-finite gradient for '" + params.name(s) + "' at step " +
                         std::to_string(step_ + 1));
    }
  }

  ++step_;
  const double lr = learning_rate_at(step_);
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double decay = 1.0 - lr * config_.weight_decay;

  for (std::size_t s = 0; s < params.size(); ++s) {
    if (!trainable_[s]) continue;
    auto p = params.at(s).data();
    auto g = grads.at(s).data();
    auto m = m_[s].data();
    auto v = v_[s].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] *= decay;
      p[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

}  // namespace emoalign
