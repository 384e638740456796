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

#include <functional>
#include <string>

#include "emoalign/autograd.hpp"

namespace emoalign {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Builds the scalar objective into the given graph from its parameter set.
using ScalarObjective = std::function<Var(Graph&)>;

// Compares reverse-mode gradients of `objective` against central
// differences (f(p + eps) - f(p - eps)) / 2 eps for every scalar in
// `params`. The relative error of one entry is
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// epsilon must lie in [1e-6, 1e-3]. params is restored on return.
GradCheckReport grad_check(ParameterSet& params, const ScalarObjective& objective,
                           double epsilon = 1e-6);

}  // namespace emoalign
