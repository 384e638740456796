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


#include "emoalign/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "emoalign/error.hpp"

namespace emoalign {

namespace {

double evaluate(const ParameterSet& params, const ScalarObjective& objective) {
  Graph g(&params);
  const double v = g.value(objective(g)).item();
  if (!std::isfinite(v)) throw NumericError("grad_check: objective is not finite");
  return v;
}

}  // namespace

GradCheckReport grad_check(ParameterSet& params, const ScalarObjective& objective,
                           double epsilon) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
    throw ConfigError("grad_check: epsilon must lie in [1e-6, 1e-3]");
  }

  ParameterSet analytic = params.zeros_like();
  {
    Graph g(&params);
    Var loss = objective(g);
    if (!std::isfinite(g.value(loss).item())) throw NumericError("grad_check: objective is not finite");
    g.backward(loss);
    g.accumulate_param_grads(analytic);
  }

  GradCheckReport report;
  for (std::size_t s = 0; s < params.size(); ++s) {
    auto values = params.at(s).data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + epsilon;
      const double up = evaluate(params, objective);
      values[i] = saved - epsilon;
      const double down = evaluate(params, objective);
      values[i] = saved;

      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic.at(s).data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error || report.checked == 1) {
        report.max_relative_error = rel;
        report.worst_parameter = params.name(s);
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace emoalign
