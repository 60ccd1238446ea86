/*
 * Copyright 2026 The nerve Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "nerve/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "nerve/error.hpp"

namespace nerve::nn {

OptimizerState OptimizerState::init(const ParameterStore& params, AdamWHyper hyper) {
  OptimizerState s;
  s.hyper = hyper;
  for (const auto& e : params.entries()) {
    s.first.emplace_back(e.param->value.shape());
    s.second.emplace_back(e.param->value.shape());
  }
  return s;
}

void adamw_step(ParameterStore& params, OptimizerState& state, double lr) {
  const auto& entries = params.entries();
  if (state.first.size() != entries.size() || state.second.size() != entries.size())
    throw ShapeError("optimizer state does not match the parameter store");
  const auto& h = state.hyper;
  ++state.step;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Parameter& p = *entries[i].param;
    Tensor& m = state.first[i];
    Tensor& v = state.second[i];
    if (!m.same_shape(p.value) || !v.same_shape(p.value) || !p.grad.same_shape(p.value))
      throw ShapeError("optimizer moment shape mismatch for " + entries[i].name);
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g;
      v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.value[k] -= lr * (mhat / (std::sqrt(vhat) + h.eps) + h.weight_decay * p.value[k]);
    }
  }
}

void LRSchedule::validate() const {
  if (warmup_steps < 0 || warmup_steps >= total_steps)
    throw ConfigError("schedule needs 0 <= warmup (" + std::to_string(warmup_steps) +
                      ") < total (" + std::to_string(total_steps) + ")");
  if (!(base_lr >= 0.0)) throw ConfigError("base learning rate must be >= 0");
}

double lr_at(const LRSchedule& s, std::int64_t step) {
  s.validate();
  if (step < 0 || step > s.total_steps)
    throw ConfigError("schedule step " + std::to_string(step) + " outside [0, " +
                      std::to_string(s.total_steps) + "]");
  if (step < s.warmup_steps)
    return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace nerve::nn
