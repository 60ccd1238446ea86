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

#pragma once

#include <cstdint>
#include <vector>

#include "nerve/tensor.hpp"

namespace nerve::nn {

struct AdamWHyper {
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments per parameter, aligned with the store's entry order.
struct OptimizerState {
  AdamWHyper hyper;
  std::vector<Tensor> first;
  std::vector<Tensor> second;
  std::int64_t step = 0;

  static OptimizerState init(const ParameterStore& params, AdamWHyper hyper = {});
};

/// One AdamW update with decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
/// using the gradients currently held in the store.
void adamw_step(ParameterStore& params, OptimizerState& state, double lr);

/// Linear warmup from 0 to base_lr, then half-cosine decay to 0 at total_steps.
struct LRSchedule {
  double base_lr = 1e-2;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;

  void validate() const;
};

double lr_at(const LRSchedule& schedule, std::int64_t step);

}  // namespace nerve::nn
