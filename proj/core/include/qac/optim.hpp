// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qac/tensor.hpp"

namespace qac {

template <typename T>
struct AdamWState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::int64_t step = 0;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One decoupled-weight-decay Adam update over params, in order.
///
/// Moments are allocated on the first call. Every parameter must carry a grad
/// (zero_grad() before the forward pass is enough); a missing one is a
/// ContractError.
template <typename T>
void adamw_step(std::span<Tensor<T>> params, AdamWState<T>& state);

/// Linear warmup to 1 over warmup_ratio * total_steps, then linear decay to 0.
double linear_schedule(std::int64_t step, std::int64_t total_steps, double warmup_ratio);

}  // namespace qac
