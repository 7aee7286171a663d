// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qac/error.hpp"

namespace qac {

template <typename T>
void adamw_step(std::span<Tensor<T>> params, AdamWState<T>& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), T(0));
      state.second_moment.emplace_back(p.numel(), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractError("adamw_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel()) {
      throw DimensionError("adamw_step: moment size mismatch for parameter " + std::to_string(i));
    }
    if (params[i].requires_grad() && !params[i].has_grad()) {
      throw ContractError("adamw_step: parameter " + std::to_string(i) + " has no gradient");
    }
  }

  state.step += 1;
  const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T lr = static_cast<T>(state.learning_rate);
  const T decay = static_cast<T>(1.0 - state.learning_rate * state.weight_decay);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T eps = static_cast<T>(state.epsilon);
  const T c1 = static_cast<T>(1.0 / bias1), c2 = static_cast<T>(1.0 / bias2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.requires_grad()) continue;  // frozen
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] *= decay;
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T m_hat = m[j] * c1;
      const T v_hat = v[j] * c2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

double linear_schedule(std::int64_t step, std::int64_t total_steps, double warmup_ratio) {
  if (total_steps <= 0) return 1.0;
  const auto warmup = static_cast<std::int64_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
  if (warmup > 0 && step < warmup) return static_cast<double>(step + 1) / static_cast<double>(warmup);
  const auto remaining = total_steps - warmup;
  if (remaining <= 0) return 1.0;
  return std::max(0.0, static_cast<double>(total_steps - step) / static_cast<double>(remaining));
}

template void adamw_step<float>(std::span<Tensor<float>>, AdamWState<float>&);
template void adamw_step<double>(std::span<Tensor<double>>, AdamWState<double>&);

}  // namespace qac
