// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "qac/tensor.hpp"

namespace qac::testing {

struct GradCheckResult {
  double relative_error = 0.0;
  std::size_t coordinates = 0;
};

/// Norm-wise relative error between the analytic gradient of f and central
/// differences, over either every coordinate of every input or `sample`
/// random coordinates per input.
inline GradCheckResult gradcheck(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                                 std::size_t sample = 0, double step = 1e-6, unsigned seed = 7) {
  for (auto& t : inputs) t.zero_grad();
  auto loss = f();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  std::mt19937 rng(seed);
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_data();
    std::vector<std::size_t> coords;
    if (sample == 0 || sample >= values.size()) {
      for (std::size_t j = 0; j < values.size(); ++j) coords.push_back(j);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
      for (std::size_t s = 0; s < sample; ++s) coords.push_back(pick(rng));
    }
    for (auto j : coords) {
      const double saved = values[j];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard guard;
        values[j] = saved + step;
        plus = f().item();
        values[j] = saved - step;
        minus = f().item();
      }
      values[j] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      diff2 += (numeric - analytic[i][j]) * (numeric - analytic[i][j]);
      a2 += analytic[i][j] * analytic[i][j];
      n2 += numeric * numeric;
      ++count;
    }
  }
  const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return {std::sqrt(diff2) / scale, count};
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = normal(rng);
  return Tensor<double>(std::move(shape), std::move(data), requires_grad);
}

}  // namespace qac::testing
