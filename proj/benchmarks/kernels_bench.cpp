// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "qac/tensor.hpp"

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  std::vector<float> out(n);
  for (auto& x : out) x = d(rng);
  return out;
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const bool trans_b = state.range(1) != 0;
  const auto a = noise(n * n, 1), b = noise(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    qac::gemm(false, trans_b, n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}
BENCHMARK(BM_Gemm)->ArgsProduct({{64, 128, 256}, {0, 1}});

void BM_AttentionForwardBackward(benchmark::State& state) {
  const std::size_t batch = 16, seq = static_cast<std::size_t>(state.range(0)), d = 64, heads = 4;
  std::vector<std::uint8_t> mask(batch * seq, 1);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = seq - b % 4; s < seq; ++s) mask[b * seq + s] = 0;
  }
  for (auto _ : state) {
    qac::Tensor<float> q({batch * seq, d}, noise(batch * seq * d, 3), true);
    qac::Tensor<float> k({batch * seq, d}, noise(batch * seq * d, 4), true);
    qac::Tensor<float> v({batch * seq, d}, noise(batch * seq * d, 5), true);
    auto loss = qac::sum(qac::attention(q, k, v, batch, seq, heads, mask));
    loss.backward();
    benchmark::DoNotOptimize(q.grad().data());
  }
}
BENCHMARK(BM_AttentionForwardBackward)->Arg(32)->Arg(64)->Arg(145);

}  // namespace
