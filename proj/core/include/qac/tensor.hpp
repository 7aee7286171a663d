// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace qac {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(const std::vector<T>&)> backward;
};

}  // namespace detail

/// Keeps freed activation buffers in the process heap instead of returning
/// them to the OS after every step. Call once at startup; a no-op off glibc.
void tune_allocator();

/// Whether operations record the graph on the current thread.
bool grad_enabled();

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major array with reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node.
/// Use clone() for an independent copy. Operations recorded while grad mode is
/// on build a graph that backward() consumes and releases; leaf tensors keep
/// their accumulated grad until zero_grad().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;
  /// Rows/cols of a 2-D tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> data() const;
  std::span<T> mutable_data();
  T item() const;
  T at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  /// Allocates (or resets) the grad buffer to zeros.
  void zero_grad();

  /// Reverse-mode pass from this scalar. Frees the recorded graph afterwards.
  void backward();

  Tensor detach() const;
  Tensor clone() const;

  /// Not part of the public API; used by operation implementations.
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

// Elementwise and structural operations. All are differentiable in every
// tensor argument. Shape rules: no broadcasting apart from add_bias.

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
/// x[R,C] + bias[C] broadcast over rows.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

/// a[m,k] x b[k,n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a[m,k] x b[n,k]^T.
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);

/// Row-wise layer normalisation of x[R,C] with affine gamma[C], beta[C].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-12));

/// Softmax over the last dimension, stabilised by subtracting the row max.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);

/// Mean negative log-likelihood of targets[i] at row positions[i] of logits[R,V].
/// Throws IndexError on an out-of-range row or target.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                        std::span<const std::size_t> positions);

/// out[i] = table[ids[i]]; gradient scatter-adds into the table.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids);

/// out[i] = take_a[i] ? a[i] : b[i] for 2-D a, b of equal shape.
template <typename T>
Tensor<T> where_rows(std::span<const std::uint8_t> take_a, const Tensor<T>& a, const Tensor<T>& b);

/// Multi-head scaled dot-product attention over a padded batch.
///
/// q, k, v are [batch * seq, d]; key_mask[batch * seq] is 1 for real tokens.
/// Masked keys receive exactly zero attention weight.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t batch,
                    std::size_t seq, std::size_t heads, std::span<const std::uint8_t> key_mask);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

/// General matrix multiply on raw row-major buffers: C (+)= op(A) op(B).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate);

}  // namespace qac
