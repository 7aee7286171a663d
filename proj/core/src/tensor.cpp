// Copyright 2026 The qacpt Authors
// SPDX-License-Identifier: Apache-2.0

#include "qac/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "qac/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace qac {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
std::vector<T>& grad_of(detail::Node<T>& node) {
  if (node.grad.empty()) node.grad.assign(node.data.size(), T(0));
  return node.grad;
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return Tensor<T>(std::move(node));
}

template <typename T>
bool should_track(std::initializer_list<const Tensor<T>*> inputs) {
  if (!g_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>* t) { return t->requires_grad(); });
}

template <typename T, typename Fn>
void attach(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs, Fn&& fn) {
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto* in : inputs) node.parents.push_back(in->node());
  node.backward = std::forward<Fn>(fn);
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

template <typename T>
void require_2d(const Tensor<T>& t, const char* op) {
  require_defined(t, op);
  if (t.dim() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + shape_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename T>
void transpose_into(const T* src, std::size_t rows, std::size_t cols, std::vector<T>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

// C[m,n] += A[m,k] B[k,n], all row-major and non-aliasing.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a, const T* __restrict b,
             T* __restrict c) {
  constexpr std::size_t kBlock = 256;
  for (std::size_t p0 = 0; p0 < k; p0 += kBlock) {
    const std::size_t p1 = std::min(k, p0 + kBlock);
    for (std::size_t i = 0; i < m; ++i) {
      T* __restrict crow = c + i * n;
      const T* arow = a + i * k;
      for (std::size_t p = p0; p < p1; ++p) {
        const T av = arow[p];
        const T* __restrict brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// C[m,n] += A^T B where A is stored [k,m] and B is [k,n].
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a, const T* __restrict b,
             T* __restrict c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* __restrict brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* __restrict crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  if (m == 0 || n == 0 || k == 0) return;
  std::vector<T> bt;
  if (trans_b) {
    // b is stored [n,k]; materialise B^T as [k,n].
    transpose_into(b, n, k, bt);
    b = bt.data();
  }
  if (trans_a) {
    gemm_tn(m, n, k, a, b, c);
  } else {
    gemm_nn(m, n, k, a, b, c);
  }
}

void tune_allocator() {
#if defined(__GLIBC__)
  // Activations are a few hundred KB each; without this glibc mmaps and
  // unmaps every one of them and page faults dominate a training step.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_string(shape) + " holds " + std::to_string(shape_numel(shape)) +
                         " values but " + std::to_string(data.size()) + " were given");
  }
  for (auto s : shape) {
    if (s == 0) throw DimensionError("tensor: zero-sized dimension in " + shape_string(shape));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw IndexError("size: axis " + std::to_string(axis) + " of " + shape_string(s));
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  require_defined(*this, "numel");
  return node_->data.size();
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  require_2d(*this, "rows");
  return node_->shape[0];
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  require_2d(*this, "cols");
  return node_->shape[1];
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  require_defined(*this, "data");
  return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  require_defined(*this, "mutable_data");
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::size_t row, std::size_t col) const {
  if (row >= rows() || col >= cols()) {
    throw IndexError("at: (" + std::to_string(row) + "," + std::to_string(col) + ") outside " +
                     shape_string(shape()));
  }
  return node_->data[row * cols() + col];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ != nullptr && node_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
  require_defined(*this, "set_requires_grad");
  node_->requires_grad = value;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ != nullptr && !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  require_defined(*this, "grad");
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  require_defined(*this, "grad");
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  require_defined(*this, "zero_grad");
  node_->grad.assign(node_->data.size(), T(0));
}

template <typename T>
void Tensor<T>::backward() {
  require_defined(*this, "backward");
  if (numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(shape()));
  }
  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  grad_of(*node_)[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(node->grad);
  }
  for (auto* node : order) {
    if (!node->backward) continue;
    node->backward = nullptr;
    node->parents.clear();
    std::vector<T>().swap(node->grad);
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  require_defined(*this, "detach");
  return make_result<T>(node_->shape, node_->data);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  auto out = detach();
  out.node()->requires_grad = requires_grad();
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  auto result = make_result<T>(a.shape(), std::move(out));
  if (should_track<T>({&a, &b})) {
    attach(result, {&a, &b}, [an = a.node(), bn = b.node()](const std::vector<T>& g) {
      for (auto* n : {an.get(), bn.get()}) {
        if (!n->requires_grad) continue;
        auto& gn = grad_of(*n);
        for (std::size_t i = 0; i < g.size(); ++i) gn[i] += g[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  auto result = make_result<T>(a.shape(), std::move(out));
  if (should_track<T>({&a, &b})) {
    attach(result, {&a, &b}, [an = a.node(), bn = b.node()](const std::vector<T>& g) {
      if (an->requires_grad) {
        auto& ga = grad_of(*an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        auto& gb = grad_of(*bn);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  auto result = make_result<T>(a.shape(), std::move(out));
  if (should_track<T>({&a, &b})) {
    attach(result, {&a, &b}, [an = a.node(), bn = b.node()](const std::vector<T>& g) {
      if (an->requires_grad) {
        auto& ga = grad_of(*an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto& gb = grad_of(*bn);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->data[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  require_defined(a, "scale");
  std::vector<T> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * factor;
  auto result = make_result<T>(a.shape(), std::move(out));
  if (should_track<T>({&a})) {
    attach(result, {&a}, [an = a.node(), factor](const std::vector<T>& g) {
      auto& ga = grad_of(*an);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return result;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_2d(x, "add_bias");
  require_defined(bias, "add_bias");
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (bias.dim() != 1 || bias.size(0) != cols) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match rows of " +
                         shape_string(x.shape()));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bd[c];
  }
  auto result = make_result<T>(x.shape(), std::move(out));
  if (should_track<T>({&x, &bias})) {
    attach(result, {&x, &bias}, [xn = x.node(), bn = bias.node(), rows, cols](const std::vector<T>& g) {
      if (xn->requires_grad) {
        auto& gx = grad_of(*xn);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bn->requires_grad) {
        auto& gb = grad_of(*bn);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Matrix products

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<T> out(m * n);
  gemm<T>(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  auto result = make_result<T>(Shape{m, n}, std::move(out));
  if (should_track<T>({&a, &b})) {
    attach(result, {&a, &b}, [an = a.node(), bn = b.node(), m, n, k](const std::vector<T>& g) {
      if (an->requires_grad) {
        // dA = dC B^T
        gemm<T>(false, true, m, k, n, g.data(), bn->data.data(), grad_of(*an).data(), true);
      }
      if (bn->requires_grad) {
        // dB = A^T dC
        gemm<T>(true, false, k, n, m, an->data.data(), g.data(), grad_of(*bn).data(), true);
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree for " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "^T");
  }
  std::vector<T> out(m * n);
  gemm<T>(false, true, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  auto result = make_result<T>(Shape{m, n}, std::move(out));
  if (should_track<T>({&a, &b})) {
    attach(result, {&a, &b}, [an = a.node(), bn = b.node(), m, n, k](const std::vector<T>& g) {
      if (an->requires_grad) {
        // dA = dC B
        gemm<T>(false, false, m, k, n, g.data(), bn->data.data(), grad_of(*an).data(), true);
      }
      if (bn->requires_grad) {
        // dB = dC^T A
        gemm<T>(true, false, n, k, m, g.data(), an->data.data(), grad_of(*bn).data(), true);
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalisation

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  require_defined(x, "gelu");
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(0.5) * xd[i] * (T(1) + std::erf(xd[i] * inv_sqrt2));
  auto result = make_result<T>(x.shape(), std::move(out));
  if (should_track<T>({&x})) {
    attach(result, {&x}, [xn = x.node(), inv_sqrt2](const std::vector<T>& g) {
      const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
      auto& gx = grad_of(*xn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = xn->data[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  require_defined(x, "tanh");
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xd[i]);
  auto result = make_result<T>(x.shape(), out);
  if (should_track<T>({&x})) {
    attach(result, {&x}, [xn = x.node(), y = std::move(out)](const std::vector<T>& g) {
      auto& gx = grad_of(*xn);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
    });
  }
  return result;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_2d(x, "layer_norm");
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gamma.dim() != 1 || gamma.size(0) != cols || beta.shape() != gamma.shape()) {
    throw DimensionError("layer_norm: affine parameters " + shape_string(gamma.shape()) + "/" +
                         shape_string(beta.shape()) + " do not match " + shape_string(x.shape()));
  }
  std::vector<T> out(rows * cols);
  std::vector<T> xhat(rows * cols);
  std::vector<T> rstd(rows);
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * cols;
    T mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += row[c];
    mu /= T(cols);
    T var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= T(cols);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (row[c] - mu) * rstd[r];
      xhat[r * cols + c] = h;
      out[r * cols + c] = gd[c] * h + bd[c];
    }
  }
  auto result = make_result<T>(x.shape(), std::move(out));
  if (should_track<T>({&x, &gamma, &beta})) {
    attach(result, {&x, &gamma, &beta},
           [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat = std::move(xhat), rstd = std::move(rstd),
            rows, cols](const std::vector<T>& g) {
             if (gn->requires_grad) {
               auto& gg = grad_of(*gn);
               for (std::size_t r = 0; r < rows; ++r) {
                 for (std::size_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * xhat[r * cols + c];
               }
             }
             if (bn->requires_grad) {
               auto& gb = grad_of(*bn);
               for (std::size_t r = 0; r < rows; ++r) {
                 for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
               }
             }
             if (xn->requires_grad) {
               auto& gx = grad_of(*xn);
               for (std::size_t r = 0; r < rows; ++r) {
                 T mean_dxhat = 0, mean_dxhat_xhat = 0;
                 for (std::size_t c = 0; c < cols; ++c) {
                   const T dxh = g[r * cols + c] * gn->data[c];
                   mean_dxhat += dxh;
                   mean_dxhat_xhat += dxh * xhat[r * cols + c];
                 }
                 mean_dxhat /= T(cols);
                 mean_dxhat_xhat /= T(cols);
                 for (std::size_t c = 0; c < cols; ++c) {
                   const T dxh = g[r * cols + c] * gn->data[c];
                   gx[r * cols + c] += rstd[r] * (dxh - mean_dxhat - xhat[r * cols + c] * mean_dxhat_xhat);
                 }
               }
             }
           });
  }
  return result;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_defined(x, "softmax_rows");
  if (x.dim() == 0 || x.shape().back() == 0) {
    throw DimensionError("softmax_rows: empty last dimension in " + shape_string(x.shape()));
  }
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * cols;
    T* o = out.data() + r * cols;
    const T mx = *std::max_element(row, row + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(row[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  auto result = make_result<T>(x.shape(), out);
  if (should_track<T>({&x})) {
    attach(result, {&x}, [xn = x.node(), y = std::move(out), rows, cols](const std::vector<T>& g) {
      auto& gx = grad_of(*xn);
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * g[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                        std::span<const std::size_t> positions) {
  require_2d(logits, "cross_entropy");
  if (targets.size() != positions.size()) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(positions.size()) + " positions");
  }
  const std::size_t rows = logits.rows(), vocab = logits.cols();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= rows) {
      throw IndexError("cross_entropy: position " + std::to_string(positions[i]) + " outside " +
                       std::to_string(rows) + " rows");
    }
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw IndexError("cross_entropy: target id " + std::to_string(targets[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  const std::size_t count = positions.size();
  auto ld = logits.data();
  // Per-position softmax, kept for the backward pass.
  std::vector<T> probs(count * vocab);
  T total = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const T* row = ld.data() + positions[i] * vocab;
    const T mx = *std::max_element(row, row + vocab);
    T z = 0;
    for (std::size_t c = 0; c < vocab; ++c) {
      probs[i * vocab + c] = std::exp(row[c] - mx);
      z += probs[i * vocab + c];
    }
    for (std::size_t c = 0; c < vocab; ++c) probs[i * vocab + c] /= z;
    total += (mx + std::log(z)) - row[targets[i]];
  }
  const T value = count == 0 ? T(0) : total / T(count);
  auto result = make_result<T>(Shape{}, std::vector<T>{value});
  if (count > 0 && should_track<T>({&logits})) {
    attach(result, {&logits},
           [ln = logits.node(), probs = std::move(probs), tgt = std::vector<std::int32_t>(targets.begin(), targets.end()),
            pos = std::vector<std::size_t>(positions.begin(), positions.end()), vocab](const std::vector<T>& g) {
             auto& gl = grad_of(*ln);
             const T s = g[0] / T(pos.size());
             for (std::size_t i = 0; i < pos.size(); ++i) {
               T* row = gl.data() + pos[i] * vocab;
               for (std::size_t c = 0; c < vocab; ++c) row[c] += s * probs[i * vocab + c];
               row[tgt[i]] -= s;
             }
           });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Row plumbing

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  require_2d(table, "gather_rows");
  const std::size_t rows = table.rows(), cols = table.cols();
  if (ids.empty()) throw DimensionError("gather_rows: no rows requested");
  std::vector<T> out(ids.size() * cols);
  auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(rows) +
                       " rows");
    }
    std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * cols, cols, out.data() + i * cols);
  }
  auto result = make_result<T>(Shape{ids.size(), cols}, std::move(out));
  if (should_track<T>({&table})) {
    attach(result, {&table},
           [tn = table.node(), idx = std::vector<std::int32_t>(ids.begin(), ids.end()), cols](const std::vector<T>& g) {
             auto& gt = grad_of(*tn);
             for (std::size_t i = 0; i < idx.size(); ++i) {
               T* dst = gt.data() + static_cast<std::size_t>(idx[i]) * cols;
               const T* src = g.data() + i * cols;
               for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
             }
           });
  }
  return result;
}

template <typename T>
Tensor<T> where_rows(std::span<const std::uint8_t> take_a, const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "where_rows");
  require_same_shape(a, b, "where_rows");
  const std::size_t rows = a.rows(), cols = a.cols();
  if (take_a.size() != rows) {
    throw DimensionError("where_rows: mask of " + std::to_string(take_a.size()) + " for " + shape_string(a.shape()));
  }
  std::vector<T> out(rows * cols);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = (take_a[r] ? ad.data() : bd.data()) + r * cols;
    std::copy_n(src, cols, out.data() + r * cols);
  }
  auto result = make_result<T>(a.shape(), std::move(out));
  if (should_track<T>({&a, &b})) {
    attach(result, {&a, &b},
           [an = a.node(), bn = b.node(), mask = std::vector<std::uint8_t>(take_a.begin(), take_a.end()),
            cols](const std::vector<T>& g) {
             for (std::size_t r = 0; r < mask.size(); ++r) {
               auto* n = mask[r] ? an.get() : bn.get();
               if (!n->requires_grad) continue;
               auto& gn = grad_of(*n);
               for (std::size_t c = 0; c < cols; ++c) gn[r * cols + c] += g[r * cols + c];
             }
           });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Attention

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t batch, std::size_t seq,
                    std::size_t heads, std::span<const std::uint8_t> key_mask) {
  require_2d(q, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const std::size_t d = q.cols();
  if (q.rows() != batch * seq) {
    throw DimensionError("attention: " + shape_string(q.shape()) + " is not batch " + std::to_string(batch) +
                         " x seq " + std::to_string(seq));
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  if (key_mask.size() != batch * seq) {
    throw DimensionError("attention: key mask of " + std::to_string(key_mask.size()) + " for " +
                         std::to_string(batch * seq) + " rows");
  }
  const std::size_t dh = d / heads;
  const T scale_factor = T(1) / std::sqrt(T(dh));
  auto qd = q.data();
  auto kd = k.data();
  auto vd = v.data();
  std::vector<T> out(batch * seq * d, T(0));
  // Attention weights per (batch, head, query, key).
  std::vector<T> probs(batch * heads * seq * seq, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * seq;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      T* p = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const T* qi = qd.data() + (base + i) * d + off;
        T* prow = p + i * seq;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < seq; ++j) {
          if (!key_mask[base + j]) continue;
          const T* kj = kd.data() + (base + j) * d + off;
          T s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          s *= scale_factor;
          prow[j] = s;
          mx = std::max(mx, s);
        }
        if (mx == -std::numeric_limits<T>::infinity()) continue;  // every key padded
        T z = 0;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!key_mask[base + j]) {
            prow[j] = T(0);
            continue;
          }
          prow[j] = std::exp(prow[j] - mx);
          z += prow[j];
        }
        T* oi = out.data() + (base + i) * d + off;
        for (std::size_t j = 0; j < seq; ++j) {
          prow[j] /= z;
          if (prow[j] == T(0)) continue;
          const T* vj = vd.data() + (base + j) * d + off;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += prow[j] * vj[c];
        }
      }
    }
  }
  auto result = make_result<T>(q.shape(), std::move(out));
  if (should_track<T>({&q, &k, &v})) {
    attach(result, {&q, &k, &v},
           [qn = q.node(), kn = k.node(), vn = v.node(), probs = std::move(probs), batch, seq, heads, dh, d,
            scale_factor](const std::vector<T>& g) {
             std::vector<T>* gq = qn->requires_grad ? &grad_of(*qn) : nullptr;
             std::vector<T>* gk = kn->requires_grad ? &grad_of(*kn) : nullptr;
             std::vector<T>* gv = vn->requires_grad ? &grad_of(*vn) : nullptr;
             std::vector<T> dp(seq);
             for (std::size_t b = 0; b < batch; ++b) {
               const std::size_t base = b * seq;
               for (std::size_t h = 0; h < heads; ++h) {
                 const std::size_t off = h * dh;
                 const T* p = probs.data() + (b * heads + h) * seq * seq;
                 for (std::size_t i = 0; i < seq; ++i) {
                   const T* prow = p + i * seq;
                   const T* gi = g.data() + (base + i) * d + off;
                   T dot = 0;
                   for (std::size_t j = 0; j < seq; ++j) {
                     if (prow[j] == T(0)) {
                       dp[j] = T(0);
                       continue;
                     }
                     const T* vj = vn->data.data() + (base + j) * d + off;
                     T s = 0;
                     for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
                     dp[j] = s;
                     dot += prow[j] * s;
                     if (gv) {
                       T* gvj = gv->data() + (base + j) * d + off;
                       for (std::size_t c = 0; c < dh; ++c) gvj[c] += prow[j] * gi[c];
                     }
                   }
                   const T* qi = qn->data.data() + (base + i) * d + off;
                   for (std::size_t j = 0; j < seq; ++j) {
                     if (prow[j] == T(0)) continue;
                     const T ds = prow[j] * (dp[j] - dot) * scale_factor;
                     const T* kj = kn->data.data() + (base + j) * d + off;
                     if (gq) {
                       T* gqi = gq->data() + (base + i) * d + off;
                       for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                     }
                     if (gk) {
                       T* gkj = gk->data() + (base + j) * d + off;
                       for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                     }
                   }
                 }
               }
             }
           });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  require_defined(x, "sum");
  T total = 0;
  for (auto v : x.data()) total += v;
  auto result = make_result<T>(Shape{}, std::vector<T>{total});
  if (should_track<T>({&x})) {
    attach(result, {&x}, [xn = x.node()](const std::vector<T>& g) {
      auto& gx = grad_of(*xn);
      for (auto& v : gx) v += g[0];
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

#define QAC_INSTANTIATE_TENSOR(T)                                                                                  \
  template class Tensor<T>;                                                                                        \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);          \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                                \
  template Tensor<T> add_bias<T>(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> matmul_nt<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                                    \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                                                    \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                       \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                                            \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const std::int32_t>, std::span<const std::size_t>); \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::int32_t>);                              \
  template Tensor<T> where_rows<T>(std::span<const std::uint8_t>, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t,  \
                                  std::size_t, std::span<const std::uint8_t>);                                     \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                                     \
  template Tensor<T> mean<T>(const Tensor<T>&);

QAC_INSTANTIATE_TENSOR(float)
QAC_INSTANTIATE_TENSOR(double)

#undef QAC_INSTANTIATE_TENSOR

}  // namespace qac
