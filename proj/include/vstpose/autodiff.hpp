#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// Every op returns a Var that owns its value and, while gradient recording is
// enabled and some input requires a gradient, a closure that pushes the
// output gradient back into its inputs. Var::backward() runs the closures in
// reverse topological order. Leaf parameters accumulate gradients until
// zero_grad() is called.

#include <functional>
#include <memory>
#include <vector>

#include "vstpose/tensor.hpp"

namespace vstpose::ad {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Lazily allocates the gradient buffer.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  /// Direct mutation is only meaningful on leaves (parameters, inputs).
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  /// Gradient accumulated by backward(); zeros if none has been recorded.
  Tensor grad() const;
  void zero_grad();

  /// Seeds d(self)/d(self) = 1 for a scalar (single element) output.
  void backward() const;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled() noexcept;

/// Disables graph recording for the current thread within its scope.
class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline Var constant(Tensor value) { return Var(std::move(value), false); }
inline Var parameter(Tensor value) { return Var(std::move(value), true); }

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
/// a + b where b broadcasts against a's trailing axes (numpy rules, b.rank <= a.rank).
Var add_broadcast(const Var& a, const Var& b);
Var gelu(const Var& x);

// Shape.
Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, const std::vector<std::size_t>& perm);
/// Removes `axis` by picking a single index along it.
Var select(const Var& x, std::size_t axis, std::size_t index);
Var concat_last(const Var& a, const Var& b);

// Linear algebra.
/// x[..., in] * w[in, out] (+ bias[out]); bias may be undefined.
Var linear(const Var& x, const Var& w, const Var& bias = Var());
/// Batched matmul: a[G, n, k] * b[G, k, m], or b[G, m, k]^T when transpose_b.
Var bmm(const Var& a, const Var& b, bool transpose_b = false);

// Normalization and reductions.
Var softmax(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// x[B, M, E] -> mean over M -> [B, E].
Var mean_middle(const Var& x);
/// Mean of (a - b)^2 over every element; scalar result.
Var mean_squared_error(const Var& a, const Var& b);

/// out[b] = w[b, 0] * a[b] + w[b, 1] * c[b] with a, c of shape [B, ...] and w of shape [B, 2].
Var mix2(const Var& a, const Var& c, const Var& w);

// Convolution.
/// Stride-1, zero "same" padding. x[N, Cin, H, W], w[Cout, Cin, K, K] (K odd), bias[Cout].
Var conv2d_same(const Var& x, const Var& w, const Var& bias);
/// 2x2 window, stride 2, trailing odd rows/cols dropped.
Var max_pool2x2(const Var& x);

}  // namespace vstpose::ad
