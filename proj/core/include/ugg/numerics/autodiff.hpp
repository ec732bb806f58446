#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "ugg/numerics/matrix.hpp"

namespace ugg {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid as long as the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const;
  bool requires_grad() const;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
// order; backward() walks them in reverse. A non-recording tape evaluates
// values only and never stores closures.
class Tape {
 public:
  // Receives the node's output value and its gradient; accumulates into
  // inputs via Tape::grad(input).
  using Backward = std::function<void(Tape&, const Matrix& out, const Matrix& out_grad)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Matrix value);
  // A differentiable leaf (parameter). On a non-recording tape this is a constant.
  Var leaf(Matrix value);

  // Appends an op result. `fn` is kept only if recording and at least one
  // input requires a gradient.
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward fn);
  Var push(Matrix value, std::span<const Var> inputs, Backward fn);

  const Matrix& value(Var v) const { return nodes_[v.id_].value; }
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }
  // Gradient accumulator for v, zero-initialized on first access.
  Matrix& grad(Var v);
  const Matrix& grad_or_empty(Var v) const { return nodes_[v.id_].grad; }

  // Seeds d(root)/d(root) = 1 and propagates. root must be 1x1.
  void backward(Var root);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };

  bool recording_;
  std::deque<Node> nodes_;
};

namespace ad {

Var add(Var a, Var b);
// a (R x C) + b (1 x C) broadcast over rows.
Var add_row(Var a, Var b);
Var sub(Var a, Var b);
// a (R x C) .* b (1 x C) broadcast over rows.
Var mul_row(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// a * s where s is a 1x1 node.
Var scale_by(Var a, Var s);
Var matmul(Var a, Var b);
// x * w + b for a (1 x out) bias row.
Var affine(Var x, Var w, Var b);

// ReLU with subgradient 0 at exactly 0.
Var relu(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var exp(Var a);
Var square(Var a);
// max(a, floor) elementwise; gradient is zero where the floor is active.
Var clamp_min(Var a, double floor);

Var sum(Var a);
Var mean(Var a);
// sum(a .* c) for a constant matrix c.
Var dot_const(Var a, const Matrix& c);

Var rows(Var a, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
// Column-wise mean / max over rows -> 1 x C.
Var mean_rows(Var a);
Var max_rows(Var a);
Var softmax_rows(Var a);
// Column-wise (a - mean) / sqrt(var + eps) with the biased batch variance.
Var batch_standardize(Var a, double eps);
// Picks entries (r, c) into a 1 x K row vector.
Var gather(Var a, std::span<const std::pair<std::size_t, std::size_t>> at);
// Row vector divided by its sum.
Var normalize_sum(Var a);

// mu + eps .* sigma with constant eps.
Var reparameterize(Var mu, Var sigma, const Matrix& eps);
// Mean over entries of -1/2 (1 + log sigma^2 - mu^2 - sigma^2).
Var gaussian_kl(Var mu, Var sigma);

}  // namespace ad
}  // namespace ugg
