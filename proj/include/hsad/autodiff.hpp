#pragma once

#include <functional>
#include <vector>

#include "hsad/tensor.hpp"

namespace hsad {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const;
  int id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Maps the gradient of a node's output to gradients of its inputs. Entry i
/// of the result may be left empty when `needs[i]` is false.
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& needs)>;

/// Recorded computation graph for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so ids are a topological order.
/// Gradients accumulate additively into zero-initialised slots. A tape is
/// single-threaded; use one tape per training step.
class Tape {
 public:
  /// A non-recording tape evaluates values only and refuses backward().
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input.
  Var leaf(Tensor value);
  /// Input that never receives a gradient.
  Var constant(Tensor value);
  /// Result of a primitive. `backward` is dropped when no input needs a gradient.
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  const Tensor& value(const Var& v) const;
  bool requires_grad(const Var& v) const;
  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a single-element `loss`, seeded with 1.
  void backward(const Var& loss);
  /// Reverse sweep with an explicit seed gradient shaped like `output`.
  void backward(const Var& output, const Tensor& seed);

  /// Gradient of the last backward() target w.r.t. `v`; zeros when `v` was
  /// not reached.
  Tensor grad(const Var& v) const;

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  int check(const Var& v) const;

  bool recording_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// Elementwise arithmetic. Binary operators accept equal shapes, a
// single-element operand (scalar broadcast) or an operand whose shape equals
// the trailing dimensions of the other (leading-axis broadcast).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var neg(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
/// max(x, slope*x); the derivative at exactly 0 is taken as 1.
Var leaky_relu(const Var& a, double slope);
/// leaky_relu with slope 0.
Var relu(const Var& a);
Var exp(const Var& a);
/// Throws DomainError on any non-positive element.
Var log(const Var& a);
Var square(const Var& a);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator+(const Var& a, double s);
Var operator*(const Var& a, double s);
Var operator*(double s, const Var& a);

/// [m x k] * [k x n]
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);

/// Reductions over `axes` (all axes when empty). Reduced axes are removed; a
/// full reduction yields shape {1}. max routes its gradient to the first
/// maximal element.
Var sum(const Var& a, std::vector<std::size_t> axes = {});
Var mean(const Var& a, std::vector<std::size_t> axes = {});
Var max(const Var& a, std::vector<std::size_t> axes = {});

namespace kernels {

/// out = a * b for row-major [m x k] and [k x n] buffers.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T * b and a * b^T without materialising the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// Elementwise a + b for equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
/// Sums `g` down to `shape` (inverse of the broadcasts accepted by add()).
Tensor reduce_to(const Tensor& g, const Shape& shape);
Tensor scale(const Tensor& a, double s);

}  // namespace kernels

}  // namespace hsad
