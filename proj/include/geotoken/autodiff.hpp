#pragma once

// Reverse-mode automatic differentiation over a dynamic per-step tape.
//
// A Tape records every operation of one forward pass. Calling backward() on a
// scalar node propagates gradients to all nodes and accumulates them into the
// Parameter objects bound as leaves. Tapes are single-use and single-threaded.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "geotoken/tensor.hpp"

namespace geotoken::ad {

/// A trainable tensor and its gradient buffer.
struct Parameter {
  Parameter(std::string name, Tensor value, std::size_t id)
      : name(std::move(name)), value(std::move(value)), grad(Tensor::zeros_like(this->value)), id(id) {}

  void zero_grad() { grad.fill(0.0); }

  std::string name;
  Tensor value;
  Tensor grad;
  std::size_t id;
};

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  const Tensor& value() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  // Receives the tape and the output node's gradient; accumulates into the
  // inputs via Tape::grad().
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to `param`; backward() adds into param.grad. The parameter
  /// must outlive the tape.
  Var param(Parameter& param);

  /// Records a derived node computed from `inputs`. `value` is checked for
  /// NaN/Inf. The backward function only runs if some input needs a gradient.
  Var record(Tensor value, std::string_view op, std::initializer_list<Var> inputs,
             BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.index()].value; }
  /// Gradient buffer of a node, valid during and after backward().
  Tensor& grad(Var v);
  bool requires_grad(Var v) const { return nodes_[v.index()].requires_grad; }

  /// Seeds d(loss)/d(loss) = 1 and runs all recorded backward functions in
  /// reverse order. `loss` must be a scalar.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  // deque: node references stay valid while the tape grows.
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable operations

Var add(Var a, Var b);
/// a [m x n] + bias broadcast over rows; bias has n elements.
Var add_row_bias(Var a, Var bias);
Var scale(Var a, double s);
Var mul(Var a, Var b);
Var sum(Var a);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var relu(Var a);
Var softmax_rows(Var x);
/// Per-row normalization to zero mean / unit variance, then gain * x + bias.
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
/// Gathers rows of `table` [V x d] for the given ids.
Var embedding(Var table, std::span<const int> ids);

/// Mean over unmasked rows of -log softmax(logits)[row, target]. `keep[i]`
/// false excludes row i. Throws EmptyLossError if nothing is kept and
/// IndexError for an out-of-range target.
Var cross_entropy(Var logits, std::span<const int> targets, const std::vector<bool>& keep);

/// Non-recording evaluation of the same loss, for oracles and reporting.
double cross_entropy_value(const Tensor& logits, std::span<const int> targets,
                           const std::vector<bool>& keep);

}  // namespace geotoken::ad
