#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "layerlens/tensor.hpp"

namespace layerlens {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor::Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradient buffers produced by Tape::backward.
class Gradients {
 public:
  /// Gradient of the loss with respect to `v`; a zero tensor of matching
  /// shape when `v` did not influence the loss.
  Tensor of(const Var& v) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<std::vector<double>> grads_;
};

/// Single-owner reverse-mode tape. Nodes are appended in evaluation order, so
/// the node list is already a topological order; backward replays it in
/// reverse.
class Tape {
 public:
  using Pullback = std::function<void(Tape&, std::span<const double> grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A differentiable leaf holding a copy of `value`.
  Var leaf(Tensor value);
  /// A differentiable leaf that refers to `value` without copying; `value`
  /// must outlive the tape.
  Var leaf_ref(const Tensor& value);
  /// A non-differentiable input.
  Var constant(Tensor value);

  /// Records an operation result. `pullback` receives d(loss)/d(result) and
  /// must accumulate into its parents through accumulate().
  Var record(Tensor value, std::vector<std::size_t> parents, Pullback pullback);

  const Tensor& value(const Var& v) const;
  const Tensor& value_at(std::size_t id) const { return nodes_[id].value(); }
  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds `grad` into the gradient buffer of node `id` (during backward only).
  void accumulate(std::size_t id, std::span<const double> grad);
  /// Gradient buffer of node `id`, created as zeros on first use.
  std::vector<double>& grad_buffer(std::size_t id);

  /// Reverse pass from a scalar (single-element) loss.
  Gradients backward(const Var& loss);

  /// Throws unless `v` belongs to this tape.
  void check_owned(const Var& v) const;

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    std::vector<std::size_t> parents;
    Pullback pullback;
    bool requires_grad = false;
    const Tensor& value() const { return ref ? *ref : owned; }
  };

  std::deque<Node> nodes_;  // deque keeps value references stable
  std::vector<std::vector<double>> grads_;
};

Var matmul(const Var& a, const Var& b);
Var matmul_transposed(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& bias);
Var relu(const Var& a);
Var softmax_rows(const Var& a);
Var causal_softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var take_row(const Var& a, std::size_t r);
Var embed(const Var& table, const Var& positional, std::span<const int> tokens);
Var sum(const Var& a);
/// Cross-entropy of row `row` of `logits` against class `target`
/// (log-sum-exp minus the target logit), as a 1-element value.
Var cross_entropy(const Var& logits, std::size_t row, std::size_t target);
/// Mean cross-entropy over all rows of `logits` against per-row targets.
Var mean_cross_entropy(const Var& logits, std::span<const int> targets);

}  // namespace layerlens
