#pragma once

#include <span>
#include <utility>
#include <vector>

#include "layerlens/autodiff.hpp"
#include "layerlens/model.hpp"
#include "layerlens/tasks.hpp"

namespace layerlens {

/// Model parameters bound as leaves on a tape (by reference, no copies).
struct TapedModel {
  const TransformerModel* model = nullptr;
  Var embedding;
  Var positional;
  std::vector<BlockParams<Var>> blocks;
  Var head;
};

TapedModel bind_parameters(Tape& tape, const TransformerModel& model);

/// Final residual stream (n x d) for `tokens`.
Var taped_hidden(const TapedModel& taped, std::span<const int> tokens);

/// Cross-entropy of `target` at the last position.
Var taped_last_token_loss(const TapedModel& taped, std::span<const int> tokens, int target);

/// Mean next-token cross-entropy over every position; the final position's
/// target is `answer`.
Var taped_sequence_loss(const TapedModel& taped, std::span<const int> tokens, int answer);

/// Visits every parameter of block `l` together with its taped leaf.
template <class F>
void for_each_block_param(const BlockWeights& w, const BlockParams<Var>& v, F&& f) {
  f(w.w_q, v.w_q);
  f(w.w_k, v.w_k);
  f(w.w_v, v.w_v);
  f(w.w_o, v.w_o);
  f(w.w_1, v.w_1);
  f(w.b_1, v.b_1);
  f(w.w_2, v.w_2);
  f(w.b_2, v.b_2);
  if (w.ln1_gamma) {
    f(*w.ln1_gamma, *v.ln1_gamma);
    f(*w.ln1_beta, *v.ln1_beta);
    f(*w.ln2_gamma, *v.ln2_gamma);
    f(*w.ln2_beta, *v.ln2_beta);
  }
}

/// Every parameter tensor in a fixed order: embedding, positional, each
/// block's tensors (in for_each_block_param order), head.
std::vector<const Tensor*> parameter_list(const TransformerModel& model);
std::vector<Var> parameter_vars(const TapedModel& taped);

/// Half-open index range of block `l`'s tensors within parameter_list().
std::pair<std::size_t, std::size_t> block_parameter_range(const TransformerModel& model, std::size_t l);

/// Copy of `model` whose parameters (parameter_list order) are replaced.
TransformerModel with_parameters(const TransformerModel& model, const std::vector<std::vector<double>>& values);

enum class LossKind {
  kLastToken,  // cross-entropy of the label at the last position
  kSequence,   // mean next-token cross-entropy, final target = label
};

struct GradientSum {
  /// Gradients in parameter_list() order, summed over instances.
  std::vector<std::vector<double>> grads;
  /// Sum of per-instance losses.
  double loss = 0.0;
};

/// Sums per-instance loss gradients. Each instance gets its own tape and
/// counts one forward and one backward pass; the reduction order is fixed
/// regardless of the worker count, so results are bit-reproducible.
GradientSum gradient_sum(const TransformerModel& model, std::span<const Instance> batch, LossKind loss,
                         PassCounter* counter = nullptr);

}  // namespace layerlens
