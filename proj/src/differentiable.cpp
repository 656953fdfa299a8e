#include "layerlens/differentiable.hpp"

#include <algorithm>

#include "layerlens/block_math.hpp"
#include "layerlens/parallel.hpp"

namespace layerlens {

TapedModel bind_parameters(Tape& tape, const TransformerModel& model) {
  TapedModel t;
  t.model = &model;
  t.embedding = tape.leaf_ref(model.embedding());
  t.positional = tape.leaf_ref(model.positional());
  for (const BlockWeights& w : model.blocks()) {
    BlockParams<Var> v{tape.leaf_ref(w.w_q), tape.leaf_ref(w.w_k), tape.leaf_ref(w.w_v), tape.leaf_ref(w.w_o),
                       tape.leaf_ref(w.w_1), tape.leaf_ref(w.b_1), tape.leaf_ref(w.w_2), tape.leaf_ref(w.b_2),
                       std::nullopt,         std::nullopt,         std::nullopt,         std::nullopt};
    if (w.ln1_gamma) {
      v.ln1_gamma = tape.leaf_ref(*w.ln1_gamma);
      v.ln1_beta = tape.leaf_ref(*w.ln1_beta);
      v.ln2_gamma = tape.leaf_ref(*w.ln2_gamma);
      v.ln2_beta = tape.leaf_ref(*w.ln2_beta);
    }
    t.blocks.push_back(std::move(v));
  }
  t.head = tape.leaf_ref(model.head());
  return t;
}

Var taped_hidden(const TapedModel& taped, std::span<const int> tokens) {
  check_tokens(*taped.model, tokens);
  const ModelConfig& c = taped.model->config();
  Var x = embed(taped.embedding, taped.positional, tokens);
  for (const auto& block : taped.blocks) x = detail::block_forward(block, x, c.n_heads, c.use_layernorm, c.ln_eps);
  return x;
}

Var taped_last_token_loss(const TapedModel& taped, std::span<const int> tokens, int target) {
  Var x = taped_hidden(taped, tokens);
  Var logits = matmul(take_row(x, x.rows() - 1), taped.head);
  if (target < 0) throw std::invalid_argument("negative target");
  return cross_entropy(logits, 0, static_cast<std::size_t>(target));
}

Var taped_sequence_loss(const TapedModel& taped, std::span<const int> tokens, int answer) {
  Var x = taped_hidden(taped, tokens);
  Var logits = matmul(x, taped.head);
  std::vector<int> targets(tokens.begin() + 1, tokens.end());
  targets.push_back(answer);
  return mean_cross_entropy(logits, targets);
}

std::vector<const Tensor*> parameter_list(const TransformerModel& model) {
  std::vector<const Tensor*> out = {&model.embedding(), &model.positional()};
  for (const BlockWeights& w : model.blocks()) {
    out.insert(out.end(), {&w.w_q, &w.w_k, &w.w_v, &w.w_o, &w.w_1, &w.b_1, &w.w_2, &w.b_2});
    if (w.ln1_gamma) out.insert(out.end(), {&*w.ln1_gamma, &*w.ln1_beta, &*w.ln2_gamma, &*w.ln2_beta});
  }
  out.push_back(&model.head());
  return out;
}

std::vector<Var> parameter_vars(const TapedModel& taped) {
  std::vector<Var> out = {taped.embedding, taped.positional};
  for (const auto& v : taped.blocks) {
    out.insert(out.end(), {v.w_q, v.w_k, v.w_v, v.w_o, v.w_1, v.b_1, v.w_2, v.b_2});
    if (v.ln1_gamma) out.insert(out.end(), {*v.ln1_gamma, *v.ln1_beta, *v.ln2_gamma, *v.ln2_beta});
  }
  out.push_back(taped.head);
  return out;
}

std::pair<std::size_t, std::size_t> block_parameter_range(const TransformerModel& model, std::size_t l) {
  if (l >= model.n_layers()) throw std::out_of_range("layer index " + std::to_string(l) + " out of range");
  const std::size_t per_block = model.config().use_layernorm ? 12 : 8;
  const std::size_t first = 2 + l * per_block;
  return {first, first + per_block};
}

TransformerModel with_parameters(const TransformerModel& model, const std::vector<std::vector<double>>& values) {
  const auto current = parameter_list(model);
  if (values.size() != current.size()) throw std::invalid_argument("with_parameters: parameter count mismatch");
  std::size_t i = 0;
  auto next = [&]() {
    const Tensor& t = *current[i];
    return Tensor(t.shape(), values[i++]);
  };
  Tensor embedding = next();
  Tensor positional = next();
  std::vector<BlockWeights> blocks;
  for (const BlockWeights& w : model.blocks()) {
    BlockWeights b{next(), next(), next(), next(), next(), next(), next(), next(),
                   std::nullopt, std::nullopt, std::nullopt, std::nullopt};
    if (w.ln1_gamma) {
      b.ln1_gamma = next();
      b.ln1_beta = next();
      b.ln2_gamma = next();
      b.ln2_beta = next();
    }
    blocks.push_back(std::move(b));
  }
  Tensor head = next();
  return TransformerModel(model.config(), std::move(embedding), std::move(positional), std::move(blocks),
                          std::move(head));
}

GradientSum gradient_sum(const TransformerModel& model, std::span<const Instance> batch, LossKind loss,
                         PassCounter* counter) {
  // Fixed chunking: each chunk sums its instances in order, then chunks are
  // summed in order. The partition does not depend on the thread count.
  constexpr std::size_t kChunk = 8;
  const auto params = parameter_list(model);
  const std::size_t n_chunks = (batch.size() + kChunk - 1) / kChunk;
  std::vector<GradientSum> partial(n_chunks);

  parallel_for(n_chunks, [&](std::size_t c) {
    GradientSum& acc = partial[c];
    acc.grads.resize(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) acc.grads[p].assign(params[p]->size(), 0.0);
    const std::size_t end = std::min(batch.size(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      const Instance& inst = batch[i];
      Tape tape;
      const TapedModel taped = bind_parameters(tape, model);
      Var value = loss == LossKind::kLastToken ? taped_last_token_loss(taped, inst.tokens, inst.label)
                                               : taped_sequence_loss(taped, inst.tokens, inst.label);
      if (counter) counter->add_forward();
      const Gradients g = tape.backward(value);
      if (counter) counter->add_backward();
      acc.loss += value.value()[0];
      const auto vars = parameter_vars(taped);
      for (std::size_t p = 0; p < vars.size(); ++p) {
        const Tensor grad = g.of(vars[p]);
        auto& dst = acc.grads[p];
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += grad[k];
      }
    }
  });

  GradientSum total;
  total.grads.resize(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) total.grads[p].assign(params[p]->size(), 0.0);
  for (const auto& part : partial) {
    total.loss += part.loss;
    for (std::size_t p = 0; p < params.size(); ++p)
      for (std::size_t k = 0; k < total.grads[p].size(); ++k) total.grads[p][k] += part.grads[p][k];
  }
  return total;
}

}  // namespace layerlens
