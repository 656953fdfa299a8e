#pragma once

// Block arithmetic shared by the plain-tensor forward pass and the taped
// (differentiable) one. V is either Tensor or Var; the free functions used
// here exist for both.

#include <cmath>
#include <cstddef>
#include <vector>

#include "layerlens/model.hpp"

namespace layerlens::detail {

template <class V>
V attention_sublayer(const V& x, const BlockParams<V>& p, std::size_t n_heads) {
  const V q = matmul(x, p.w_q);
  const V k = matmul(x, p.w_k);
  const V v = matmul(x, p.w_v);
  const std::size_t d = q.cols();
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<V> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    V qh = n_heads == 1 ? q : slice_cols(q, h * dh, dh);
    V kh = n_heads == 1 ? k : slice_cols(k, h * dh, dh);
    V vh = n_heads == 1 ? v : slice_cols(v, h * dh, dh);
    V probs = causal_softmax_rows(scale(matmul_transposed(qh, kh), inv_sqrt));
    heads.push_back(matmul(probs, vh));
  }
  const V merged = n_heads == 1 ? heads.front() : concat_cols(std::span<const V>(heads));
  return matmul(merged, p.w_o);
}

template <class V>
V ffn_sublayer(const V& x, const BlockParams<V>& p) {
  return add_row(matmul(relu(add_row(matmul(x, p.w_1), p.b_1)), p.w_2), p.b_2);
}

/// Pre-LN residual block: h = x + Attn(LN1(x)); out = h + FFN(LN2(h)).
template <class V>
V block_forward(const BlockParams<V>& p, const V& x, std::size_t n_heads, bool use_layernorm, double eps) {
  const V attn_in = use_layernorm ? layer_norm(x, *p.ln1_gamma, *p.ln1_beta, eps) : x;
  const V h = add(x, attention_sublayer(attn_in, p, n_heads));
  const V ffn_in = use_layernorm ? layer_norm(h, *p.ln2_gamma, *p.ln2_beta, eps) : h;
  return add(h, ffn_sublayer(ffn_in, p));
}

}  // namespace layerlens::detail
