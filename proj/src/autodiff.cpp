#include "layerlens/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace layerlens {

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw NumericError("use of a detached Var");
  return tape_->value(*this);
}

Tensor Gradients::of(const Var& v) const {
  if (tape_ == nullptr) throw NumericError("empty gradient map");
  tape_->check_owned(v);
  const Tensor& value = v.value();
  if (v.id() >= grads_.size() || grads_[v.id()].empty()) return Tensor::zeros(value.shape());
  return Tensor(value.shape(), grads_[v.id()]);
}

Var Tape::leaf(Tensor value) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf_ref(const Tensor& value) {
  Node node;
  node.ref = &value;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, Pullback pullback) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = std::any_of(parents.begin(), parents.end(), [&](std::size_t p) { return nodes_[p].requires_grad; });
  if (node.requires_grad) node.pullback = std::move(pullback);
  node.parents = std::move(parents);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(const Var& v) const {
  check_owned(v);
  return nodes_[v.id()].value();
}

void Tape::check_owned(const Var& v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) throw NumericError("Var does not belong to this tape");
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  auto& g = grads_[id];
  if (g.empty()) g.assign(nodes_[id].value().size(), 0.0);
  return g;
}

void Tape::accumulate(std::size_t id, std::span<const double> grad) {
  if (!nodes_[id].requires_grad) return;
  auto& g = grad_buffer(id);
  if (g.size() != grad.size()) throw NumericError("gradient shape mismatch during backward");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad[i];
}

Gradients Tape::backward(const Var& loss) {
  check_owned(loss);
  if (loss.value().size() != 1) {
    throw NumericError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  grads_.assign(nodes_.size(), {});
  grads_[loss.id()] = {1.0};
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (grads_[id].empty() || !node.pullback) continue;
    node.pullback(*this, grads_[id]);
  }
  for (const auto& g : grads_)
    for (double v : g)
      if (!std::isfinite(v)) throw NumericError("backward produced a non-finite gradient");
  Gradients out;
  out.tape_ = this;
  out.grads_ = std::move(grads_);
  grads_.clear();
  return out;
}

namespace {

Tape& common_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid()) throw NumericError("use of a detached Var");
  if (a.tape() != b.tape()) throw NumericError("operands recorded on different tapes");
  return *a.tape();
}

Tensor as_tensor(const Tensor::Shape& shape, std::span<const double> g) {
  return Tensor(shape, std::vector<double>(g.begin(), g.end()));
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(matmul(a.value(), b.value()), {ia, ib}, [ia, ib](Tape& tp, std::span<const double> g) {
    const Tensor& av = tp.value_at(ia);
    const Tensor& bv = tp.value_at(ib);
    Tensor gt = as_tensor({av.rows(), bv.cols()}, g);
    if (tp.requires_grad(ia)) tp.accumulate(ia, matmul_transposed(gt, bv).data());
    if (tp.requires_grad(ib)) tp.accumulate(ib, matmul(transpose(av), gt).data());
  });
}

Var matmul_transposed(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(matmul_transposed(a.value(), b.value()), {ia, ib}, [ia, ib](Tape& tp, std::span<const double> g) {
    const Tensor& av = tp.value_at(ia);
    const Tensor& bv = tp.value_at(ib);
    Tensor gt = as_tensor({av.rows(), bv.rows()}, g);
    if (tp.requires_grad(ia)) tp.accumulate(ia, matmul(gt, bv).data());
    if (tp.requires_grad(ib)) tp.accumulate(ib, matmul(transpose(gt), av).data());
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(add(a.value(), b.value()), {ia, ib}, [ia, ib](Tape& tp, std::span<const double> g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var hadamard(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(hadamard(a.value(), b.value()), {ia, ib}, [ia, ib](Tape& tp, std::span<const double> g) {
    const Tensor& av = tp.value_at(ia);
    const Tensor& bv = tp.value_at(ib);
    std::vector<double> ga(g.size()), gb(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * bv[i];
      gb[i] = g[i] * av[i];
    }
    tp.accumulate(ia, ga);
    tp.accumulate(ib, gb);
  });
}

Var scale(const Var& a, double s) {
  Tape& t = common_tape(a, a);
  const std::size_t ia = a.id();
  return t.record(scale(a.value(), s), {ia}, [ia, s](Tape& tp, std::span<const double> g) {
    std::vector<double> ga(g.begin(), g.end());
    for (double& v : ga) v *= s;
    tp.accumulate(ia, ga);
  });
}

Var add_row(const Var& a, const Var& bias) {
  Tape& t = common_tape(a, bias);
  const std::size_t ia = a.id(), ib = bias.id();
  const std::size_t c = a.cols();
  return t.record(add_row(a.value(), bias.value()), {ia, ib}, [ia, ib, c](Tape& tp, std::span<const double> g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) {
      std::vector<double> gb(c, 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
      tp.accumulate(ib, gb);
    }
  });
}

Var relu(const Var& a) {
  Tape& t = common_tape(a, a);
  const std::size_t ia = a.id();
  return t.record(relu(a.value()), {ia}, [ia](Tape& tp, std::span<const double> g) {
    const Tensor& av = tp.value_at(ia);
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = av[i] > 0.0 ? g[i] : 0.0;
    tp.accumulate(ia, ga);
  });
}

namespace {

// d(softmax)/dx for row-wise probabilities P: P * (G - rowsum(G * P)).
Tape::Pullback softmax_pullback(std::size_t ia, std::size_t out_id) {
  return [ia, out_id](Tape& tp, std::span<const double> g) {
    const Tensor& p = tp.value_at(out_id);
    const std::size_t r = p.rows(), c = p.cols();
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += g[i * c + j] * p[i * c + j];
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] = p[i * c + j] * (g[i * c + j] - s);
    }
    tp.accumulate(ia, ga);
  };
}

}  // namespace

Var softmax_rows(const Var& a) {
  Tape& t = common_tape(a, a);
  const std::size_t ia = a.id();
  const std::size_t out_id = t.size();
  return t.record(softmax_rows(a.value()), {ia}, softmax_pullback(ia, out_id));
}

Var causal_softmax_rows(const Var& a) {
  Tape& t = common_tape(a, a);
  const std::size_t ia = a.id();
  const std::size_t out_id = t.size();
  return t.record(causal_softmax_rows(a.value()), {ia}, softmax_pullback(ia, out_id));
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  Tape& t = common_tape(x, gamma);
  common_tape(x, beta);
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return t.record(layer_norm(x.value(), gamma.value(), beta.value(), eps), {ix, ig, ib},
                  [ix, ig, ib, eps](Tape& tp, std::span<const double> g) {
                    const Tensor& xv = tp.value_at(ix);
                    const Tensor& gv = tp.value_at(ig);
                    const std::size_t r = xv.rows(), d = xv.cols();
                    const double dn = static_cast<double>(d);
                    std::vector<double> gx(xv.size()), gg(d, 0.0), gb(d, 0.0), xhat(d), dxhat(d);
                    for (std::size_t i = 0; i < r; ++i) {
                      auto row = xv.row(i);
                      const double mean = std::accumulate(row.begin(), row.end(), 0.0) / dn;
                      double var = 0.0;
                      for (double v : row) var += (v - mean) * (v - mean);
                      var /= dn;
                      const double inv = 1.0 / std::sqrt(var + eps);
                      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const double go = g[i * d + j];
                        xhat[j] = (row[j] - mean) * inv;
                        dxhat[j] = go * gv[j];
                        gg[j] += go * xhat[j];
                        gb[j] += go;
                        mean_dxhat += dxhat[j];
                        mean_dxhat_xhat += dxhat[j] * xhat[j];
                      }
                      mean_dxhat /= dn;
                      mean_dxhat_xhat /= dn;
                      for (std::size_t j = 0; j < d; ++j)
                        gx[i * d + j] = inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                    tp.accumulate(ix, gx);
                    tp.accumulate(ig, gg);
                    tp.accumulate(ib, gb);
                  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  Tape& t = common_tape(a, a);
  const std::size_t ia = a.id();
  const std::size_t c = a.cols();
  return t.record(slice_cols(a.value(), begin, count), {ia}, [ia, begin, count, c](Tape& tp, std::span<const double> g) {
    std::vector<double> ga(tp.value_at(ia).size(), 0.0);
    const std::size_t r = g.size() / count;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) ga[i * c + begin + j] = g[i * count + j];
    tp.accumulate(ia, ga);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw NumericError("concat_cols: no inputs");
  Tape& t = common_tape(parts[0], parts[0]);
  std::vector<Tensor> values;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    common_tape(parts[0], p);
    values.push_back(p.value());
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  const std::size_t total = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  return t.record(concat_cols(values), ids, [ids, widths, total](Tape& tp, std::span<const double> g) {
    const std::size_t r = g.size() / total;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        std::vector<double> gp(r * widths[k]);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] = g[i * total + offset + j];
        tp.accumulate(ids[k], gp);
      }
      offset += widths[k];
    }
  });
}

Var take_row(const Var& a, std::size_t r) {
  Tape& t = common_tape(a, a);
  const std::size_t ia = a.id();
  const std::size_t c = a.cols();
  return t.record(take_row(a.value(), r), {ia}, [ia, r, c](Tape& tp, std::span<const double> g) {
    std::vector<double> ga(tp.value_at(ia).size(), 0.0);
    std::copy(g.begin(), g.end(), ga.begin() + static_cast<std::ptrdiff_t>(r * c));
    tp.accumulate(ia, ga);
  });
}

Var embed(const Var& table, const Var& positional, std::span<const int> tokens) {
  Tape& t = common_tape(table, positional);
  const std::size_t it = table.id(), ip = positional.id();
  std::vector<int> toks(tokens.begin(), tokens.end());
  return t.record(embed(table.value(), positional.value(), tokens), {it, ip},
                  [it, ip, toks](Tape& tp, std::span<const double> g) {
                    const std::size_t d = tp.value_at(it).cols();
                    if (tp.requires_grad(it)) {
                      std::vector<double> gt(tp.value_at(it).size(), 0.0);
                      for (std::size_t i = 0; i < toks.size(); ++i)
                        for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(toks[i]) * d + j] += g[i * d + j];
                      tp.accumulate(it, gt);
                    }
                    if (tp.requires_grad(ip)) {
                      std::vector<double> gp(tp.value_at(ip).size(), 0.0);
                      std::copy(g.begin(), g.end(), gp.begin());
                      tp.accumulate(ip, gp);
                    }
                  });
}

Var sum(const Var& a) {
  Tape& t = common_tape(a, a);
  const std::size_t ia = a.id();
  return t.record(Tensor::vector({sum(a.value())}), {ia}, [ia](Tape& tp, std::span<const double> g) {
    tp.accumulate(ia, std::vector<double>(tp.value_at(ia).size(), g[0]));
  });
}

namespace {

// Log-sum-exp of a row and the softmax probabilities of that row.
double log_softmax_row(std::span<const double> row, std::vector<double>& probs) {
  const double mx = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  probs.resize(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) {
    probs[j] = std::exp(row[j] - mx);
    total += probs[j];
  }
  for (double& p : probs) p /= total;
  return mx + std::log(total);
}

}  // namespace

Var cross_entropy(const Var& logits, std::size_t row, std::size_t target) {
  Tape& t = common_tape(logits, logits);
  const Tensor& lv = logits.value();
  if (row >= lv.rows() || target >= lv.cols()) throw NumericError("cross_entropy: row or target out of range");
  std::vector<double> probs;
  const double loss = log_softmax_row(lv.row(row), probs) - lv.row(row)[target];
  const std::size_t il = logits.id();
  const std::size_t c = lv.cols();
  return t.record(Tensor::vector({loss}), {il}, [il, row, target, c, probs](Tape& tp, std::span<const double> g) {
    std::vector<double> gl(tp.value_at(il).size(), 0.0);
    for (std::size_t j = 0; j < c; ++j) gl[row * c + j] = g[0] * (probs[j] - (j == target ? 1.0 : 0.0));
    tp.accumulate(il, gl);
  });
}

Var mean_cross_entropy(const Var& logits, std::span<const int> targets) {
  Tape& t = common_tape(logits, logits);
  const Tensor& lv = logits.value();
  const std::size_t r = lv.rows(), c = lv.cols();
  if (targets.size() != r) throw NumericError("mean_cross_entropy: one target per row required");
  std::vector<double> grad(r * c);
  std::vector<double> probs;
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c)
      throw NumericError("mean_cross_entropy: target out of range");
    const auto tgt = static_cast<std::size_t>(targets[i]);
    loss += log_softmax_row(lv.row(i), probs) - lv.row(i)[tgt];
    for (std::size_t j = 0; j < c; ++j)
      grad[i * c + j] = (probs[j] - (j == tgt ? 1.0 : 0.0)) / static_cast<double>(r);
  }
  const std::size_t il = logits.id();
  return t.record(Tensor::vector({loss / static_cast<double>(r)}), {il},
                  [il, grad](Tape& tp, std::span<const double> g) {
                    std::vector<double> gl(grad);
                    for (double& v : gl) v *= g[0];
                    tp.accumulate(il, gl);
                  });
}

}  // namespace layerlens
