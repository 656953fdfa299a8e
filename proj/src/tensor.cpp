#include "layerlens/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace layerlens {

namespace {

// Message expressions are only evaluated on failure; these checks sit on
// every hot path.
#define REQUIRE_OR_THROW(ok, what)          \
  do {                                      \
    if (!(ok)) throw NumericError(what);    \
  } while (0)

void require_matrix(const Tensor& a, const char* op) {
  REQUIRE_OR_THROW(a.rank() == 2, std::string(op) + ": expected a matrix, got shape " + shape_string(a.shape()));
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  REQUIRE_OR_THROW(!shape_.empty(), "tensor shape must have at least one dimension");
  std::size_t n = 1;
  for (std::size_t d : shape_) {
    REQUIRE_OR_THROW(d > 0, "tensor dimensions must be positive, got " + shape_string(shape_));
    n *= d;
  }
  REQUIRE_OR_THROW(n == data_.size(), "tensor shape " + shape_string(shape_) + " does not match " +
                                 std::to_string(data_.size()) + " values");
  for (double v : data_) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor of shape " + shape_string(shape_));
  }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> data(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) data[i * n + i] = 1.0;
  return Tensor({n, n}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> values) {
  std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t r = rows.size();
  std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    REQUIRE_OR_THROW(row.size() == c, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

std::size_t Tensor::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

std::span<const double> Tensor::row(std::size_t r) const {
  std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

std::vector<double> Tensor::release() {
  shape_.clear();
  return std::move(data_);
}

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  REQUIRE_OR_THROW(b.rows() == k, "matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
  std::vector<double> out(m * n, 0.0);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return Tensor({m, n}, std::move(out));
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_transposed");
  require_matrix(b, "matmul_transposed");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  REQUIRE_OR_THROW(b.cols() == k, "matmul_transposed: inner dimensions differ " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()) + "^T");
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = dot(a.row(i), b.row(j));
  }
  return Tensor({m, n}, std::move(out));
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a(i, j);
  return Tensor({n, m}, std::move(out));
}

namespace {

Tensor zip(const Tensor& a, const Tensor& b, const char* op, const std::function<double(double, double)>& f) {
  REQUIRE_OR_THROW(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  return Tensor(a.shape(), std::move(out));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return zip(a, b, "add", std::plus<>()); }
Tensor subtract(const Tensor& a, const Tensor& b) { return zip(a, b, "subtract", std::minus<>()); }
Tensor hadamard(const Tensor& a, const Tensor& b) { return zip(a, b, "hadamard", std::multiplies<>()); }

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= s;
  return Tensor(a.shape(), std::move(out));
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  REQUIRE_OR_THROW(bias.size() == a.cols(), "add_row: bias length " + std::to_string(bias.size()) +
                                       " does not match " + std::to_string(a.cols()) + " columns");
  std::vector<double> out(a.data().begin(), a.data().end());
  const std::size_t c = a.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % c];
  return Tensor(a.shape(), std::move(out));
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor(a.shape(), std::move(out));
}

namespace {

void softmax_prefix(std::span<const double> in, std::size_t len, std::span<double> out) {
  double mx = in[0];
  for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, in[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < len; ++j) {
    out[j] = std::exp(in[j] - mx);
    total += out[j];
  }
  for (std::size_t j = 0; j < len; ++j) out[j] /= total;
  for (std::size_t j = len; j < out.size(); ++j) out[j] = 0.0;
}

}  // namespace

Tensor softmax_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i) softmax_prefix(a.row(i), c, std::span<double>(out).subspan(i * c, c));
  return Tensor(a.shape(), std::move(out));
}

Tensor causal_softmax_rows(const Tensor& a) {
  require_matrix(a, "causal_softmax_rows");
  REQUIRE_OR_THROW(a.rows() == a.cols(), "causal_softmax_rows: expected a square matrix, got " + shape_string(a.shape()));
  const std::size_t n = a.rows();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < n; ++i) softmax_prefix(a.row(i), i + 1, std::span<double>(out).subspan(i * n, n));
  return Tensor(a.shape(), std::move(out));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t r = x.rows(), d = x.cols();
  REQUIRE_OR_THROW(gamma.size() == d && beta.size() == d, "layer_norm: gamma/beta length must equal " + std::to_string(d));
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    auto row = x.row(i);
    const double mean = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = gamma[j] * (row[j] - mean) * inv + beta[j];
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_cols");
  REQUIRE_OR_THROW(count > 0 && begin + count <= a.cols(), "slice_cols: range out of bounds");
  const std::size_t r = a.rows();
  std::vector<double> out;
  out.reserve(r * count);
  for (std::size_t i = 0; i < r; ++i) {
    auto row = a.row(i);
    out.insert(out.end(), row.begin() + static_cast<std::ptrdiff_t>(begin),
               row.begin() + static_cast<std::ptrdiff_t>(begin + count));
  }
  return Tensor({r, count}, std::move(out));
}

Tensor concat_cols(std::span<const Tensor> parts) {
  REQUIRE_OR_THROW(!parts.empty(), "concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_cols");
    REQUIRE_OR_THROW(p.rows() == r, "concat_cols: row counts differ");
    c += p.cols();
  }
  std::vector<double> out;
  out.reserve(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (const Tensor& p : parts) {
      auto row = p.row(i);
      out.insert(out.end(), row.begin(), row.end());
    }
  return Tensor({r, c}, std::move(out));
}

Tensor take_row(const Tensor& a, std::size_t r) {
  REQUIRE_OR_THROW(r < a.rows(), "take_row: row index out of range");
  auto row = a.row(r);
  return Tensor({1, row.size()}, std::vector<double>(row.begin(), row.end()));
}

Tensor embed(const Tensor& table, const Tensor& positional, std::span<const int> tokens) {
  require_matrix(table, "embed");
  require_matrix(positional, "embed");
  const std::size_t d = table.cols();
  REQUIRE_OR_THROW(positional.cols() == d, "embed: positional width differs from embedding width");
  REQUIRE_OR_THROW(!tokens.empty(), "embed: empty token sequence");
  REQUIRE_OR_THROW(tokens.size() <= positional.rows(), "embed: sequence longer than positional table");
  std::vector<double> out(tokens.size() * d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    REQUIRE_OR_THROW(tokens[i] >= 0 && static_cast<std::size_t>(tokens[i]) < table.rows(), "embed: token out of vocabulary");
    auto e = table.row(static_cast<std::size_t>(tokens[i]));
    auto p = positional.row(i);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = e[j] + p[j];
  }
  return Tensor({tokens.size(), d}, std::move(out));
}

double sum(const Tensor& a) { return std::accumulate(a.data().begin(), a.data().end(), 0.0); }

double dot(std::span<const double> a, std::span<const double> b) {
  REQUIRE_OR_THROW(a.size() == b.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double aa = dot(a, a), bb = dot(b, b);
  if (aa == 0.0 || bb == 0.0) throw NumericError("cosine similarity of a zero-norm vector");
  // sqrt(aa * bb) rather than norm(a) * norm(b): identical vectors then give
  // exactly 1, since sqrt(fl(x * x)) == x in IEEE arithmetic.
  double denom = std::sqrt(aa * bb);
  if (!std::isfinite(denom) || denom == 0.0) denom = std::sqrt(aa) * std::sqrt(bb);
  return std::clamp(dot(a, b) / denom, -1.0, 1.0);
}

}  // namespace layerlens
