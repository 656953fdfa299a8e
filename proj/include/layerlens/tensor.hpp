#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace layerlens {

/// Raised for shape mismatches and for non-finite values reaching a tensor.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense, immutable, row-major tensor of doubles.
///
/// Every constructed tensor satisfies product(shape) == data.size() and holds
/// only finite values. A default-constructed tensor is empty (no shape, no
/// data) and is only meaningful as a placeholder.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor identity(std::size_t n);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }

  /// Row count of a matrix; a vector counts as a single row.
  std::size_t rows() const;
  /// Column count of a matrix; a vector's length.
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<const double> row(std::size_t r) const;

  double operator[](std::size_t i) const { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  /// Moves the storage out, leaving this tensor empty.
  std::vector<double> release();

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::string shape_string(const Tensor::Shape& shape);

Tensor matmul(const Tensor& a, const Tensor& b);
/// a (m x k) times the transpose of b (n x k).
Tensor matmul_transposed(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Adds the vector `bias` (length = cols) to every row of `a`.
Tensor add_row(const Tensor& a, const Tensor& bias);
Tensor relu(const Tensor& a);

/// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& a);
/// Softmax over the lower triangle of a square score matrix; entries above
/// the diagonal come out as exact zeros.
Tensor causal_softmax_rows(const Tensor& a);

/// Per-row normalization (population variance) followed by gamma * x + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
/// Row `r` of a matrix, returned as a 1 x cols matrix.
Tensor take_row(const Tensor& a, std::size_t r);
/// Gathers embedding rows for `tokens` and adds positional rows 0..n-1.
Tensor embed(const Tensor& table, const Tensor& positional, std::span<const int> tokens);

double sum(const Tensor& a);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
/// Cosine similarity; throws NumericError when either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace layerlens
