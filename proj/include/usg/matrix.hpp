#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace usg {

// Shape mismatch between operands; message names both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN or otherwise unusable numeric input.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of 64-bit floats. The only numeric carrier in the
/// library; entries are finite except for the -inf sentinel used by
/// attention masks.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const noexcept;
  bool has_nan() const noexcept;

  /// "3x4", for error messages.
  std::string shape_str() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Exact bitwise comparison (distinguishes -0.0 from 0.0, NaN != NaN).
bool bitwise_equal(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

/// Standard matrix product. Throws DimensionError naming both shapes when
/// a.cols != b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);

/// Row-wise softmax. -inf entries contribute exactly zero weight; a row that
/// is entirely -inf becomes uniform. NaN or +inf input raises NumericError.
Matrix row_softmax(const Matrix& m);

/// Pairwise cosine similarity between rows of a and rows of b; zero-norm rows
/// score 0 against everything. Result entries clamped to [-1, 1].
Matrix cosine_matrix(const Matrix& a, const Matrix& b);

/// Same-shape 2-D cross-correlation with zero padding. Kernel dimensions must
/// be odd.
Matrix conv2d(const Matrix& input, const Matrix& kernel);

/// x * weight + bias, with the 1 x weight.cols bias broadcast over rows.
Matrix affine(const Matrix& x, const Matrix& weight, const Matrix& bias);

Matrix add(const Matrix& a, const Matrix& b);
Matrix relu(const Matrix& m);
/// Elementwise 1 / (1 + exp(-x)).
Matrix logistic(const Matrix& m);
double logistic_scalar(double x);

/// Seed for the deterministic weight initializer; equal seeds produce
/// bitwise-identical streams on every platform.
struct RngSeed {
  std::uint64_t value = 0;
};

/// Splittable counter-based generator. Each labeled stream is an independent
/// deterministic sequence; drawing does not disturb sibling streams.
class WeightRng {
 public:
  explicit WeightRng(RngSeed seed) : key_(seed.value) {}

  /// Derive an independent stream keyed by (this stream, label).
  WeightRng stream(std::string_view label) const;

  /// Next double in [0, 1).
  double next_uniform();

  /// rows x cols matrix with entries uniform in [-bound, bound).
  Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound);

  /// Weight init: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)).
  Matrix fan_in_matrix(std::size_t rows, std::size_t cols, std::size_t fan_in);

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace usg
