#include "usg/matrix.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

namespace usg {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string shape_of(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

// splitmix64 finalizer: the core mixing function of the counter-based
// generator. Pure 64-bit integer arithmetic, so streams are identical on
// every platform.
std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
  std::size_t r = 0;
  for (const auto& row : rows) {
    if (row.size() != m.cols_) {
      throw DimensionError("from_rows: ragged row " + std::to_string(r) + " has " +
                           std::to_string(row.size()) + " entries, expected " +
                           std::to_string(m.cols_));
    }
    std::size_t c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

bool Matrix::has_nan() const noexcept {
  return std::any_of(data_.begin(), data_.end(),
                     [](double v) { return std::isnan(v); });
}

std::string Matrix::shape_str() const { return shape_of(rows_, cols_); }

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data().data(), b.data().data(),
                     a.size() * sizeof(double)) == 0;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: dimension mismatch (" + a.shape_str() + ")*(" +
                         b.shape_str() + ")");
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;  // keeps identity/zero factors exact
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Matrix row_softmax(const Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      if (std::isnan(v)) {
        throw NumericError("row_softmax: NaN at (" + std::to_string(r) + "," +
                           std::to_string(c) + ")");
      }
      if (std::isinf(v) && v > 0) {
        throw NumericError("row_softmax: +inf at (" + std::to_string(r) + "," +
                           std::to_string(c) + ")");
      }
    }
  }
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double mx = kNegInf;
    for (std::size_t c = 0; c < m.cols(); ++c) mx = std::max(mx, m(r, c));
    if (m.cols() == 0) continue;
    if (mx == kNegInf) {
      // Fully masked row: no key is preferred, attend uniformly.
      const double u = 1.0 / static_cast<double>(m.cols());
      for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = u;
      continue;
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double e = std::exp(m(r, c) - mx);  // exp(-inf) == exactly 0
      out(r, c) = e;
      sum += e;
    }
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) /= sum;
  }
  return out;
}

Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("cosine_matrix: dimension mismatch (" + a.shape_str() +
                         ") vs (" + b.shape_str() + ")");
  }
  std::vector<double> na(a.rows()), nb(b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (double v : a.row(i)) s += v * v;
    na[i] = std::sqrt(s);
  }
  for (std::size_t j = 0; j < b.rows(); ++j) {
    double s = 0.0;
    for (double v : b.row(j)) s += v * v;
    nb[j] = std::sqrt(s);
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      if (na[i] == 0.0 || nb[j] == 0.0) continue;  // zero vector: similarity 0
      double dot = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) dot += a(i, k) * b(j, k);
      out(i, j) = std::clamp(dot / (na[i] * nb[j]), -1.0, 1.0);
    }
  }
  return out;
}

Matrix conv2d(const Matrix& input, const Matrix& kernel) {
  if (kernel.rows() % 2 == 0 || kernel.cols() % 2 == 0) {
    throw DimensionError("conv2d: kernel must have odd dimensions, got " +
                         kernel.shape_str());
  }
  const std::ptrdiff_t kr = static_cast<std::ptrdiff_t>(kernel.rows());
  const std::ptrdiff_t kc = static_cast<std::ptrdiff_t>(kernel.cols());
  const std::ptrdiff_t hr = kr / 2, hc = kc / 2;
  const std::ptrdiff_t nr = static_cast<std::ptrdiff_t>(input.rows());
  const std::ptrdiff_t nc = static_cast<std::ptrdiff_t>(input.cols());
  Matrix out(input.rows(), input.cols());
  for (std::ptrdiff_t r = 0; r < nr; ++r) {
    for (std::ptrdiff_t c = 0; c < nc; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t u = 0; u < kr; ++u) {
        for (std::ptrdiff_t v = 0; v < kc; ++v) {
          const double w =
              kernel(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
          if (w == 0.0) continue;  // identity kernel stays exact
          const std::ptrdiff_t rr = r + u - hr;
          const std::ptrdiff_t cc = c + v - hc;
          if (rr < 0 || rr >= nr || cc < 0 || cc >= nc) continue;  // zero padding
          acc += w * input(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
        }
      }
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
    }
  }
  return out;
}

Matrix affine(const Matrix& x, const Matrix& weight, const Matrix& bias) {
  if (x.cols() != weight.rows()) {
    throw DimensionError("affine: input (" + x.shape_str() + ") does not match weight (" +
                         weight.shape_str() + ")");
  }
  if (bias.rows() != 1 || bias.cols() != weight.cols()) {
    throw DimensionError("affine: bias (" + bias.shape_str() + ") must be 1x" +
                         std::to_string(weight.cols()));
  }
  Matrix out = matmul(x, weight);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) {
      const double b = bias(0, j);
      if (b != 0.0) out(i, j) += b;  // zero bias leaves the product bitwise intact
    }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("add: shape mismatch (" + a.shape_str() + ") vs (" +
                         b.shape_str() + ")");
  }
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = b.data()[i];
    if (v != 0.0) out.data()[i] += v;  // adding an exact zero keeps a bitwise
  }
  return out;
}

Matrix relu(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.data()) v = std::max(v, 0.0);
  return out;
}

double logistic_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Matrix logistic(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.data()) v = logistic_scalar(v);
  return out;
}

WeightRng WeightRng::stream(std::string_view label) const {
  WeightRng child({mix64(key_ ^ fnv1a64(label))});
  return child;
}

double WeightRng::next_uniform() {
  // Counter-based: the i-th draw is a pure function of (key, i).
  const std::uint64_t bits = mix64(key_ + 0x9e3779b97f4a7c15ULL * counter_++);
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

Matrix WeightRng::uniform_matrix(std::size_t rows, std::size_t cols, double bound) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = bound * (2.0 * next_uniform() - 1.0);
  return m;
}

Matrix WeightRng::fan_in_matrix(std::size_t rows, std::size_t cols, std::size_t fan_in) {
  const double bound = fan_in ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 1.0;
  return uniform_matrix(rows, cols, bound);
}

}  // namespace usg
