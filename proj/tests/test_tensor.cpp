#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "usg/matrix.hpp"

using namespace usg;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Matrix random_matrix(std::mt19937& gen, std::size_t rows, std::size_t cols,
                     double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = dist(gen);
  return m;
}

// Independent triple-loop product used to cross-check matmul.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("matrix construction and element access") {
  Matrix m(2, 3);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.size() == 6);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(m(r, c) == 0.0);
  m(1, 2) = 5.0;
  CHECK(m(1, 2) == 5.0);
  CHECK(m.shape_str() == "2x3");
  CHECK(Matrix().empty());
}

TEST_CASE("from_rows builds the expected layout") {
  const Matrix m = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  CHECK(m(0, 0) == 1.0);
  CHECK(m(0, 1) == 2.0);
  CHECK(m(1, 0) == 3.0);
  CHECK(m(1, 1) == 4.0);
  CHECK_THROWS_AS(Matrix::from_rows({{1.0}, {1.0, 2.0}}), DimensionError);
}

TEST_CASE("identity matrix") {
  const Matrix id = Matrix::identity(3);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(id(r, c) == (r == c ? 1.0 : 0.0));
}

TEST_CASE("matmul matches a hand-computed product") {
  const Matrix a = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  const Matrix b = Matrix::from_rows({{5.0, 6.0}, {7.0, 8.0}});
  const Matrix p = matmul(a, b);
  CHECK(p(0, 0) == 19.0);
  CHECK(p(0, 1) == 22.0);
  CHECK(p(1, 0) == 43.0);
  CHECK(p(1, 1) == 50.0);
}

TEST_CASE("matmul agrees with a triple-loop reference on random shapes") {
  std::mt19937 gen(991);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  std::uniform_int_distribution<int> val(-4, 4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = dim(gen), k = dim(gen), m = dim(gen);
    Matrix a(n, k), b(k, m);
    // integer-valued entries keep both accumulations exact
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < k; ++c) a(r, c) = val(gen);
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < m; ++c) b(r, c) = val(gen);
    CHECK(bitwise_equal(matmul(a, b), naive_matmul(a, b)));
  }
}

TEST_CASE("matmul identity leaves a matrix bitwise untouched") {
  std::mt19937 gen(17);
  const Matrix a = random_matrix(gen, 5, 5);
  CHECK(bitwise_equal(matmul(a, Matrix::identity(5)), a));
  CHECK(bitwise_equal(matmul(Matrix::identity(5), a), a));
}

TEST_CASE("matmul rejects mismatched shapes") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);
}

TEST_CASE("transpose round-trips and swaps entries") {
  std::mt19937 gen(3);
  const Matrix a = random_matrix(gen, 3, 5);
  const Matrix t = transpose(a);
  CHECK(t.rows() == 5);
  CHECK(t.cols() == 3);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c) CHECK(t(c, r) == a(r, c));
  CHECK(bitwise_equal(transpose(t), a));
}

TEST_CASE("row_softmax matches the exp-sum definition") {
  const Matrix logits = Matrix::from_rows({{1.0, 2.0, 3.0}});
  const Matrix p = row_softmax(logits);
  // e^1 / (e^1 + e^2 + e^3) etc., evaluated independently
  CHECK(p(0, 0) == doctest::Approx(0.09003057317038046).epsilon(1e-12));
  CHECK(p(0, 1) == doctest::Approx(0.24472847105479767).epsilon(1e-12));
  CHECK(p(0, 2) == doctest::Approx(0.6652409557748219).epsilon(1e-12));
}

TEST_CASE("row_softmax rows sum to one and stay positive") {
  std::mt19937 gen(29);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix logits = random_matrix(gen, 4, 6, -50.0, 50.0);
    const Matrix p = row_softmax(logits);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) {
        CHECK(p(r, c) > 0.0);
        sum += p(r, c);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("row_softmax is invariant under per-row shifts") {
  std::mt19937 gen(31);
  const Matrix logits = random_matrix(gen, 3, 4);
  Matrix shifted = logits;
  for (std::size_t r = 0; r < shifted.rows(); ++r)
    for (std::size_t c = 0; c < shifted.cols(); ++c) shifted(r, c) += 7.5;
  const Matrix a = row_softmax(logits);
  const Matrix b = row_softmax(shifted);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c)
      CHECK(a(r, c) == doctest::Approx(b(r, c)).epsilon(1e-12));
}

TEST_CASE("row_softmax survives huge magnitudes") {
  const Matrix logits = Matrix::from_rows({{1000.0, 0.0}, {-1000.0, -999.0}});
  const Matrix p = row_softmax(logits);
  CHECK(p(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p(1, 1) > p(1, 0));
  CHECK(p.all_finite());
}

TEST_CASE("row_softmax sends -inf entries to exactly zero") {
  const Matrix logits = Matrix::from_rows({{0.0, -kInf, 1.0}});
  const Matrix p = row_softmax(logits);
  CHECK(p(0, 1) == 0.0);
  CHECK(p(0, 0) + p(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("row_softmax spreads a fully masked row uniformly") {
  const Matrix logits = Matrix::from_rows({{-kInf, -kInf, -kInf, -kInf}});
  const Matrix p = row_softmax(logits);
  for (std::size_t c = 0; c < 4; ++c) CHECK(p(0, c) == 0.25);
}

TEST_CASE("row_softmax rejects NaN and +inf") {
  CHECK_THROWS_AS(row_softmax(Matrix::from_rows({{0.0, std::nan("")}})), NumericError);
  CHECK_THROWS_AS(row_softmax(Matrix::from_rows({{0.0, kInf}})), NumericError);
}

TEST_CASE("cosine_matrix matches a hand case") {
  const Matrix a = Matrix::from_rows({{3.0, 4.0}});
  const Matrix b = Matrix::from_rows({{4.0, 3.0}});
  // (3*4 + 4*3) / (5 * 5)
  CHECK(cosine_matrix(a, b)(0, 0) == doctest::Approx(0.96).epsilon(1e-15));
}

TEST_CASE("cosine_matrix handles zero rows and clamps to [-1, 1]") {
  const Matrix a = Matrix::from_rows({{0.0, 0.0}, {1.0, 0.0}});
  const Matrix b = Matrix::from_rows({{2.0, 0.0}, {-3.0, 0.0}});
  const Matrix c = cosine_matrix(a, b);
  CHECK(c(0, 0) == 0.0);
  CHECK(c(0, 1) == 0.0);
  CHECK(c(1, 0) == 1.0);
  CHECK(c(1, 1) == -1.0);
  std::mt19937 gen(41);
  const Matrix x = random_matrix(gen, 4, 7);
  const Matrix cc = cosine_matrix(x, x);
  for (std::size_t r = 0; r < cc.rows(); ++r) {
    CHECK(cc(r, r) == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t c2 = 0; c2 < cc.cols(); ++c2) {
      CHECK(cc(r, c2) <= 1.0);
      CHECK(cc(r, c2) >= -1.0);
    }
  }
}

TEST_CASE("cosine_matrix is transpose-symmetric in its arguments") {
  std::mt19937 gen(43);
  const Matrix a = random_matrix(gen, 3, 5);
  const Matrix b = random_matrix(gen, 4, 5);
  const Matrix ab = cosine_matrix(a, b);
  const Matrix ba = cosine_matrix(b, a);
  CHECK(bitwise_equal(ab, transpose(ba)));
}

TEST_CASE("conv2d matches a hand-computed 3x3 case") {
  Matrix ones(3, 3);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) ones(r, c) = 1.0;
  const Matrix out = conv2d(ones, ones);
  // zero padding: corners see 4 cells, edges 6, center 9
  const Matrix want = Matrix::from_rows({{4.0, 6.0, 4.0}, {6.0, 9.0, 6.0}, {4.0, 6.0, 4.0}});
  CHECK(bitwise_equal(out, want));
}

TEST_CASE("conv2d with a centered delta kernel is the identity") {
  std::mt19937 gen(47);
  const Matrix x = random_matrix(gen, 4, 6);
  Matrix delta(3, 3);
  delta(1, 1) = 1.0;
  CHECK(bitwise_equal(conv2d(x, delta), x));
}

TEST_CASE("conv2d requires odd kernels and keeps shape") {
  CHECK_THROWS_AS(conv2d(Matrix(3, 3), Matrix(2, 2)), DimensionError);
  std::mt19937 gen(53);
  const Matrix x = random_matrix(gen, 5, 2);
  const Matrix k = random_matrix(gen, 3, 3);
  const Matrix out = conv2d(x, k);
  CHECK(out.rows() == 5);
  CHECK(out.cols() == 2);
}

TEST_CASE("affine applies x*W + b") {
  const Matrix x = Matrix::from_rows({{1.0, 2.0}});
  const Matrix w = Matrix::from_rows({{1.0, 0.0, 2.0}, {0.0, 1.0, 3.0}});
  const Matrix b = Matrix::from_rows({{10.0, 20.0, 30.0}});
  const Matrix y = affine(x, w, b);
  CHECK(y(0, 0) == 11.0);
  CHECK(y(0, 1) == 22.0);
  CHECK(y(0, 2) == 38.0);
  CHECK_THROWS_AS(affine(x, w, Matrix(2, 3)), DimensionError);
}

TEST_CASE("affine with identity weight and zero bias is bitwise identity") {
  std::mt19937 gen(59);
  const Matrix x = random_matrix(gen, 3, 4);
  CHECK(bitwise_equal(affine(x, Matrix::identity(4), Matrix(1, 4)), x));
}

TEST_CASE("add, relu, and logistic behave pointwise") {
  const Matrix a = Matrix::from_rows({{1.0, -2.0}});
  const Matrix b = Matrix::from_rows({{0.5, 0.5}});
  const Matrix s = add(a, b);
  CHECK(s(0, 0) == 1.5);
  CHECK(s(0, 1) == -1.5);
  CHECK_THROWS_AS(add(a, Matrix(2, 2)), DimensionError);

  const Matrix r = relu(a);
  CHECK(r(0, 0) == 1.0);
  CHECK(r(0, 1) == 0.0);

  const Matrix l = logistic(Matrix::from_rows({{0.0, 1.0e9, -1.0e9}}));
  CHECK(l(0, 0) == 0.5);
  CHECK(l(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(l(0, 2) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(logistic_scalar(1.0) == doctest::Approx(0.7310585786300049).epsilon(1e-14));
}

TEST_CASE("adding an all-zero matrix is bitwise identity") {
  std::mt19937 gen(61);
  const Matrix a = random_matrix(gen, 4, 4);
  CHECK(bitwise_equal(add(a, Matrix(4, 4)), a));
}

TEST_CASE("weight rng is deterministic per seed and stream") {
  WeightRng a{RngSeed{42}};
  WeightRng b{RngSeed{42}};
  const Matrix ma = a.stream("layer0").uniform_matrix(3, 4, 0.5);
  const Matrix mb = b.stream("layer0").uniform_matrix(3, 4, 0.5);
  CHECK(bitwise_equal(ma, mb));

  const Matrix other_stream = WeightRng{RngSeed{42}}.stream("layer1").uniform_matrix(3, 4, 0.5);
  CHECK(!bitwise_equal(ma, other_stream));
  const Matrix other_seed = WeightRng{RngSeed{43}}.stream("layer0").uniform_matrix(3, 4, 0.5);
  CHECK(!bitwise_equal(ma, other_seed));
}

TEST_CASE("weight rng respects bounds") {
  WeightRng rng{RngSeed{7}};
  auto s = rng.stream("w");
  const Matrix m = s.uniform_matrix(16, 16, 0.25);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) {
      CHECK(m(r, c) >= -0.25);
      CHECK(m(r, c) < 0.25);
    }
  // fan-in scaling: bound is 1/sqrt(fan_in)
  const Matrix f = rng.stream("f").fan_in_matrix(8, 8, 16);
  for (std::size_t r = 0; r < f.rows(); ++r)
    for (std::size_t c = 0; c < f.cols(); ++c) CHECK(std::abs(f(r, c)) <= 0.25);
}

TEST_CASE("weight rng draws distinct values within a stream") {
  WeightRng rng{RngSeed{99}};
  auto s = rng.stream("x");
  const Matrix m = s.uniform_matrix(2, 2, 1.0);
  CHECK(!(m(0, 0) == m(0, 1) && m(0, 1) == m(1, 0) && m(1, 0) == m(1, 1)));
}

TEST_CASE("bitwise_equal distinguishes shapes, values, and signed zero") {
  CHECK(!bitwise_equal(Matrix(1, 2), Matrix(2, 1)));
  Matrix a(1, 1), b(1, 1);
  a(0, 0) = 0.0;
  b(0, 0) = -0.0;
  CHECK(!bitwise_equal(a, b));
  b(0, 0) = 0.0;
  CHECK(bitwise_equal(a, b));
}
