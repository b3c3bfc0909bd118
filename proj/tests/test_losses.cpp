#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "doctest.h"
#include "usg/losses.hpp"
#include "usg/matrix.hpp"

using namespace usg;

namespace {

double softplus_ref(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

// Exhaustive minimum assignment cost by trying every injection of the smaller
// side into the larger one.
double brute_force_min_cost(const Matrix& cost) {
  const std::size_t rows = cost.rows(), cols = cost.cols();
  double best = std::numeric_limits<double>::infinity();
  if (rows <= cols) {
    std::vector<std::size_t> perm(cols);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do {
      double total = 0.0;
      for (std::size_t r = 0; r < rows; ++r) total += cost(r, perm[r]);
      best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    std::vector<std::size_t> perm(rows);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do {
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += cost(perm[c], c);
      best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  return best;
}

}  // namespace

TEST_CASE("hungarian_match solves a classic 3x3 instance") {
  const Matrix cost = Matrix::from_rows({{4.0, 1.0, 3.0},
                                         {2.0, 0.0, 5.0},
                                         {3.0, 2.0, 2.0}});
  const MatchAssignment a = hungarian_match(cost);
  REQUIRE(a.pairs.size() == 3);
  CHECK(a.unmatched_queries.empty());
  double total = 0.0;
  for (const auto& [q, g] : a.pairs) total += cost(q, g);
  CHECK(total == 5.0);  // 1 + 2 + 2
}

TEST_CASE("hungarian_match equals brute force on exhaustive instances") {
  std::mt19937 gen(606);
  std::uniform_int_distribution<int> val(-9, 9);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t rows = 1 + gen() % 5;
    const std::size_t cols = 1 + gen() % 5;
    Matrix cost(rows, cols);
    // integer costs make both totals exact, so equality is legitimate
    for (std::size_t i = 0; i < cost.size(); ++i) cost.data()[i] = val(gen);

    const MatchAssignment a = hungarian_match(cost);
    CHECK(a.pairs.size() == std::min(rows, cols));
    std::set<std::size_t> qs, gs;
    double total = 0.0;
    for (const auto& [q, g] : a.pairs) {
      CHECK(qs.insert(q).second);
      CHECK(gs.insert(g).second);
      total += cost(q, g);
    }
    for (std::size_t q : a.unmatched_queries) CHECK(qs.insert(q).second);
    CHECK(qs.size() == rows);  // pairs and unmatched cover every query exactly once
    CHECK(total == brute_force_min_cost(cost));
  }
}

TEST_CASE("hungarian_match handles empty and degenerate shapes") {
  const MatchAssignment none = hungarian_match(Matrix(3, 0));
  CHECK(none.pairs.empty());
  CHECK(none.unmatched_queries == std::vector<std::size_t>{0, 1, 2});
  CHECK(hungarian_match(Matrix(0, 4)).pairs.empty());
  CHECK(hungarian_match(Matrix(0, 0)).unmatched_queries.empty());

  // more queries than targets: padding matches are discarded
  const Matrix tall = Matrix::from_rows({{5.0}, {1.0}, {3.0}});
  const MatchAssignment a = hungarian_match(tall);
  REQUIRE(a.pairs.size() == 1);
  CHECK(a.pairs[0] == std::pair<std::size_t, std::size_t>{1, 0});
  CHECK(a.unmatched_queries == std::vector<std::size_t>{0, 2});
}

TEST_CASE("hungarian_match rejects NaN costs") {
  Matrix cost(2, 2);
  cost(1, 1) = std::nan("");
  CHECK_THROWS_AS(hungarian_match(cost), NumericError);
}

TEST_CASE("sigmoid_ce closed forms") {
  // logit 0 against target 1: ln 2
  CHECK(sigmoid_ce(Matrix(1, 1), Matrix::from_rows({{1.0}})) ==
        doctest::Approx(0.6931471805599453).epsilon(1e-15));
  // confident-correct pair: softplus(-1) on both entries
  const Matrix logits = Matrix::from_rows({{1.0, -1.0}});
  const Matrix targets = Matrix::from_rows({{1.0, 0.0}});
  CHECK(sigmoid_ce(logits, targets) ==
        doctest::Approx(0.31326168751822286).epsilon(1e-14));
  CHECK(sigmoid_ce(Matrix(), Matrix()) == 0.0);
  CHECK_THROWS_AS(sigmoid_ce(Matrix(1, 2), Matrix(2, 1)), DimensionError);
}

TEST_CASE("sigmoid_ce survives extreme logits") {
  const Matrix logits = Matrix::from_rows({{1000.0, -1000.0}});
  const Matrix targets = Matrix::from_rows({{0.0, 1.0}});
  const double loss = sigmoid_ce(logits, targets);
  CHECK(std::isfinite(loss));
  CHECK(loss == doctest::Approx(1000.0).epsilon(1e-12));
}

TEST_CASE("sigmoid_ce_grad matches finite differences") {
  std::mt19937 gen(17);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  Matrix logits(2, 3), targets(2, 3);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    logits.data()[i] = dist(gen);
    targets.data()[i] = gen() % 2;
  }
  const Matrix grad = sigmoid_ce_grad(logits, targets);
  const double h = 1e-5;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Matrix up = logits, down = logits;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double fd = (sigmoid_ce(up, targets) - sigmoid_ce(down, targets)) / (2.0 * h);
    CHECK(grad.data()[i] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("dice_loss closed forms") {
  // half-confident prediction of a single positive cell
  const Matrix probs = Matrix::from_rows({{0.5, 0.5}});
  const Matrix targets = Matrix::from_rows({{1.0, 0.0}});
  // 1 - (2*0.5 + 1) / (1 + 1 + 1)
  CHECK(dice_loss(probs, targets) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  // exact binary agreement scores zero
  const Matrix exact = Matrix::from_rows({{1.0, 0.0, 1.0}});
  CHECK(dice_loss(exact, exact) == 0.0);

  // total miss on a 2x2 all-positive target
  CHECK(dice_loss(Matrix(2, 2), Matrix(2, 2, 1.0)) ==
        doctest::Approx(0.8).epsilon(1e-15));
  // the +1 smoothing keeps empty-vs-empty at zero
  CHECK(dice_loss(Matrix(2, 2), Matrix(2, 2)) == 0.0);
}

TEST_CASE("dice_loss stays within [0, 1) on probabilities") {
  std::mt19937 gen(23);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix probs(3, 3), targets(3, 3);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      probs.data()[i] = dist(gen);
      targets.data()[i] = gen() % 2;
    }
    const double d = dice_loss(probs, targets);
    CHECK(d >= 0.0);
    CHECK(d < 1.0);
  }
}

TEST_CASE("weighted_bce closed form with a positive weight") {
  // four 0.5 guesses, one positive target, weight 4:
  // (4*ln2 + 3*ln2) / 4
  const Matrix probs(1, 4, 0.5);
  const Matrix targets = Matrix::from_rows({{1.0, 0.0, 0.0, 0.0}});
  CHECK(weighted_bce(probs, targets, 4.0) ==
        doctest::Approx(7.0 * std::log(2.0) / 4.0).epsilon(1e-14));
  CHECK(weighted_bce(probs, targets, 4.0) ==
        doctest::Approx(1.2130075659799042).epsilon(1e-14));
}

TEST_CASE("weighted_bce clamps certainties instead of overflowing") {
  const Matrix wrong = Matrix::from_rows({{0.0}});
  const Matrix target = Matrix::from_rows({{1.0}});
  const double loss = weighted_bce(wrong, target, 1.0);
  CHECK(std::isfinite(loss));
  CHECK(loss == doctest::Approx(-std::log(1e-7)).epsilon(1e-12));
  CHECK_THROWS_AS(weighted_bce(wrong, target, 0.0), NumericError);
  CHECK_THROWS_AS(weighted_bce(wrong, target, -2.0), NumericError);
}

TEST_CASE("default_positive_weight is entries over positives, clamped") {
  CHECK(default_positive_weight(Matrix::from_rows({{1.0, 0.0, 0.0, 0.0}})) == 4.0);
  CHECK(default_positive_weight(Matrix::from_rows({{1.0, 1.0}})) == 1.0);
  CHECK(default_positive_weight(Matrix(2, 3)) == 1.0);  // no positives
  Matrix sparse(1, 500);
  sparse(0, 7) = 1.0;
  CHECK(default_positive_weight(sparse) == 100.0);  // clamped from 500
}

TEST_CASE("pair_loss maps cosine scores onto probabilities first") {
  // perfect agreement: raw +1 on links, -1 off links
  const Matrix raw = Matrix::from_rows({{1.0, -1.0}, {-1.0, 1.0}});
  const Matrix gt = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  CHECK(pair_loss(raw, gt, 1.0) < 1e-6);
  // total disagreement is the clamped worst case
  const Matrix anti = Matrix::from_rows({{-1.0, 1.0}, {1.0, -1.0}});
  CHECK(pair_loss(anti, gt, 1.0) == doctest::Approx(-std::log(1e-7)).epsilon(1e-10));
  // raw 0 is a 0.5 guess
  CHECK(pair_loss(Matrix(1, 1), Matrix::from_rows({{1.0}}), 1.0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("info_nce closed form and edge cases") {
  const Matrix anchor = Matrix::from_rows({{1.0, 0.0}});
  const Matrix positive = Matrix::from_rows({{2.0, 0.0}});
  const Matrix negatives = Matrix(2, 2);  // both negatives score 0
  // log(1 + 2 e^{-2})
  CHECK(info_nce(anchor, positive, negatives) ==
        doctest::Approx(std::log(1.0 + 2.0 * std::exp(-2.0))).epsilon(1e-14));
  CHECK(info_nce(anchor, positive, Matrix(0, 2)) == 0.0);
  CHECK_THROWS_AS(info_nce(Matrix(2, 2), positive, negatives), DimensionError);
  CHECK_THROWS_AS(info_nce(anchor, positive, Matrix(1, 3)), DimensionError);
}

TEST_CASE("info_nce grows with harder negatives and never overflows") {
  const Matrix anchor = Matrix::from_rows({{1.0, 0.0}});
  const Matrix positive = Matrix::from_rows({{1.0, 0.0}});
  const Matrix easy = Matrix::from_rows({{-1.0, 0.0}});
  const Matrix hard = Matrix::from_rows({{2.0, 0.0}});
  CHECK(info_nce(anchor, positive, easy) < info_nce(anchor, positive, hard));

  const Matrix huge = Matrix::from_rows({{1.0e4, 0.0}});
  const double loss = info_nce(anchor, positive, huge);
  CHECK(std::isfinite(loss));
  CHECK(loss == doctest::Approx(1.0e4 - 1.0).epsilon(1e-10));

  Matrix two(2, 2);
  two(0, 0) = -1.0;
  two(1, 0) = -1.0;
  const Matrix one = Matrix::from_rows({{-1.0, 0.0}});
  CHECK(info_nce(anchor, positive, two) > info_nce(anchor, positive, one));
}

TEST_CASE("match_cost combines class, cross-entropy, and dice terms") {
  ObjectPredictions pred;
  pred.class_logits = Matrix::from_rows({{2.0, 0.0}});  // one class + "no object"
  pred.mask_logits = {Matrix(1, 1)};                    // logit 0
  ObjectTargets gt;
  gt.classes = {0};
  gt.masks = {Matrix::from_rows({{1.0}})};
  const LossWeights w;
  const Matrix cost = match_cost(pred, gt, w);
  REQUIRE(cost.rows() == 1);
  REQUIRE(cost.cols() == 1);
  // 2*(-sigmoid(2)) + 5*ln2 + 5*(1 - 2/2.5)
  const double want = 2.0 * -(1.0 / (1.0 + std::exp(-2.0))) + 5.0 * std::log(2.0) + 1.0;
  CHECK(cost(0, 0) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("match_cost validates classes and shapes") {
  ObjectPredictions pred;
  pred.class_logits = Matrix(1, 2);
  pred.mask_logits = {Matrix(1, 1)};
  ObjectTargets gt;
  gt.classes = {1};  // only class 0 exists; column 1 is "no object"
  gt.masks = {Matrix(1, 1)};
  CHECK_THROWS_AS(match_cost(pred, gt, LossWeights{}), DimensionError);
  gt.classes = {0};
  gt.masks = {Matrix(2, 2)};
  CHECK_THROWS_AS(match_cost(pred, gt, LossWeights{}), DimensionError);
  const Matrix empty = match_cost(pred, ObjectTargets{}, LossWeights{});
  CHECK(empty.rows() == 1);
  CHECK(empty.cols() == 0);
}

TEST_CASE("match_cost drives the matcher to the evident assignment") {
  ObjectPredictions pred;
  pred.class_logits = Matrix::from_rows({{9.0, -9.0, 0.0}, {-9.0, 9.0, 0.0}});
  pred.mask_logits = {Matrix::from_rows({{9.0, -9.0}}), Matrix::from_rows({{-9.0, 9.0}})};
  ObjectTargets gt;
  gt.classes = {0, 1};
  gt.masks = {Matrix::from_rows({{1.0, 0.0}}), Matrix::from_rows({{0.0, 1.0}})};
  const MatchAssignment a = hungarian_match(match_cost(pred, gt, LossWeights{}));
  REQUIRE(a.pairs.size() == 2);
  CHECK(a.pairs[0] == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK(a.pairs[1] == std::pair<std::size_t, std::size_t>{1, 1});
}

TEST_CASE("object_loss composes its per-query terms") {
  ObjectPredictions pred;
  pred.class_logits = Matrix::from_rows({{3.0, -1.0}, {-2.0, 4.0}});
  pred.mask_logits = {Matrix::from_rows({{2.0}}), Matrix::from_rows({{-5.0}})};
  ObjectTargets gt;
  gt.classes = {0};
  gt.masks = {Matrix::from_rows({{1.0}})};
  MatchAssignment assignment;
  assignment.pairs = {{0, 0}};
  assignment.unmatched_queries = {1};
  const LossWeights w;

  const double got = object_loss(pred, gt, assignment, w);
  // matched query: class + both mask terms; unmatched: down-weighted class term
  const double matched = w.lambda_cls * softplus_ref(-3.0) +
                         w.lambda_ce * sigmoid_ce(pred.mask_logits[0], gt.masks[0]) +
                         w.lambda_dice * dice_loss(logistic(pred.mask_logits[0]), gt.masks[0]);
  const double unmatched = w.lambda_cls * w.no_object_weight * softplus_ref(-4.0);
  CHECK(got == doctest::Approx((matched + unmatched) / 2.0).epsilon(1e-13));
}

TEST_CASE("object_loss with no targets pays only the no-object term") {
  ObjectPredictions pred;
  pred.class_logits = Matrix::from_rows({{0.0, 0.0}, {0.0, 5.0}});
  pred.mask_logits = {Matrix(1, 1), Matrix(1, 1)};
  MatchAssignment assignment;
  assignment.unmatched_queries = {0, 1};
  const LossWeights w;
  const double got = object_loss(pred, ObjectTargets{}, assignment, w);
  const double want =
      (0.2 * std::log(2.0) + 0.2 * softplus_ref(-5.0)) / 2.0;
  CHECK(got == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("object_loss rejects inconsistent assignments") {
  ObjectPredictions pred;
  pred.class_logits = Matrix(2, 2);
  pred.mask_logits = {Matrix(1, 1), Matrix(1, 1)};
  ObjectTargets gt;
  gt.classes = {0};
  gt.masks = {Matrix(1, 1)};

  MatchAssignment missing;  // neither matched nor unmatched covers query 1
  missing.pairs = {{0, 0}};
  CHECK_THROWS_AS(object_loss(pred, gt, missing, LossWeights{}), std::invalid_argument);

  MatchAssignment doubled;
  doubled.pairs = {{0, 0}};
  doubled.unmatched_queries = {0, 1};
  CHECK_THROWS_AS(object_loss(pred, gt, doubled, LossWeights{}), std::invalid_argument);

  MatchAssignment out_of_range;
  out_of_range.pairs = {{0, 5}};
  out_of_range.unmatched_queries = {1};
  CHECK_THROWS_AS(object_loss(pred, gt, out_of_range, LossWeights{}),
                  std::invalid_argument);
}

TEST_CASE("relation_loss is mean softmax cross-entropy") {
  CHECK(relation_loss(Matrix::from_rows({{2.0, 0.0}}), {0}) ==
        doctest::Approx(softplus_ref(-2.0)).epsilon(1e-14));
  CHECK(relation_loss(Matrix::from_rows({{0.0, 0.0, 0.0}}), {1}) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-14));
  // two pairs average
  const Matrix logits = Matrix::from_rows({{2.0, 0.0}, {0.0, 2.0}});
  CHECK(relation_loss(logits, {0, 1}) ==
        doctest::Approx(softplus_ref(-2.0)).epsilon(1e-14));
  CHECK(relation_loss(Matrix(0, 4), {}) == 0.0);
  CHECK_THROWS_AS(relation_loss(logits, {0}), DimensionError);
  CHECK_THROWS_AS(relation_loss(logits, {0, 7}), DimensionError);
}

TEST_CASE("relation_loss survives extreme logits") {
  const Matrix logits = Matrix::from_rows({{1000.0, -1000.0}});
  CHECK(relation_loss(logits, {0}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(relation_loss(logits, {1}) == doctest::Approx(2000.0).epsilon(1e-12));
}

TEST_CASE("total_loss weights its terms") {
  const LossWeights w;  // alpha 1, beta 1, gamma 0.8, eta 0.6
  const LossReport r = total_loss(1.0, 2.0, 3.0, 4.0, w);
  CHECK(r.object_loss == 1.0);
  CHECK(r.association_loss == 2.0);
  CHECK(r.relation_loss == 3.0);
  CHECK(r.consistency_loss == 4.0);
  CHECK(r.total == doctest::Approx(7.8).epsilon(1e-15));

  LossWeights custom;
  custom.alpha = 2.0;
  custom.beta = 0.0;
  custom.gamma = 1.0;
  custom.eta = 10.0;
  CHECK(total_loss(1.0, 99.0, 1.0, 0.5, custom).total ==
        doctest::Approx(8.0).epsilon(1e-15));

  CHECK_THROWS_AS(total_loss(std::nan(""), 0.0, 0.0, 0.0, w), NumericError);
}

TEST_CASE("loss reports serialize deterministically") {
  const LossReport r = total_loss(1.0, 2.0, 3.0, 4.0, LossWeights{});
  const std::string a = serialize_loss_report(r);
  const std::string b = serialize_loss_report(r);
  CHECK(a == b);
  CHECK(a.find("\"association\": 2.0") != std::string::npos);
  CHECK(a.find("\"total\": 7.8") != std::string::npos);
  CHECK(a.back() == '\n');
}
