#include "usg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

namespace usg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double softplus(double x) {
  // log(1 + e^x) without overflow: for large x this is x + log(1 + e^-x).
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch (" + a.shape_str() +
                         ") vs (" + b.shape_str() + ")");
  }
}

}  // namespace

MatchAssignment hungarian_match(const Matrix& cost) {
  if (cost.has_nan()) throw NumericError("hungarian_match: NaN cost");
  const std::size_t rows = cost.rows();
  const std::size_t cols = cost.cols();
  MatchAssignment out;
  if (rows == 0 || cols == 0) {
    for (std::size_t q = 0; q < rows; ++q) out.unmatched_queries.push_back(q);
    return out;
  }

  // Zero-pad to square; the algorithm below is the classic O(n^3) potentials
  // formulation, 1-indexed with row/column 0 as scratch.
  const std::size_t n = std::max(rows, cols);
  auto at = [&](std::size_t i, std::size_t j) -> double {
    return (i < rows && j < cols) ? cost(i, j) : 0.0;
  };

  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);  // p[j]: row owning column j
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<char> matched(rows, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i >= 1 && i - 1 < rows && j - 1 < cols) {
      out.pairs.push_back({i - 1, j - 1});
      matched[i - 1] = 1;
    }
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (std::size_t q = 0; q < rows; ++q) {
    if (!matched[q]) out.unmatched_queries.push_back(q);
  }
  return out;
}

Matrix match_cost(const ObjectPredictions& pred, const ObjectTargets& gt,
                  const LossWeights& weights) {
  const std::size_t q_count = pred.class_logits.rows();
  if (pred.mask_logits.size() != q_count) {
    throw DimensionError("match_cost: " + std::to_string(pred.mask_logits.size()) +
                         " mask grids for " + std::to_string(q_count) + " queries");
  }
  if (gt.classes.size() != gt.masks.size()) {
    throw DimensionError("match_cost: " + std::to_string(gt.classes.size()) +
                         " classes for " + std::to_string(gt.masks.size()) + " masks");
  }
  const std::size_t g_count = gt.classes.size();
  // The last logit column is "no object"; targets must use real classes.
  const std::size_t class_count =
      pred.class_logits.cols() ? pred.class_logits.cols() - 1 : 0;
  Matrix cost(q_count, g_count);
  for (std::size_t g = 0; g < g_count; ++g) {
    if (gt.classes[g] >= class_count) {
      throw DimensionError("match_cost: target class " + std::to_string(gt.classes[g]) +
                           " outside " + std::to_string(class_count) + " classes");
    }
  }
  for (std::size_t q = 0; q < q_count; ++q) {
    for (std::size_t g = 0; g < g_count; ++g) {
      check_same_shape(pred.mask_logits[q], gt.masks[g], "match_cost masks");
      const double cls = -logistic_scalar(pred.class_logits(q, gt.classes[g]));
      const double ce = sigmoid_ce(pred.mask_logits[q], gt.masks[g]);
      const double dice = dice_loss(logistic(pred.mask_logits[q]), gt.masks[g]);
      cost(q, g) =
          weights.lambda_cls * cls + weights.lambda_ce * ce + weights.lambda_dice * dice;
    }
  }
  return cost;
}

double sigmoid_ce(const Matrix& logits, const Matrix& targets) {
  check_same_shape(logits, targets, "sigmoid_ce");
  if (logits.size() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits.data()[i];
    const double t = targets.data()[i];
    sum += t * softplus(-x) + (1.0 - t) * softplus(x);
  }
  return sum / static_cast<double>(logits.size());
}

Matrix sigmoid_ce_grad(const Matrix& logits, const Matrix& targets) {
  check_same_shape(logits, targets, "sigmoid_ce_grad");
  Matrix grad(logits.rows(), logits.cols());
  const double n = static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    grad.data()[i] = (logistic_scalar(logits.data()[i]) - targets.data()[i]) / n;
  }
  return grad;
}

double dice_loss(const Matrix& probs, const Matrix& targets) {
  check_same_shape(probs, targets, "dice_loss");
  constexpr double kEps = 1.0;
  double inter = 0.0, psum = 0.0, gsum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs.data()[i];
    const double g = targets.data()[i];
    inter += p * g;
    psum += p;
    gsum += g;
  }
  return 1.0 - (2.0 * inter + kEps) / (psum + gsum + kEps);
}

double weighted_bce(const Matrix& probs, const Matrix& targets, double positive_weight) {
  check_same_shape(probs, targets, "weighted_bce");
  if (!(positive_weight > 0.0)) {
    throw NumericError("weighted_bce: positive_weight " + std::to_string(positive_weight) +
                       " must be > 0");
  }
  if (probs.size() == 0) return 0.0;
  constexpr double kClamp = 1e-7;
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs.data()[i], kClamp, 1.0 - kClamp);
    const double t = targets.data()[i];
    sum += -(positive_weight * t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
  }
  return sum / static_cast<double>(probs.size());
}

double default_positive_weight(const Matrix& targets) {
  double positives = 0.0;
  for (double t : targets.data()) positives += t;
  if (positives <= 0.0) return 1.0;
  return std::clamp(static_cast<double>(targets.size()) / positives, 1.0, 100.0);
}

double pair_loss(const Matrix& raw_scores, const Matrix& gt_links,
                 double positive_weight) {
  Matrix probs = raw_scores;
  for (double& v : probs.data()) v = (v + 1.0) / 2.0;
  return weighted_bce(probs, gt_links, positive_weight);
}

double info_nce(const Matrix& anchor, const Matrix& positive, const Matrix& negatives) {
  if (anchor.rows() != 1 || positive.rows() != 1) {
    throw DimensionError("info_nce: anchor and positive must be single rows, got (" +
                         anchor.shape_str() + ") and (" + positive.shape_str() + ")");
  }
  check_same_shape(anchor, positive, "info_nce anchor/positive");
  if (negatives.rows() > 0 && negatives.cols() != anchor.cols()) {
    throw DimensionError("info_nce: negatives (" + negatives.shape_str() +
                         ") do not match anchor (" + anchor.shape_str() + ")");
  }
  double s_pos = 0.0;
  for (std::size_t c = 0; c < anchor.cols(); ++c) s_pos += anchor(0, c) * positive(0, c);
  if (negatives.rows() == 0) return 0.0;

  // loss = log(1 + sum_i e^{d_i}), d_i = s_i^- - s^+. Shift by m = max(0, d)
  // so every exponent is <= 0.
  std::vector<double> d(negatives.rows());
  double m = 0.0;
  for (std::size_t i = 0; i < negatives.rows(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < anchor.cols(); ++c) s += anchor(0, c) * negatives(i, c);
    d[i] = s - s_pos;
    m = std::max(m, d[i]);
  }
  double sum = std::exp(-m);  // the "1 +" term
  for (double di : d) sum += std::exp(di - m);
  return m + std::log(sum);
}

double object_loss(const ObjectPredictions& pred, const ObjectTargets& gt,
                   const MatchAssignment& assignment, const LossWeights& weights) {
  const std::size_t q_count = pred.class_logits.rows();
  if (pred.class_logits.cols() == 0) {
    throw DimensionError("object_loss: class logits have no columns");
  }
  const std::size_t no_object = pred.class_logits.cols() - 1;
  std::vector<char> seen(q_count, 0);
  for (const auto& [q, g] : assignment.pairs) {
    if (q >= q_count || g >= gt.classes.size() || seen[q]) {
      throw std::invalid_argument("object_loss: inconsistent assignment");
    }
    seen[q] = 1;
  }
  for (std::size_t q : assignment.unmatched_queries) {
    if (q >= q_count || seen[q]) {
      throw std::invalid_argument("object_loss: inconsistent assignment");
    }
    seen[q] = 1;
  }
  if (!std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; })) {
    throw std::invalid_argument("object_loss: assignment does not cover every query");
  }
  if (q_count == 0) return 0.0;

  double sum = 0.0;
  for (const auto& [q, g] : assignment.pairs) {
    const double p_cls = logistic_scalar(pred.class_logits(q, gt.classes[g]));
    sum += weights.lambda_cls * -std::log(p_cls);
    sum += weights.lambda_ce * sigmoid_ce(pred.mask_logits[q], gt.masks[g]);
    sum += weights.lambda_dice * dice_loss(logistic(pred.mask_logits[q]), gt.masks[g]);
  }
  for (std::size_t q : assignment.unmatched_queries) {
    const double p_none = logistic_scalar(pred.class_logits(q, no_object));
    sum += weights.lambda_cls * weights.no_object_weight * -std::log(p_none);
  }
  return sum / static_cast<double>(q_count);
}

double relation_loss(const Matrix& logits, const std::vector<std::size_t>& gt_predicates) {
  if (logits.rows() != gt_predicates.size()) {
    throw DimensionError("relation_loss: " + std::to_string(gt_predicates.size()) +
                         " targets for " + std::to_string(logits.rows()) + " pairs");
  }
  if (logits.rows() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (gt_predicates[i] >= logits.cols()) {
      throw DimensionError("relation_loss: predicate index " +
                           std::to_string(gt_predicates[i]) + " outside " +
                           std::to_string(logits.cols()) + " predicates");
    }
    // -log softmax via the shifted log-sum-exp.
    double mx = -kInf;
    for (std::size_t j = 0; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j));
    double lse = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) lse += std::exp(logits(i, j) - mx);
    sum += mx + std::log(lse) - logits(i, gt_predicates[i]);
  }
  return sum / static_cast<double>(logits.rows());
}

LossReport total_loss(double object_l, double association_l, double relation_l,
                      double consistency_l, const LossWeights& weights) {
  LossReport r;
  r.object_loss = object_l;
  r.association_loss = association_l;
  r.relation_loss = relation_l;
  r.consistency_loss = consistency_l;
  r.total = weights.alpha * object_l + weights.beta * association_l +
            weights.gamma * relation_l + weights.eta * consistency_l;
  if (std::isnan(r.total)) throw NumericError("total_loss: NaN");
  return r;
}

std::string serialize_loss_report(const LossReport& report) {
  nlohmann::json j;
  j["association"] = report.association_loss;
  j["consistency"] = report.consistency_loss;
  j["object"] = report.object_loss;
  j["relation"] = report.relation_loss;
  j["total"] = report.total;
  return j.dump(2) + "\n";
}

}  // namespace usg
