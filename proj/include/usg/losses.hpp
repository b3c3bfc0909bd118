#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "usg/matrix.hpp"

namespace usg {

/// Bipartite assignment between prediction rows and ground-truth columns.
/// pairs is injective both ways and always has min(rows, cols) entries;
/// unmatched_queries lists the left-over rows. Together they cover every row.
struct MatchAssignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (query, target)
  std::vector<std::size_t> unmatched_queries;
};

struct LossWeights {
  double lambda_cls = 2.0;
  double no_object_weight = 0.1;  // scales lambda_cls on unmatched queries
  double lambda_ce = 5.0;
  double lambda_dice = 5.0;
  double alpha = 1.0;  // object term
  double beta = 1.0;   // association term
  double gamma = 0.8;  // relation term
  double eta = 0.6;    // consistency term
};

struct ObjectPredictions {
  Matrix class_logits;              // Q x (C+1); last column means "no object"
  std::vector<Matrix> mask_logits;  // one grid per query, all the same shape
};

struct ObjectTargets {
  std::vector<std::size_t> classes;  // values in [0, C)
  std::vector<Matrix> masks;         // binary grids matching mask_logits shape
};

struct LossReport {
  double object_loss = 0.0;
  double association_loss = 0.0;
  double relation_loss = 0.0;
  double consistency_loss = 0.0;
  double total = 0.0;
};

/// Exact minimum-cost assignment. Rectangular inputs are zero-padded square
/// internally and the padding matches discarded. NaN costs raise NumericError.
MatchAssignment hungarian_match(const Matrix& cost);

/// Q x G matching cost:
///   lambda_cls * (-sigmoid(class logit of the target's class))
/// + lambda_ce  * sigmoid_ce(mask logits, target mask)
/// + lambda_dice* dice_loss(sigmoid(mask logits), target mask)
/// Empty targets give a Q x 0 matrix (every query unmatched).
Matrix match_cost(const ObjectPredictions& pred, const ObjectTargets& gt,
                  const LossWeights& weights);

/// Mean elementwise binary cross-entropy on logits, in the overflow-safe form
///   t*softplus(-x) + (1-t)*softplus(x).
double sigmoid_ce(const Matrix& logits, const Matrix& targets);

/// d sigmoid_ce / d logits = (sigmoid(x) - t) / count.
Matrix sigmoid_ce_grad(const Matrix& logits, const Matrix& targets);

/// 1 - (2*sum(p*g) + 1) / (sum(p) + sum(g) + 1), on probabilities.
double dice_loss(const Matrix& probs, const Matrix& targets);

/// Mean BCE on probabilities with positives scaled by positive_weight;
/// probabilities are clamped to [1e-7, 1 - 1e-7] first.
double weighted_bce(const Matrix& probs, const Matrix& targets, double positive_weight);

/// entries / positives, clamped to [1, 100]; 1 when there are no positives.
double default_positive_weight(const Matrix& targets);

/// Association loss: raw cosine scores in [-1, 1] map to probabilities via
/// (c + 1) / 2, then weighted BCE against the 0/1 link matrix.
double pair_loss(const Matrix& raw_scores, const Matrix& gt_links,
                 double positive_weight);

/// Contrastive consistency term for one anchor:
///   log(1 + sum_i exp(s_i^- - s^+))
/// with s^+ = anchor . positive and s_i^- = anchor . negatives[i]. Zero when
/// there are no negatives. Computed in a log-sum-exp form that cannot
/// overflow.
double info_nce(const Matrix& anchor, const Matrix& positive, const Matrix& negatives);

/// Per-query mean: matched queries pay the class term on their target's class
/// plus both mask terms; unmatched queries pay the down-weighted class term on
/// the "no object" column.
double object_loss(const ObjectPredictions& pred, const ObjectTargets& gt,
                   const MatchAssignment& assignment, const LossWeights& weights);

/// Mean softmax cross-entropy of each pair's predicate logits against its
/// ground-truth predicate index.
double relation_loss(const Matrix& logits, const std::vector<std::size_t>& gt_predicates);

/// total = alpha*object + beta*association + gamma*relation + eta*consistency.
LossReport total_loss(double object_l, double association_l, double relation_l,
                      double consistency_l, const LossWeights& weights);

/// Canonical JSON rendering of a report (sorted keys, full precision).
std::string serialize_loss_report(const LossReport& report);

}  // namespace usg
