#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "usg/graph.hpp"
#include "usg/matrix.hpp"

namespace usg {

/// One scored (subject, predicate, object) statement, optionally grounded by
/// masks. Ground-truth triplets leave score at its default.
struct Triplet {
  std::string subject;
  std::string predicate;
  std::string object;
  double score = 0.0;
  std::optional<MaskRegion> subject_mask;
  std::optional<MaskRegion> object_mask;
};

struct EvalSample {
  std::string id;
  std::vector<Triplet> predictions;
  std::vector<Triplet> ground_truth;
};

struct EvalOptions {
  double iou_threshold = 0.5;
  bool labels_only = false;  // ignore masks even when present
};

struct MetricReport {
  std::string metric;  // "R@K", "mR@K", "set_match", "triple_f1"
  std::size_t k = 0;   // 0 when the metric has no cutoff
  double value = 0.0;  // fraction in [0, 1]
  std::map<std::string, double> per_predicate;  // mR@K breakdown, else empty
};

/// Label equality on all three slots; when the ground truth is grounded (and
/// labels_only is off), each grounded side also needs IoU >= threshold from
/// the prediction's mask.
bool triplet_hit(const Triplet& pred, const Triplet& gt, const EvalOptions& options);

/// Fraction of ground-truth triplets matched by the k highest-scoring
/// predictions (ties broken by input order), greedily consuming each matched
/// target once. Empty ground truth has no defined recall.
std::optional<double> recall_at_k(const std::vector<Triplet>& predictions,
                                  const std::vector<Triplet>& ground_truth, std::size_t k,
                                  const EvalOptions& options);

/// Mean of recall_at_k over the samples where it is defined; 0 when none.
MetricReport split_recall_at_k(const std::vector<EvalSample>& samples, std::size_t k,
                               const EvalOptions& options);

/// Per-predicate recall over the whole split (same greedy matching), averaged
/// over the predicate classes that occur in the ground truth.
MetricReport mean_recall_at_k(const std::vector<EvalSample>& samples, std::size_t k,
                              const EvalOptions& options);

/// Exact equality of the two label-triple sets (masks and scores ignored).
bool set_match(const std::vector<Triplet>& predictions,
               const std::vector<Triplet>& ground_truth);

MetricReport split_set_match(const std::vector<EvalSample>& samples);

/// F1 between the label-triple sets; both empty scores 1, exactly one empty
/// scores 0.
double triple_f1(const std::vector<Triplet>& predictions,
                 const std::vector<Triplet>& ground_truth);

MetricReport split_triple_f1(const std::vector<EvalSample>& samples);

/// Per-row top-k retrieval accuracy of the link matrix: a row with at least
/// one positive counts as correct when any positive appears among its k
/// highest-scoring columns (ties to the smaller column). Undefined when no
/// row has a positive.
std::optional<double> association_accuracy_at_k(const Matrix& scores,
                                                const Matrix& gt_links, std::size_t k);

/// Parses {"samples": [{"id", "triplets": [...]}]}.
std::vector<std::pair<std::string, std::vector<Triplet>>> parse_triplet_file(
    const std::string& text);

/// Joins a prediction file with a ground-truth file; the id sets must match
/// exactly. Output is sorted by id.
std::vector<EvalSample> pair_samples(
    const std::vector<std::pair<std::string, std::vector<Triplet>>>& predictions,
    const std::vector<std::pair<std::string, std::vector<Triplet>>>& ground_truth);

/// Renders reports as JSON in the given order, values scaled x100 and printed
/// with exactly two decimals.
std::string render_metric_reports(const std::vector<MetricReport>& reports);

}  // namespace usg
