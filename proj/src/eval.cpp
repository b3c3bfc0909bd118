#include "usg/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <tuple>

#include "json_detail.hpp"

namespace usg {

namespace {

using LabelTriple = std::tuple<std::string, std::string, std::string>;

LabelTriple labels_of(const Triplet& t) { return {t.subject, t.predicate, t.object}; }

std::set<LabelTriple> label_set(const std::vector<Triplet>& triplets) {
  std::set<LabelTriple> out;
  for (const auto& t : triplets) out.insert(labels_of(t));
  return out;
}

/// Prediction indices ordered by (score desc, input order asc), cut at k.
std::vector<std::size_t> ranked_prefix(const std::vector<Triplet>& predictions,
                                       std::size_t k) {
  std::vector<std::size_t> order(predictions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].score > predictions[b].score;
  });
  if (order.size() > k) order.resize(k);
  return order;
}

/// Greedy top-k matching; returns one flag per ground-truth triplet.
std::vector<char> consume_gts(const std::vector<Triplet>& predictions,
                              const std::vector<Triplet>& ground_truth, std::size_t k,
                              const EvalOptions& options) {
  std::vector<char> hit(ground_truth.size(), 0);
  for (std::size_t p : ranked_prefix(predictions, k)) {
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (hit[g]) continue;
      if (triplet_hit(predictions[p], ground_truth[g], options)) {
        hit[g] = 1;
        break;
      }
    }
  }
  return hit;
}

}  // namespace

bool triplet_hit(const Triplet& pred, const Triplet& gt, const EvalOptions& options) {
  if (labels_of(pred) != labels_of(gt)) return false;
  if (options.labels_only) return true;
  // The ground truth defines the protocol: grounded targets demand grounded,
  // overlapping predictions; ungrounded targets match on labels alone.
  const std::pair<const std::optional<MaskRegion>*, const std::optional<MaskRegion>*>
      sides[2] = {{&gt.subject_mask, &pred.subject_mask},
                  {&gt.object_mask, &pred.object_mask}};
  for (const auto& [gt_mask, pred_mask] : sides) {
    if (!gt_mask->has_value()) continue;
    if (!pred_mask->has_value()) return false;
    if (mask_iou(**pred_mask, **gt_mask) < options.iou_threshold) return false;
  }
  return true;
}

std::optional<double> recall_at_k(const std::vector<Triplet>& predictions,
                                  const std::vector<Triplet>& ground_truth, std::size_t k,
                                  const EvalOptions& options) {
  if (ground_truth.empty()) return std::nullopt;
  if (k == 0) return 0.0;
  const std::vector<char> hit = consume_gts(predictions, ground_truth, k, options);
  const std::size_t hits = std::count(hit.begin(), hit.end(), char{1});
  return static_cast<double>(hits) / static_cast<double>(ground_truth.size());
}

MetricReport split_recall_at_k(const std::vector<EvalSample>& samples, std::size_t k,
                               const EvalOptions& options) {
  double sum = 0.0;
  std::size_t defined = 0;
  for (const auto& s : samples) {
    if (auto r = recall_at_k(s.predictions, s.ground_truth, k, options)) {
      sum += *r;
      ++defined;
    }
  }
  MetricReport report;
  report.metric = "R@K";
  report.k = k;
  report.value = defined ? sum / static_cast<double>(defined) : 0.0;
  return report;
}

MetricReport mean_recall_at_k(const std::vector<EvalSample>& samples, std::size_t k,
                              const EvalOptions& options) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // hits, totals
  for (const auto& s : samples) {
    if (s.ground_truth.empty()) continue;
    const std::vector<char> hit = consume_gts(s.predictions, s.ground_truth, k, options);
    for (std::size_t g = 0; g < s.ground_truth.size(); ++g) {
      auto& [hits, total] = tally[s.ground_truth[g].predicate];
      hits += hit[g] ? 1 : 0;
      total += 1;
    }
  }
  MetricReport report;
  report.metric = "mR@K";
  report.k = k;
  double sum = 0.0;
  for (const auto& [predicate, counts] : tally) {
    const double recall =
        static_cast<double>(counts.first) / static_cast<double>(counts.second);
    report.per_predicate[predicate] = recall;
    sum += recall;
  }
  report.value = tally.empty() ? 0.0 : sum / static_cast<double>(tally.size());
  return report;
}

bool set_match(const std::vector<Triplet>& predictions,
               const std::vector<Triplet>& ground_truth) {
  return label_set(predictions) == label_set(ground_truth);
}

MetricReport split_set_match(const std::vector<EvalSample>& samples) {
  std::size_t matched = 0;
  for (const auto& s : samples) matched += set_match(s.predictions, s.ground_truth);
  MetricReport report;
  report.metric = "set_match";
  report.value =
      samples.empty() ? 0.0 : static_cast<double>(matched) / static_cast<double>(samples.size());
  return report;
}

double triple_f1(const std::vector<Triplet>& predictions,
                 const std::vector<Triplet>& ground_truth) {
  const auto pred = label_set(predictions);
  const auto gt = label_set(ground_truth);
  if (pred.empty() && gt.empty()) return 1.0;
  if (pred.empty() || gt.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& t : pred) inter += gt.count(t);
  const double precision = static_cast<double>(inter) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(inter) / static_cast<double>(gt.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

MetricReport split_triple_f1(const std::vector<EvalSample>& samples) {
  double sum = 0.0;
  for (const auto& s : samples) sum += triple_f1(s.predictions, s.ground_truth);
  MetricReport report;
  report.metric = "triple_f1";
  report.value = samples.empty() ? 0.0 : sum / static_cast<double>(samples.size());
  return report;
}

std::optional<double> association_accuracy_at_k(const Matrix& scores,
                                                const Matrix& gt_links, std::size_t k) {
  if (!scores.same_shape(gt_links)) {
    throw DimensionError("association_accuracy_at_k: scores (" + scores.shape_str() +
                         ") vs links (" + gt_links.shape_str() + ")");
  }
  std::size_t eligible = 0, correct = 0;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    bool has_positive = false;
    for (std::size_t j = 0; j < scores.cols(); ++j) {
      if (gt_links(i, j) != 0.0) {
        has_positive = true;
        break;
      }
    }
    if (!has_positive) continue;
    ++eligible;
    std::vector<std::size_t> cols(scores.cols());
    for (std::size_t j = 0; j < cols.size(); ++j) cols[j] = j;
    std::stable_sort(cols.begin(), cols.end(), [&](std::size_t a, std::size_t b) {
      return scores(i, a) > scores(i, b);
    });
    const std::size_t take = std::min(k, cols.size());
    for (std::size_t t = 0; t < take; ++t) {
      if (gt_links(i, cols[t]) != 0.0) {
        ++correct;
        break;
      }
    }
  }
  if (eligible == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(eligible);
}

std::vector<std::pair<std::string, std::vector<Triplet>>> parse_triplet_file(
    const std::string& text) {
  using nlohmann::json;
  const json j = detail::must_parse(text);
  std::vector<std::string> out;
  const json* samples = detail::get_field(j, "samples");
  if (!samples || !samples->is_array()) {
    detail::fail({"top level must be {\"samples\": [...]}"});
  }
  std::vector<std::pair<std::string, std::vector<Triplet>>> parsed;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < samples->size(); ++i) {
    const std::string ctx = "samples[" + std::to_string(i) + "]";
    const json& s = (*samples)[i];
    if (!s.is_object()) {
      out.push_back(ctx + ": must be an object");
      continue;
    }
    const std::string id = detail::req_string(s, "id", ctx, out);
    if (!id.empty() && !ids.insert(id).second) {
      out.push_back(ctx + ": duplicate sample id '" + id + "'");
    }
    std::vector<Triplet> triplets;
    const json* arr = detail::get_field(s, "triplets");
    if (!arr || !arr->is_array()) {
      out.push_back(ctx + ": missing 'triplets' array");
    } else {
      for (std::size_t t = 0; t < arr->size(); ++t) {
        const std::string tctx = ctx + ".triplets[" + std::to_string(t) + "]";
        const json& raw = (*arr)[t];
        if (!raw.is_object()) {
          out.push_back(tctx + ": must be an object");
          continue;
        }
        Triplet triplet;
        triplet.subject = detail::req_string(raw, "subject", tctx, out);
        triplet.predicate = detail::req_string(raw, "predicate", tctx, out);
        triplet.object = detail::req_string(raw, "object", tctx, out);
        if (detail::get_field(raw, "score")) {
          triplet.score = detail::req_number(raw, "score", tctx, out);
        }
        if (const json* m = detail::get_field(raw, "subject_mask")) {
          if (auto region = detail::mask_from_json(*m, tctx + ".subject_mask", out))
            triplet.subject_mask = std::move(*region);
        }
        if (const json* m = detail::get_field(raw, "object_mask")) {
          if (auto region = detail::mask_from_json(*m, tctx + ".object_mask", out))
            triplet.object_mask = std::move(*region);
        }
        triplets.push_back(std::move(triplet));
      }
    }
    parsed.push_back({id, std::move(triplets)});
  }
  if (!out.empty()) detail::fail(std::move(out));
  return parsed;
}

std::vector<EvalSample> pair_samples(
    const std::vector<std::pair<std::string, std::vector<Triplet>>>& predictions,
    const std::vector<std::pair<std::string, std::vector<Triplet>>>& ground_truth) {
  std::vector<std::string> out;
  std::map<std::string, const std::vector<Triplet>*> gt_by_id;
  for (const auto& [id, triplets] : ground_truth) gt_by_id[id] = &triplets;
  std::map<std::string, EvalSample> joined;
  for (const auto& [id, triplets] : predictions) {
    auto it = gt_by_id.find(id);
    if (it == gt_by_id.end()) {
      out.push_back("prediction sample '" + id + "' has no ground-truth sample");
      continue;
    }
    joined[id] = {id, triplets, *it->second};
    gt_by_id.erase(it);
  }
  for (const auto& [id, triplets] : gt_by_id) {
    (void)triplets;
    out.push_back("ground-truth sample '" + id + "' has no prediction sample");
  }
  if (!out.empty()) detail::fail(std::move(out));
  std::vector<EvalSample> result;
  result.reserve(joined.size());
  for (auto& [id, sample] : joined) {
    (void)id;
    result.push_back(std::move(sample));
  }
  return result;
}

namespace {

std::string escape_json(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out.push_back(c);
        }
    }
  }
  return out;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

}  // namespace

std::string render_metric_reports(const std::vector<MetricReport>& reports) {
  // Metric values must print with exactly two decimals (12.50, not 12.5),
  // hence this fixed-format writer instead of a generic JSON dumper.
  std::string out = "{\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const MetricReport& r = reports[i];
    std::string key = r.metric;
    const auto cut = key.find("@K");
    if (cut != std::string::npos) key = key.substr(0, cut + 1) + std::to_string(r.k);
    out += "  \"" + escape_json(key) + "\": ";
    if (r.metric == "mR@K") {
      out += "{\n    \"mean\": " + percent(r.value) + ",\n    \"per_predicate\": {";
      std::size_t n = 0;
      for (const auto& [predicate, recall] : r.per_predicate) {
        out += n++ ? ",\n      " : "\n      ";
        out += "\"" + escape_json(predicate) + "\": " + percent(recall);
      }
      out += n ? "\n    }\n  }" : "}\n  }";
    } else {
      out += percent(r.value);
    }
    out += i + 1 < reports.size() ? ",\n" : "\n";
  }
  out += "}\n";
  return out;
}

}  // namespace usg
