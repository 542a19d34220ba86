#include "proplab/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>
#include <stdexcept>

namespace proplab {

namespace {

std::vector<int> top_budget_order(std::span<const ScoredBox> proposals,
                                  int budget) {
  std::vector<int> order(proposals.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return proposals[a].score > proposals[b].score;
  });
  if (static_cast<int>(order.size()) > budget) order.resize(budget);
  return order;
}

std::string format_metric(const char* name, double value) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s %.6f\n", name, value);
  return buf;
}

}  // namespace

std::vector<double> best_iou_per_gt(std::span<const ScoredBox> proposals,
                                    std::span<const Box> gts, int budget) {
  if (budget <= 0) throw std::invalid_argument("best_iou_per_gt: budget must be > 0");
  const auto order = top_budget_order(proposals, budget);
  std::vector<double> best(gts.size(), 0.0);
  for (std::size_t g = 0; g < gts.size(); ++g)
    for (int i : order) best[g] = std::max(best[g], iou(proposals[i].box, gts[g]));
  return best;
}

double proposal_recall(std::span<const ScoredBox> proposals,
                       std::span<const Box> gts, double iou_threshold,
                       int budget) {
  if (!(iou_threshold > 0.0) || !(iou_threshold <= 1.0))
    throw std::invalid_argument("proposal_recall: iou_threshold must be in (0, 1]");
  if (gts.empty()) return 1.0;  // vacuously covered
  const auto best = best_iou_per_gt(proposals, gts, budget);
  const auto covered = std::count_if(best.begin(), best.end(),
                                     [&](double v) { return v >= iou_threshold; });
  return static_cast<double>(covered) / static_cast<double>(gts.size());
}

double average_recall(std::span<const ScoredBox> proposals,
                      std::span<const Box> gts, int budget) {
  if (gts.empty()) return 1.0;
  const auto best = best_iou_per_gt(proposals, gts, budget);
  double acc = 0.0;
  for (double t : kArThresholds) {
    const auto covered = std::count_if(best.begin(), best.end(),
                                       [&](double v) { return v >= t; });
    acc += static_cast<double>(covered) / static_cast<double>(gts.size());
  }
  return acc / static_cast<double>(kArThresholds.size());
}

MatchResult match_class_detections(
    const std::vector<std::vector<ScoredBox>>& dets_by_image,
    const std::vector<std::vector<GtBox>>& gts_by_image, int class_id,
    double iou_threshold) {
  if (dets_by_image.size() != gts_by_image.size())
    throw std::invalid_argument(
        "match_class_detections: detection/gt image counts differ");
  if (!(iou_threshold > 0.0) || !(iou_threshold <= 1.0))
    throw std::invalid_argument(
        "match_class_detections: iou_threshold must be in (0, 1]");

  MatchResult result;
  for (const auto& gts : gts_by_image)
    for (const GtBox& g : gts)
      if (g.class_id == class_id && !g.difficult) ++result.n_positive;

  for (std::size_t img = 0; img < dets_by_image.size(); ++img)
    for (std::size_t d = 0; d < dets_by_image[img].size(); ++d)
      if (dets_by_image[img][d].class_id == class_id)
        result.detections.push_back({static_cast<int>(img), static_cast<int>(d),
                                     dets_by_image[img][d].score, false, false,
                                     -1});

  // score-descending; ties by (image, detection index) for reproducibility
  std::stable_sort(result.detections.begin(), result.detections.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });

  std::vector<std::vector<char>> used(gts_by_image.size());
  for (std::size_t img = 0; img < gts_by_image.size(); ++img)
    used[img].assign(gts_by_image[img].size(), 0);

  for (auto& rec : result.detections) {
    const auto& gts = gts_by_image[rec.image];
    const Box& det_box = dets_by_image[rec.image][rec.det].box;
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].class_id != class_id) continue;
      const double v = iou(det_box, gts[g].box);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best >= iou_threshold) {
      if (gts[best_gt].difficult) {
        rec.ignored = true;  // neither credit nor penalty
      } else if (!used[rec.image][best_gt]) {
        used[rec.image][best_gt] = 1;
        rec.tp = true;
        rec.gt = best_gt;
      }
      // else: duplicate hit on an already-claimed gt, counts as fp
    }
  }
  return result;
}

double ap_from_matches(const MatchResult& matches) {
  if (matches.n_positive <= 0)
    throw std::invalid_argument("ap_from_matches: no positive gts for class");

  std::vector<double> recall, precision;
  int tp = 0, fp = 0;
  for (const auto& rec : matches.detections) {
    if (rec.ignored) continue;
    rec.tp ? ++tp : ++fp;
    recall.push_back(static_cast<double>(tp) / matches.n_positive);
    precision.push_back(static_cast<double>(tp) / (tp + fp));
  }
  if (recall.empty()) return 0.0;

  // all-point interpolation: walk from the right, keep precision monotone,
  // integrate over recall steps; the tail past the last point contributes 0
  double ap = 0.0;
  double run_max = 0.0;
  for (int i = static_cast<int>(recall.size()) - 1; i >= 0; --i) {
    run_max = std::max(run_max, precision[i]);
    const double r_lo = i > 0 ? recall[i - 1] : 0.0;
    ap += (recall[i] - r_lo) * run_max;
  }
  return ap;
}

ApResult evaluate_detections(
    const std::vector<std::vector<ScoredBox>>& dets_by_image,
    const std::vector<std::vector<GtBox>>& gts_by_image, double iou_threshold) {
  std::set<int> gt_classes, det_classes;
  for (const auto& gts : gts_by_image)
    for (const GtBox& g : gts)
      if (!g.difficult) gt_classes.insert(g.class_id);
  for (const auto& dets : dets_by_image)
    for (const ScoredBox& d : dets)
      if (d.class_id != kNoClass) det_classes.insert(d.class_id);

  ApResult out;
  for (int c : gt_classes) {
    const MatchResult m =
        match_class_detections(dets_by_image, gts_by_image, c, iou_threshold);
    out.per_class[c] = ap_from_matches(m);
  }
  for (int c : det_classes)
    if (!gt_classes.count(c))
      out.notes.push_back("class " + std::to_string(c) +
                          " has detections but no ground truth; excluded from mAP");

  if (out.per_class.empty()) {
    out.notes.push_back("no class has ground truth; mAP undefined, reported as 0");
    return out;
  }
  double sum = 0.0;
  for (const auto& [c, ap] : out.per_class) sum += ap;
  out.map = sum / static_cast<double>(out.per_class.size());
  return out;
}

std::string report_key_values(const EvalReport& report) {
  std::string out;
  char name[64];
  for (const auto& [t, v] : report.recall_at) {
    std::snprintf(name, sizeof name, "Recall@%.2f", t);
    out += format_metric(name, v);
  }
  out += format_metric("AR", report.average_recall);
  for (const auto& [t, v] : report.map_at) {
    std::snprintf(name, sizeof name, "mAP@%.2f", t);
    out += format_metric(name, v);
  }
  for (const auto& [c, v] : report.per_class_ap) {
    std::snprintf(name, sizeof name, "AP[%d]", c);
    out += format_metric(name, v);
  }
  out += "proposal_budget " + std::to_string(report.proposal_budget) + "\n";
  return out;
}

}  // namespace proplab
