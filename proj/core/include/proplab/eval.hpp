#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "proplab/box.hpp"

namespace proplab {

// Annotated object. Difficult objects are neither required nor penalized by
// the detection metrics.
struct GtBox {
  Box box;
  int class_id = 0;
  bool difficult = false;
};

// IoU grid used by the averaged-recall metric.
inline constexpr std::array<double, 10> kArThresholds = {
    0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};

// Best IoU each gt reaches against the `budget` highest-scoring proposals
// (ties in score keep the earlier proposal).
std::vector<double> best_iou_per_gt(std::span<const ScoredBox> proposals,
                                    std::span<const Box> gts, int budget);

// Fraction of gts covered by at least one of the top-`budget` proposals at
// IoU >= iou_threshold. An image without gts counts as fully recalled.
double proposal_recall(std::span<const ScoredBox> proposals,
                       std::span<const Box> gts, double iou_threshold,
                       int budget);

// Mean of proposal_recall over kArThresholds.
double average_recall(std::span<const ScoredBox> proposals,
                      std::span<const Box> gts, int budget);

// Greedy score-ordered matching of one class's detections against gts.
struct MatchResult {
  struct DetRecord {
    int image = -1;
    int det = -1;  // index into that image's detection list
    double score = 0.0;
    bool tp = false;
    bool ignored = false;  // matched a difficult gt
    int gt = -1;           // matched gt index, -1 for unmatched
  };
  std::vector<DetRecord> detections;  // evaluation (descending score) order
  int n_positive = 0;                 // non-difficult gts of this class
};

MatchResult match_class_detections(
    const std::vector<std::vector<ScoredBox>>& dets_by_image,
    const std::vector<std::vector<GtBox>>& gts_by_image, int class_id,
    double iou_threshold);

// Area under the precision/recall curve with the monotone (all-point)
// interpolation. 0 when the class has detections but none are correct.
double ap_from_matches(const MatchResult& matches);

struct ApResult {
  std::map<int, double> per_class;  // classes with >= 1 non-difficult gt
  double map = 0.0;                 // unweighted mean of per_class
  std::vector<std::string> notes;   // e.g. classes skipped for lack of gts
};

ApResult evaluate_detections(
    const std::vector<std::vector<ScoredBox>>& dets_by_image,
    const std::vector<std::vector<GtBox>>& gts_by_image, double iou_threshold);

// Everything one experiment run reports.
struct EvalReport {
  std::map<double, double> recall_at;
  double average_recall = 0.0;
  std::map<int, double> per_class_ap;  // at the first mAP threshold
  std::map<double, double> map_at;
  int proposal_budget = 0;
  std::vector<std::string> notes;
};

// Flat "name value" lines, one metric per line, fixed 6-decimal formatting.
std::string report_key_values(const EvalReport& report);

}  // namespace proplab
