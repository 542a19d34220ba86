#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "proplab/box.hpp"

namespace proplab {

// Greedy NMS. Candidates are visited in score order (ties go to the lower
// original index); a candidate is dropped when its IoU with an already kept
// box exceeds iou_threshold. Output is kept-order, i.e. descending score.
std::vector<ScoredBox> nms(std::span<const ScoredBox> boxes,
                           double iou_threshold);

// Replaces kept's coordinates with the score-weighted mean of itself plus
// every pool box whose IoU with it is >= vote_iou. The score is untouched.
ScoredBox box_vote(const ScoredBox& kept, std::span<const ScoredBox> pool,
                   double vote_iou);

// NMS, then each survivor's coordinates are voted on by the suppressed boxes.
// vote_iou <= 0 reuses nms_iou.
std::vector<ScoredBox> nms_with_voting(std::span<const ScoredBox> boxes,
                                       double nms_iou, double vote_iou = 0.0);

// Proposal-set union across augmentation runs: concatenate (run order, then
// within-run order), NMS once over the union, keep the top_n best.
std::vector<ScoredBox> merge_rpn(const std::vector<std::vector<ScoredBox>>& runs,
                                 double nms_iou, int top_n);

// Per-proposal output of the recognition stage for one augmentation run.
struct FrcnDetection {
  std::vector<double> class_scores;
  Box box;
  double objectness = 0.0;
};

// Index-aligned elementwise mean across runs: class scores, objectness and
// box coordinates are all averaged. Ragged run lengths or score widths throw.
std::vector<FrcnDetection> merge_frcn(
    const std::vector<std::vector<FrcnDetection>>& runs);

// Strictly positive per-class multiplier applied to classification scores.
class ContextPrior {
 public:
  explicit ContextPrior(std::vector<double> weights);

  const std::vector<double>& weights() const { return weights_; }
  // true when every weight is exactly 1, i.e. applying it is a no-op
  bool is_identity() const;

 private:
  std::vector<double> weights_;
};

// scores * prior, renormalized to sum to 1.
std::vector<double> apply_context_prior(std::span<const double> class_scores,
                                        const ContextPrior& prior);

// Detection-stage NMS thresholds that work well per benchmark family.
enum class NmsPreset { kImagenet, kVoc, kCoco, kClassic };

double nms_threshold(NmsPreset preset);
NmsPreset parse_nms_preset(std::string_view name);
std::string_view to_string(NmsPreset preset);

enum class MergeMode { kUnionNms, kAverage };

// How augmentation runs are combined: proposal sets take the NMS'd union,
// recognition outputs are averaged.
struct MergePolicy {
  MergeMode mode = MergeMode::kUnionNms;
  double nms_iou = 0.7;
  double vote_iou = 0.0;  // <= 0: follow nms_iou
  std::vector<double> scales;
  bool flip = false;
};

}  // namespace proplab
