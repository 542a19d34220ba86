#pragma once

#include <span>
#include <vector>

#include "proplab/anchors.hpp"
#include "proplab/box.hpp"

namespace proplab {

struct ScorerOutput {
  double objectness = 0.0;  // in [0, 1]
  RegressionDelta delta;
};

// Anything that can judge a batch of reference boxes: one objectness score
// and one box refinement per input, index-aligned. Implementations must be
// const-callable from several threads at once.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<ScorerOutput> score_and_regress(
      std::span<const Box> references) const = 0;
};

struct Proposal {
  Box box;
  double objectness = 0.0;
  int parent_anchor = -1;
  int stage = 1;
};

enum class FusionMode { kSizeSplit, kStage1Only, kStage2Only };

// Which stage's box area decides the size split.
enum class SizeKey { kStage1Box, kStage2Box };

struct CascadeConfig {
  bool enabled = true;
  FusionMode fusion = FusionMode::kSizeSplit;
  double size_threshold_area = 64.0 * 64.0;
  SizeKey size_key = SizeKey::kStage1Box;
  double nms_iou = 0.7;
  int pre_nms_top_n = 6000;  // 0 disables the pre-NMS cut
  int proposal_budget = 300;
};

// First refinement pass: every anchor becomes exactly one proposal, decoded
// against its anchor and clipped to the image. No sorting, no NMS, no
// truncation here; later stages rely on the index alignment.
std::vector<Proposal> stage1(std::span<const Anchor> anchors,
                             const Scorer& scorer, double image_w,
                             double image_h);

// Second pass: proposal i is re-scored and re-regressed against stage-1 box i
// (anchors only anchor the index alignment and bookkeeping). Zero-area
// stage-1 boxes are widened to one pixel before use so the delta encoding
// stays defined. Stage-2 objectness replaces stage-1 objectness.
std::vector<Proposal> stage2(std::span<const Proposal> stage1_out,
                             std::span<const Anchor> anchors,
                             const Scorer& scorer, double image_w,
                             double image_h);

// Per-index pick: the stage-1 proposal where the key box's area is below
// threshold_area, the stage-2 proposal otherwise. Outputs are verbatim copies
// of the inputs, never blends.
std::vector<Proposal> fuse_by_size(std::span<const Proposal> s1,
                                   std::span<const Proposal> s2,
                                   double threshold_area,
                                   SizeKey key = SizeKey::kStage1Box);

// Score-sorted NMS + budget cut that turns a dense proposal field into the
// final candidate list. pre_nms_top_n > 0 drops everything below that rank
// before NMS (big speedup, standard practice).
std::vector<ScoredBox> finalize_proposals(std::span<const Proposal> proposals,
                                          double nms_iou, int top_n,
                                          int pre_nms_top_n = 0);

}  // namespace proplab
