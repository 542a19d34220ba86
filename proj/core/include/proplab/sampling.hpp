#pragma once

#include <span>
#include <vector>

#include "proplab/anchors.hpp"
#include "proplab/box.hpp"
#include "proplab/rng.hpp"

namespace proplab {

// Anchor/ground-truth assignment for one image.
struct AnchorLabeling {
  std::vector<int> positives;   // ascending anchor indices
  std::vector<int> negatives;   // ascending anchor indices
  std::vector<double> max_iou;  // per anchor, best IoU against any gt
  std::vector<int> matched_gt;  // per anchor, argmax gt index or -1
};

// An anchor is positive when its best IoU reaches pos_iou, or when it is an
// argmax anchor for some gt (ties included, so every gt keeps at least one
// positive). Negatives are anchors below neg_iou that are not positive;
// everything in between is ignored.
AnchorLabeling label_anchors(std::span<const Anchor> anchors,
                             std::span<const Box> gts, double pos_iou = 0.7,
                             double neg_iou = 0.3);

struct NPConfig {
  int batch_size = 256;
  double max_np_ratio = 1.5;
  int min_batch_size = 32;
};

struct BatchSample {
  std::vector<int> pos;
  std::vector<int> neg;
  // min_batch_size floor pushed |neg| past floor(|pos| * max_np_ratio)
  bool floor_bound = false;

  bool empty() const { return pos.empty() && neg.empty(); }
  double np_ratio() const;
};

// Batch with the negative count tied to the positive count:
//   |pos| = min(#positives, batch_size / 2)
//   |neg| = max(floor(|pos| * max_np_ratio), min_batch_size - |pos|)
// capped by availability and by batch_size - |pos|. Selection is uniform
// without replacement. No positives and no negatives yields an empty batch.
BatchSample constrained_np_sample(const AnchorLabeling& labeling,
                                  const NPConfig& cfg, Rng& rng);

// Conventional batch filling: up to batch_size/2 positives, negatives top the
// batch up to batch_size regardless of the resulting ratio. Baseline for
// measuring what the constrained variant buys.
BatchSample naive_np_sample(const AnchorLabeling& labeling, const NPConfig& cfg,
                            Rng& rng);

// Image sampler that draws a class uniformly (among classes that have
// images), then an image uniformly within that class. Long-tailed corpora
// therefore surface rare classes as often as frequent ones.
class BalancedSampler {
 public:
  // images_by_class[c] lists the image indices containing class c. An image
  // may appear under several classes. Throws if every list is empty.
  BalancedSampler(std::vector<std::vector<int>> images_by_class, Rng rng);

  int next();

  int n_classes() const { return static_cast<int>(images_by_class_.size()); }

 private:
  std::vector<std::vector<int>> images_by_class_;
  std::vector<int> usable_;  // classes with at least one image
  Rng rng_;
};

struct TrainingBatch {
  struct ClsRow {
    int anchor_index = -1;
    int label = 0;  // 0 = background, 1 = object
  };
  struct RegRow {
    int anchor_index = -1;
    RegressionDelta delta;
  };
  std::vector<ClsRow> cls;
  std::vector<RegRow> reg;
};

// Batch for an image with no annotated objects: classification rows only
// (all background), never any regression rows. Passing a non-empty gt list
// here is a caller bug and throws.
TrainingBatch negative_image_batch(std::span<const Box> gts, int anchor_count,
                                   const NPConfig& cfg, Rng& rng);

// Indices of the backward_k largest losses, descending, ties broken toward
// the lower index. losses.size() must not exceed forward_n.
std::vector<int> ohem_select(std::span<const double> losses, int forward_n = 300,
                             int backward_k = 64);

// k distinct elements of pool, uniformly, in draw order.
std::vector<int> sample_without_replacement(std::span<const int> pool, int k,
                                            Rng& rng);

}  // namespace proplab
