#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "proplab/cascade.hpp"
#include "proplab/eval.hpp"
#include "proplab/postprocess.hpp"
#include "proplab/rng.hpp"

namespace proplab {

struct Scene {
  int id = 0;
  double width = 0.0, height = 0.0;
  std::vector<GtBox> objects;  // empty for negative scenes
};

struct Dataset {
  int n_classes = 0;
  std::vector<Scene> scenes;
};

// Long-tailed class frequencies: class 0 is the head. imbalance_ratio fixes
// head/tail frequency, exponent bends the curve in between (1 = geometric).
struct LongTailSpec {
  int n_classes = 1;
  double imbalance_ratio = 100.0;
  double exponent = 1.0;
};

// Normalized class probabilities under the spec.
std::vector<double> class_weights(const LongTailSpec& spec);

struct SceneGenConfig {
  LongTailSpec classes;
  int n_scenes = 100;
  double canvas_width = 600.0, canvas_height = 600.0;
  int objects_min = 1, objects_max = 6;
  double negative_fraction = 0.0;  // chance a scene has no objects at all
  double min_object_side = 16.0;
  double max_object_frac = 0.8;  // of min(canvas dims); sizes are log-uniform
  double max_gt_iou = 0.3;       // placement rejects heavier object overlap
  int max_placement_retries = 200;
};

// Deterministic per seed; every scene draws from its own substream, so the
// result does not depend on generation order.
Dataset generate_dataset(const SceneGenConfig& cfg, std::uint64_t seed);

// How sloppy the simulated proposal network is.
struct NoiseModel {
  double score_sigma = 0.15;  // objectness noise, both stages
  double stage1_shrink = 0.4;  // fraction of the true offset each pass recovers
  double stage1_reg_sigma = 0.1;
  double stage2_shrink = 0.75;
  double stage2_reg_sigma = 0.03;
  // Systematic stage-2 regression bias for objects smaller than 64x64: one
  // delta-space offset per (gt, run), sigma growing linearly as the object
  // shrinks. Shared across every box matched to the gt, so more candidates
  // do not wash it out. 0 turns the effect off.
  double stage2_small_extra_sigma = 0.4;
  // Couples training-batch imbalance to score noise: batches whose
  // negative/positive ratio r exceeds the configured cap add
  // np_noise_gain * ln(r / cap) to score_sigma for that image.
  double np_noise_gain = 0.08;
  std::uint64_t seed = 1;
};

// Scorer that peeks at the ground truth: objectness tracks the reference's
// best IoU, the regression delta points a `shrink` fraction of the way to
// the best-matching gt, and both get Gaussian noise. Per-box draws come from
// substreams keyed on (seed, scene, stage, run, box), so results never
// depend on threading or call order.
class OracleScorer final : public Scorer {
 public:
  OracleScorer(const Scene& scene, const NoiseModel& noise, int stage,
               std::uint64_t run_tag = 0, double extra_score_sigma = 0.0);

  std::vector<ScorerOutput> score_and_regress(
      std::span<const Box> references) const override;

 private:
  const Scene* scene_;
  NoiseModel noise_;
  int stage_;
  std::uint64_t run_tag_;
  double extra_score_sigma_;
};

// Recognition-stage surrogate. Confusion is pairwise: class c is mistaken
// for its partner (c ^ 1) with strength confusion_weight.
struct ClassifierModel {
  double confusion_weight = 0.35;   // probability mass leaked to the partner
  double class_logit_sigma = 0.5;   // per-class log-score noise
  double objectness_sigma = 0.10;
  double match_iou = 0.5;  // proposal counts as "on" a gt from this IoU
  double reg_shrink = 0.7;
  double reg_sigma = 0.04;
};

class ClassificationOracle {
 public:
  ClassificationOracle(const Scene& scene, int n_classes,
                       const ClassifierModel& model, std::uint64_t seed,
                       std::uint64_t run_tag = 0);

  // One FrcnDetection per proposal: refined box, class posterior over the
  // catalog (sums to 1), and an objectness factor.
  std::vector<FrcnDetection> evaluate(std::span<const Box> proposals) const;

 private:
  const Scene* scene_;
  int n_classes_;
  ClassifierModel model_;
  std::uint64_t seed_;
  std::uint64_t run_tag_;
};

// Per-class weights 1 + alpha * [class present in scene]; alpha = 0 gives
// the identity prior.
ContextPrior context_prior_for(const Scene& scene, int n_classes, double alpha);

struct RenderedScene {
  Scene scene;
  double factor = 1.0;  // original -> rendered; divide to map back
};

// Isotropic rescale so min(width, height) == short_side.
RenderedScene render_at_scale(const Scene& scene, double short_side);

// Mirror the scene left-right (canvas size unchanged).
Scene flip_scene(const Scene& scene);

// Class -> image index lists for BalancedSampler.
std::vector<std::vector<int>> images_by_class(const Dataset& dataset);

// Line-delimited text: a header record, then one record per scene carrying
// id, canvas size and the object tuples. Numbers survive a round trip
// bit-exactly.
std::string dataset_to_text(const Dataset& dataset);
Dataset dataset_from_text(const std::string& text);

void write_dataset(const Dataset& dataset, const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace proplab
