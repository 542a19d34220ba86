#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "proplab/cascade.hpp"
#include "proplab/eval.hpp"
#include "proplab/postprocess.hpp"
#include "proplab/sampling.hpp"
#include "proplab/simgen.hpp"

namespace proplab {

inline constexpr std::string_view kToolVersion = "0.1.0";

// Raised for malformed or unknown configuration input.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SamplingSection {
  bool constrained = true;
  NPConfig np;
  double pos_iou = 0.7;
  double neg_iou = 0.3;
};

struct AnchorSection {
  double stride = kDefaultStride;
  std::vector<double> scales{kDefaultAnchorScales.begin(), kDefaultAnchorScales.end()};
  std::vector<double> ratios{kDefaultAspectRatios.begin(), kDefaultAspectRatios.end()};
};

struct MergeSection {
  std::vector<double> rpn_scales;   // short sides; empty = native only
  std::vector<double> frcn_scales;  // short sides; empty = native only
  bool flip = false;
  bool box_voting = false;
  double vote_iou = 0.0;  // <= 0 follows the detection NMS threshold
};

struct EvalSection {
  NmsPreset nms_preset = NmsPreset::kVoc;
  std::vector<double> recall_thresholds{0.5, 0.7};
  std::vector<double> map_thresholds{0.5, 0.7};
  int max_detections = 100;
};

// Everything a run needs. The seed is mandatory in config files: runs must
// never pick up entropy from the clock.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  SceneGenConfig dataset;
  AnchorSection anchors;
  CascadeConfig cascade;
  SamplingSection sampling;
  NoiseModel noise;
  ClassifierModel classifier;
  double context_alpha = 0.0;
  MergeSection merge;
  EvalSection eval;
};

// Parses the JSON experiment config. Unknown keys, type mismatches and
// out-of-range values all throw ConfigError with the offending path.
ExperimentConfig parse_experiment_config(const std::string& json_text);

// Round-trips the resolved config (defaults filled in, keys sorted) so that
// semantically identical configs serialize identically.
std::string canonical_config_json(const ExperimentConfig& cfg);

// FNV-1a over the canonical form, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

// Training-batch behavior observed during a run, aggregated over images.
struct BatchStats {
  int batches = 0;  // images with at least one positive anchor
  double np_ratio_mean = 0.0;
  double np_ratio_max = 0.0;
  // max over batches where the ratio cap was the binding constraint
  double np_ratio_max_ratio_capped = 0.0;
  int floor_bound_batches = 0;
};

struct RunRecord {
  std::string label;
  std::string tool_version{kToolVersion};
  std::string config_hash;
  double wall_time_sec = 0.0;
  EvalReport report;
  BatchStats batch_stats;
  std::string config_json;  // canonical form
};

// Runs the full pipeline over the dataset: proposal stages, augmentation
// merging, recognition surrogate, context prior, per-class NMS, metrics.
// Deterministic in (config, dataset); `threads` only changes the wall time.
RunRecord run_experiment(const ExperimentConfig& cfg, const Dataset& dataset,
                         int threads = 1, const std::string& label = "run");

std::string run_record_to_json(const RunRecord& record);
RunRecord run_record_from_json(const std::string& text);

void write_run_record(const RunRecord& record, const std::string& path);
RunRecord read_run_record(const std::string& path);

// Ablation grid file: {"base": <experiment config>, "grid": {"dotted.path":
// [values...], ...}}. Cells are the cartesian product, axes in sorted key
// order, the last axis varying fastest. Each cell runs independently.
std::vector<RunRecord> run_ablation(const std::string& grid_json_text,
                                    const Dataset& dataset, int threads = 1);

// Metric table, one column per record: CSV and aligned-text renderings.
// Records from different tool versions refuse to combine.
std::string report_csv(std::span<const RunRecord> records);
std::string report_text(std::span<const RunRecord> records);

std::uint64_t fnv1a64(std::string_view data);

}  // namespace proplab
