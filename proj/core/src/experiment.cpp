#include "proplab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <string_view>
#include <thread>

#include <nlohmann/json.hpp>

namespace proplab {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kTagBatch = stream_tag("batch-sample");

json parse_json_text(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // translate the byte offset into line/column for a usable message
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(std::string(what) + " parse error at line " +
                      std::to_string(line) + ", column " + std::to_string(col) +
                      ": " + e.what());
  }
}

// Object view that tracks which keys were consumed; done() turns leftovers
// into errors so config typos never pass silently.
class SectionReader {
 public:
  SectionReader(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j_->is_object())
      throw ConfigError("config error at " + path_ + ": expected an object");
  }

  bool has(const char* key) const { return j_->contains(key); }

  bool get_bool(const char* key, bool def) {
    const json* v = take(key);
    if (!v) return def;
    if (!v->is_boolean()) throw type_error(key, "true/false");
    return v->get<bool>();
  }

  int get_int(const char* key, int def) {
    const json* v = take(key);
    if (!v) return def;
    if (!v->is_number_integer() && !v->is_number_unsigned())
      throw type_error(key, "an integer");
    return v->get<int>();
  }

  std::uint64_t get_u64(const char* key, std::uint64_t def) {
    const json* v = take(key);
    if (!v) return def;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
      throw type_error(key, "a non-negative integer");
    return v->get<std::uint64_t>();
  }

  double get_num(const char* key, double def) {
    const json* v = take(key);
    if (!v) return def;
    if (!v->is_number()) throw type_error(key, "a number");
    return v->get<double>();
  }

  std::string get_str(const char* key, const std::string& def) {
    const json* v = take(key);
    if (!v) return def;
    if (!v->is_string()) throw type_error(key, "a string");
    return v->get<std::string>();
  }

  std::vector<double> get_num_list(const char* key, std::vector<double> def) {
    const json* v = take(key);
    if (!v) return def;
    if (!v->is_array()) throw type_error(key, "an array of numbers");
    std::vector<double> out;
    for (const json& e : *v) {
      if (!e.is_number()) throw type_error(key, "an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  // nullptr when the subsection is absent
  const json* subsection(const char* key) {
    const json* v = take(key);
    if (v && !v->is_object()) throw type_error(key, "a section object");
    return v;
  }

  void done() const {
    for (auto it = j_->begin(); it != j_->end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError("config error: unknown key '" + join(it.key()) + "'");
  }

  std::string join(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
  }

  ConfigError type_error(const char* key, const char* want) const {
    return ConfigError("config error at " + join(key) + ": expected " + want);
  }

  const json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("config error: " + msg);
}

FusionMode parse_fusion(const std::string& s) {
  if (s == "size_split") return FusionMode::kSizeSplit;
  if (s == "stage1_only") return FusionMode::kStage1Only;
  if (s == "stage2_only") return FusionMode::kStage2Only;
  throw ConfigError("config error at cascade.fusion: expected size_split|stage1_only|stage2_only");
}

std::string_view fusion_name(FusionMode m) {
  switch (m) {
    case FusionMode::kSizeSplit: return "size_split";
    case FusionMode::kStage1Only: return "stage1_only";
    case FusionMode::kStage2Only: return "stage2_only";
  }
  return "?";
}

SizeKey parse_size_key(const std::string& s) {
  if (s == "stage1") return SizeKey::kStage1Box;
  if (s == "stage2") return SizeKey::kStage2Box;
  throw ConfigError("config error at cascade.size_key: expected stage1|stage2");
}

void validate(const ExperimentConfig& cfg) {
  require(cfg.dataset.classes.n_classes > 0, "dataset.n_classes must be > 0");
  require(cfg.dataset.classes.imbalance_ratio >= 1.0, "dataset.imbalance_ratio must be >= 1");
  require(cfg.dataset.classes.exponent > 0.0, "dataset.exponent must be > 0");
  require(cfg.dataset.n_scenes >= 0, "dataset.n_scenes must be >= 0");
  require(cfg.dataset.canvas_width > 0 && cfg.dataset.canvas_height > 0,
          "dataset canvas must be positive");
  require(cfg.dataset.objects_min >= 0 && cfg.dataset.objects_max >= cfg.dataset.objects_min,
          "dataset.objects_min/objects_max out of order");
  require(cfg.dataset.negative_fraction >= 0.0 && cfg.dataset.negative_fraction <= 1.0,
          "dataset.negative_fraction outside [0, 1]");
  require(cfg.anchors.stride > 0, "anchors.stride must be > 0");
  require(!cfg.anchors.scales.empty(), "anchors.scales must not be empty");
  require(!cfg.anchors.ratios.empty(), "anchors.ratios must not be empty");
  for (double s : cfg.anchors.scales) require(s > 0, "anchors.scales entries must be > 0");
  for (double r : cfg.anchors.ratios) require(r > 0, "anchors.ratios entries must be > 0");
  require(cfg.cascade.size_threshold_area >= 0, "cascade.size_threshold_area must be >= 0");
  require(cfg.cascade.nms_iou > 0 && cfg.cascade.nms_iou < 1,
          "cascade.nms_iou must be in (0, 1)");
  require(cfg.cascade.pre_nms_top_n >= 0, "cascade.pre_nms_top_n must be >= 0");
  require(cfg.cascade.proposal_budget > 0, "cascade.proposal_budget must be > 0");
  require(cfg.sampling.np.batch_size > 0, "sampling.batch_size must be > 0");
  require(cfg.sampling.np.max_np_ratio > 0, "sampling.max_np_ratio must be > 0");
  require(cfg.sampling.np.min_batch_size >= 0 &&
              cfg.sampling.np.min_batch_size <= cfg.sampling.np.batch_size,
          "sampling.min_batch_size outside [0, batch_size]");
  require(cfg.sampling.pos_iou > 0 && cfg.sampling.pos_iou <= 1, "sampling.pos_iou outside (0, 1]");
  require(cfg.sampling.neg_iou >= 0 && cfg.sampling.neg_iou <= cfg.sampling.pos_iou,
          "sampling.neg_iou outside [0, pos_iou]");
  require(cfg.noise.score_sigma >= 0 && cfg.noise.stage1_reg_sigma >= 0 &&
              cfg.noise.stage2_reg_sigma >= 0 && cfg.noise.stage2_small_extra_sigma >= 0 &&
              cfg.noise.np_noise_gain >= 0,
          "noise sigmas must be >= 0");
  require(cfg.classifier.confusion_weight >= 0 && cfg.classifier.confusion_weight < 1,
          "classifier.confusion_weight outside [0, 1)");
  require(cfg.classifier.class_logit_sigma >= 0 && cfg.classifier.objectness_sigma >= 0 &&
              cfg.classifier.reg_sigma >= 0,
          "classifier sigmas must be >= 0");
  require(cfg.classifier.match_iou > 0 && cfg.classifier.match_iou <= 1,
          "classifier.match_iou outside (0, 1]");
  require(cfg.context_alpha >= 0, "context.alpha must be >= 0");
  for (double s : cfg.merge.rpn_scales) require(s > 0, "merge.rpn_scales entries must be > 0");
  for (double s : cfg.merge.frcn_scales) require(s > 0, "merge.frcn_scales entries must be > 0");
  require(cfg.eval.max_detections > 0, "eval.max_detections must be > 0");
  for (double t : cfg.eval.recall_thresholds)
    require(t > 0 && t <= 1, "eval.recall_thresholds entries outside (0, 1]");
  for (double t : cfg.eval.map_thresholds)
    require(t > 0 && t <= 1, "eval.map_thresholds entries outside (0, 1]");
  require(!cfg.eval.recall_thresholds.empty(), "eval.recall_thresholds must not be empty");
  require(!cfg.eval.map_thresholds.empty(), "eval.map_thresholds must not be empty");
}

ExperimentConfig config_from_json(const json& root) {
  SectionReader top(root, "");
  ExperimentConfig cfg;

  require(top.has("seed"), "missing required key 'seed' (runs must be reproducible)");
  cfg.seed = top.get_u64("seed", 0);

  if (const json* j = top.subsection("dataset")) {
    SectionReader s(*j, "dataset");
    cfg.dataset.classes.n_classes = s.get_int("n_classes", cfg.dataset.classes.n_classes);
    cfg.dataset.classes.imbalance_ratio =
        s.get_num("imbalance_ratio", cfg.dataset.classes.imbalance_ratio);
    cfg.dataset.classes.exponent = s.get_num("exponent", cfg.dataset.classes.exponent);
    cfg.dataset.n_scenes = s.get_int("n_scenes", cfg.dataset.n_scenes);
    cfg.dataset.canvas_width = s.get_num("canvas_width", cfg.dataset.canvas_width);
    cfg.dataset.canvas_height = s.get_num("canvas_height", cfg.dataset.canvas_height);
    cfg.dataset.objects_min = s.get_int("objects_min", cfg.dataset.objects_min);
    cfg.dataset.objects_max = s.get_int("objects_max", cfg.dataset.objects_max);
    cfg.dataset.negative_fraction =
        s.get_num("negative_fraction", cfg.dataset.negative_fraction);
    cfg.dataset.min_object_side = s.get_num("min_object_side", cfg.dataset.min_object_side);
    cfg.dataset.max_object_frac = s.get_num("max_object_frac", cfg.dataset.max_object_frac);
    cfg.dataset.max_gt_iou = s.get_num("max_gt_iou", cfg.dataset.max_gt_iou);
    cfg.dataset.max_placement_retries =
        s.get_int("max_placement_retries", cfg.dataset.max_placement_retries);
    s.done();
  }

  if (const json* j = top.subsection("anchors")) {
    SectionReader s(*j, "anchors");
    cfg.anchors.stride = s.get_num("stride", cfg.anchors.stride);
    cfg.anchors.scales = s.get_num_list("scales", cfg.anchors.scales);
    cfg.anchors.ratios = s.get_num_list("ratios", cfg.anchors.ratios);
    s.done();
  }

  if (const json* j = top.subsection("cascade")) {
    SectionReader s(*j, "cascade");
    cfg.cascade.enabled = s.get_bool("enabled", cfg.cascade.enabled);
    cfg.cascade.fusion = parse_fusion(s.get_str("fusion", std::string(fusion_name(cfg.cascade.fusion))));
    cfg.cascade.size_threshold_area =
        s.get_num("size_threshold_area", cfg.cascade.size_threshold_area);
    cfg.cascade.size_key = parse_size_key(
        s.get_str("size_key", cfg.cascade.size_key == SizeKey::kStage1Box ? "stage1" : "stage2"));
    cfg.cascade.nms_iou = s.get_num("nms_iou", cfg.cascade.nms_iou);
    cfg.cascade.pre_nms_top_n = s.get_int("pre_nms_top_n", cfg.cascade.pre_nms_top_n);
    cfg.cascade.proposal_budget = s.get_int("proposal_budget", cfg.cascade.proposal_budget);
    s.done();
  }

  if (const json* j = top.subsection("sampling")) {
    SectionReader s(*j, "sampling");
    cfg.sampling.constrained = s.get_bool("constrained", cfg.sampling.constrained);
    cfg.sampling.np.batch_size = s.get_int("batch_size", cfg.sampling.np.batch_size);
    cfg.sampling.np.max_np_ratio = s.get_num("max_np_ratio", cfg.sampling.np.max_np_ratio);
    cfg.sampling.np.min_batch_size = s.get_int("min_batch_size", cfg.sampling.np.min_batch_size);
    cfg.sampling.pos_iou = s.get_num("pos_iou", cfg.sampling.pos_iou);
    cfg.sampling.neg_iou = s.get_num("neg_iou", cfg.sampling.neg_iou);
    s.done();
  }

  if (const json* j = top.subsection("noise")) {
    SectionReader s(*j, "noise");
    cfg.noise.score_sigma = s.get_num("score_sigma", cfg.noise.score_sigma);
    cfg.noise.stage1_shrink = s.get_num("stage1_shrink", cfg.noise.stage1_shrink);
    cfg.noise.stage1_reg_sigma = s.get_num("stage1_reg_sigma", cfg.noise.stage1_reg_sigma);
    cfg.noise.stage2_shrink = s.get_num("stage2_shrink", cfg.noise.stage2_shrink);
    cfg.noise.stage2_reg_sigma = s.get_num("stage2_reg_sigma", cfg.noise.stage2_reg_sigma);
    cfg.noise.stage2_small_extra_sigma =
        s.get_num("stage2_small_extra_sigma", cfg.noise.stage2_small_extra_sigma);
    cfg.noise.np_noise_gain = s.get_num("np_noise_gain", cfg.noise.np_noise_gain);
    s.done();
  }

  if (const json* j = top.subsection("classifier")) {
    SectionReader s(*j, "classifier");
    cfg.classifier.confusion_weight =
        s.get_num("confusion_weight", cfg.classifier.confusion_weight);
    cfg.classifier.class_logit_sigma =
        s.get_num("class_logit_sigma", cfg.classifier.class_logit_sigma);
    cfg.classifier.objectness_sigma =
        s.get_num("objectness_sigma", cfg.classifier.objectness_sigma);
    cfg.classifier.match_iou = s.get_num("match_iou", cfg.classifier.match_iou);
    cfg.classifier.reg_shrink = s.get_num("reg_shrink", cfg.classifier.reg_shrink);
    cfg.classifier.reg_sigma = s.get_num("reg_sigma", cfg.classifier.reg_sigma);
    s.done();
  }

  if (const json* j = top.subsection("context")) {
    SectionReader s(*j, "context");
    cfg.context_alpha = s.get_num("alpha", cfg.context_alpha);
    s.done();
  }

  if (const json* j = top.subsection("merge")) {
    SectionReader s(*j, "merge");
    cfg.merge.rpn_scales = s.get_num_list("rpn_scales", cfg.merge.rpn_scales);
    cfg.merge.frcn_scales = s.get_num_list("frcn_scales", cfg.merge.frcn_scales);
    cfg.merge.flip = s.get_bool("flip", cfg.merge.flip);
    cfg.merge.box_voting = s.get_bool("box_voting", cfg.merge.box_voting);
    cfg.merge.vote_iou = s.get_num("vote_iou", cfg.merge.vote_iou);
    s.done();
  }

  if (const json* j = top.subsection("eval")) {
    SectionReader s(*j, "eval");
    const std::string preset =
        s.get_str("nms_preset", std::string(to_string(cfg.eval.nms_preset)));
    try {
      cfg.eval.nms_preset = parse_nms_preset(preset);
    } catch (const std::invalid_argument&) {
      throw ConfigError("config error at eval.nms_preset: unknown preset '" +
                        preset + "'");
    }
    cfg.eval.recall_thresholds =
        s.get_num_list("recall_thresholds", cfg.eval.recall_thresholds);
    cfg.eval.map_thresholds = s.get_num_list("map_thresholds", cfg.eval.map_thresholds);
    cfg.eval.max_detections = s.get_int("max_detections", cfg.eval.max_detections);
    s.done();
  }

  top.done();
  validate(cfg);
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["dataset"] = {{"n_classes", cfg.dataset.classes.n_classes},
                  {"imbalance_ratio", cfg.dataset.classes.imbalance_ratio},
                  {"exponent", cfg.dataset.classes.exponent},
                  {"n_scenes", cfg.dataset.n_scenes},
                  {"canvas_width", cfg.dataset.canvas_width},
                  {"canvas_height", cfg.dataset.canvas_height},
                  {"objects_min", cfg.dataset.objects_min},
                  {"objects_max", cfg.dataset.objects_max},
                  {"negative_fraction", cfg.dataset.negative_fraction},
                  {"min_object_side", cfg.dataset.min_object_side},
                  {"max_object_frac", cfg.dataset.max_object_frac},
                  {"max_gt_iou", cfg.dataset.max_gt_iou},
                  {"max_placement_retries", cfg.dataset.max_placement_retries}};
  j["anchors"] = {{"stride", cfg.anchors.stride},
                  {"scales", cfg.anchors.scales},
                  {"ratios", cfg.anchors.ratios}};
  j["cascade"] = {{"enabled", cfg.cascade.enabled},
                  {"fusion", std::string(fusion_name(cfg.cascade.fusion))},
                  {"size_threshold_area", cfg.cascade.size_threshold_area},
                  {"size_key", cfg.cascade.size_key == SizeKey::kStage1Box ? "stage1" : "stage2"},
                  {"nms_iou", cfg.cascade.nms_iou},
                  {"pre_nms_top_n", cfg.cascade.pre_nms_top_n},
                  {"proposal_budget", cfg.cascade.proposal_budget}};
  j["sampling"] = {{"constrained", cfg.sampling.constrained},
                   {"batch_size", cfg.sampling.np.batch_size},
                   {"max_np_ratio", cfg.sampling.np.max_np_ratio},
                   {"min_batch_size", cfg.sampling.np.min_batch_size},
                   {"pos_iou", cfg.sampling.pos_iou},
                   {"neg_iou", cfg.sampling.neg_iou}};
  j["noise"] = {{"score_sigma", cfg.noise.score_sigma},
                {"stage1_shrink", cfg.noise.stage1_shrink},
                {"stage1_reg_sigma", cfg.noise.stage1_reg_sigma},
                {"stage2_shrink", cfg.noise.stage2_shrink},
                {"stage2_reg_sigma", cfg.noise.stage2_reg_sigma},
                {"stage2_small_extra_sigma", cfg.noise.stage2_small_extra_sigma},
                {"np_noise_gain", cfg.noise.np_noise_gain}};
  j["classifier"] = {{"confusion_weight", cfg.classifier.confusion_weight},
                     {"class_logit_sigma", cfg.classifier.class_logit_sigma},
                     {"objectness_sigma", cfg.classifier.objectness_sigma},
                     {"match_iou", cfg.classifier.match_iou},
                     {"reg_shrink", cfg.classifier.reg_shrink},
                     {"reg_sigma", cfg.classifier.reg_sigma}};
  j["context"] = {{"alpha", cfg.context_alpha}};
  j["merge"] = {{"rpn_scales", cfg.merge.rpn_scales},
                {"frcn_scales", cfg.merge.frcn_scales},
                {"flip", cfg.merge.flip},
                {"box_voting", cfg.merge.box_voting},
                {"vote_iou", cfg.merge.vote_iou}};
  j["eval"] = {{"nms_preset", std::string(to_string(cfg.eval.nms_preset))},
               {"recall_thresholds", cfg.eval.recall_thresholds},
               {"map_thresholds", cfg.eval.map_thresholds},
               {"max_detections", cfg.eval.max_detections}};
  return j;
}

// first exception wins, deterministic enough for error reporting
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct SceneOutcome {
  std::vector<double> gt_best_iou;  // per object, vs the budgeted proposals
  std::vector<ScoredBox> detections;
  // batch bookkeeping
  int batches = 0;
  double np_sum = 0.0;
  double np_max = 0.0;
  double np_max_capped = 0.0;
  int floor_bound = 0;
};

struct AugRun {
  double short_side = 0.0;  // 0 = native resolution
  bool flip = false;
};

std::vector<AugRun> expand_runs(const std::vector<double>& scales, bool flip) {
  std::vector<AugRun> runs;
  if (scales.empty())
    runs.push_back({0.0, false});
  else
    for (double s : scales) runs.push_back({s, false});
  if (flip) {
    const std::size_t n = runs.size();
    for (std::size_t i = 0; i < n; ++i) runs.push_back({runs[i].short_side, true});
  }
  return runs;
}

std::vector<Box> gt_boxes(const Scene& scene) {
  std::vector<Box> out;
  out.reserve(scene.objects.size());
  for (const GtBox& g : scene.objects) out.push_back(g.box);
  return out;
}

SceneOutcome process_scene(const ExperimentConfig& cfg, const Scene& scene,
                           int n_classes) {
  SceneOutcome outcome;
  NoiseModel noise = cfg.noise;
  noise.seed = cfg.seed;  // every stream in the run hangs off the one seed

  const std::vector<AugRun> rpn_runs = expand_runs(cfg.merge.rpn_scales, cfg.merge.flip);
  const bool augmented = rpn_runs.size() > 1 || rpn_runs[0].short_side > 0.0;

  std::vector<std::vector<ScoredBox>> run_sets;
  std::vector<ScoredBox> rpn_final;

  for (std::size_t run_idx = 0; run_idx < rpn_runs.size(); ++run_idx) {
    const AugRun& run = rpn_runs[run_idx];
    RenderedScene rendered;
    if (run.short_side > 0.0)
      rendered = render_at_scale(scene, run.short_side);
    else {
      rendered.scene = scene;
      rendered.factor = 1.0;
    }
    const Scene work = run.flip ? flip_scene(rendered.scene) : rendered.scene;

    const std::vector<Anchor> anchors = generate_anchors(
        work.width, work.height, cfg.anchors.stride, cfg.anchors.scales,
        cfg.anchors.ratios);
    const std::vector<Box> gts = gt_boxes(work);

    Rng batch_rng = Rng::keyed(cfg.seed, kTagBatch,
                               static_cast<std::uint64_t>(scene.id),
                               static_cast<std::uint64_t>(run_idx));

    // simulated training batch; its imbalance feeds back into score noise
    double extra_sigma = 0.0;
    if (work.objects.empty()) {
      (void)negative_image_batch(gts, static_cast<int>(anchors.size()),
                                 cfg.sampling.np, batch_rng);
    } else {
      const AnchorLabeling labeling =
          label_anchors(anchors, gts, cfg.sampling.pos_iou, cfg.sampling.neg_iou);
      const BatchSample batch =
          cfg.sampling.constrained
              ? constrained_np_sample(labeling, cfg.sampling.np, batch_rng)
              : naive_np_sample(labeling, cfg.sampling.np, batch_rng);
      if (!batch.pos.empty()) {
        const double ratio = batch.np_ratio();
        outcome.batches += 1;
        outcome.np_sum += ratio;
        outcome.np_max = std::max(outcome.np_max, ratio);
        if (batch.floor_bound)
          outcome.floor_bound += 1;
        else
          outcome.np_max_capped = std::max(outcome.np_max_capped, ratio);
        if (cfg.noise.np_noise_gain > 0.0 && ratio > cfg.sampling.np.max_np_ratio)
          extra_sigma = cfg.noise.np_noise_gain *
                        std::log(ratio / cfg.sampling.np.max_np_ratio);
      }
    }

    const OracleScorer scorer1(work, noise, 1, run_idx, extra_sigma);
    std::vector<Proposal> props = stage1(anchors, scorer1, work.width, work.height);
    if (cfg.cascade.enabled) {
      const OracleScorer scorer2(work, noise, 2, run_idx, extra_sigma);
      std::vector<Proposal> s2 =
          stage2(props, anchors, scorer2, work.width, work.height);
      switch (cfg.cascade.fusion) {
        case FusionMode::kSizeSplit:
          props = fuse_by_size(props, s2, cfg.cascade.size_threshold_area,
                               cfg.cascade.size_key);
          break;
        case FusionMode::kStage1Only:
          break;
        case FusionMode::kStage2Only:
          props = std::move(s2);
          break;
      }
    }

    if (!augmented) {
      rpn_final = finalize_proposals(props, cfg.cascade.nms_iou,
                                     cfg.cascade.proposal_budget,
                                     cfg.cascade.pre_nms_top_n);
      break;
    }

    // back to original coordinates, then a per-run cut before the union
    std::vector<ScoredBox> mapped(props.size());
    for (std::size_t i = 0; i < props.size(); ++i) {
      Box b = props[i].box;
      if (run.flip) b = flip_h(b, work.width);
      if (rendered.factor != 1.0) b = rescale(b, 1.0 / rendered.factor);
      mapped[i] = {clip_to(b, scene.width, scene.height), props[i].objectness, kNoClass};
    }
    if (cfg.cascade.pre_nms_top_n > 0 &&
        static_cast<int>(mapped.size()) > cfg.cascade.pre_nms_top_n) {
      std::stable_sort(mapped.begin(), mapped.end(),
                       [](const ScoredBox& a, const ScoredBox& b) {
                         return a.score > b.score;
                       });
      mapped.resize(cfg.cascade.pre_nms_top_n);
    }
    run_sets.push_back(std::move(mapped));
  }

  if (augmented)
    rpn_final = merge_rpn(run_sets, cfg.cascade.nms_iou, cfg.cascade.proposal_budget);

  outcome.gt_best_iou = best_iou_per_gt(rpn_final, gt_boxes(scene),
                                        cfg.cascade.proposal_budget);

  // recognition stage on the merged proposals
  std::vector<Box> props;
  props.reserve(rpn_final.size());
  for (const ScoredBox& sb : rpn_final) props.push_back(sb.box);
  if (props.empty()) return outcome;

  const std::vector<AugRun> frcn_runs = expand_runs(cfg.merge.frcn_scales, cfg.merge.flip);
  std::vector<std::vector<FrcnDetection>> frcn_sets;
  frcn_sets.reserve(frcn_runs.size());
  for (std::size_t run_idx = 0; run_idx < frcn_runs.size(); ++run_idx) {
    const AugRun& run = frcn_runs[run_idx];
    RenderedScene rendered;
    if (run.short_side > 0.0)
      rendered = render_at_scale(scene, run.short_side);
    else {
      rendered.scene = scene;
      rendered.factor = 1.0;
    }
    const Scene work = run.flip ? flip_scene(rendered.scene) : rendered.scene;

    std::vector<Box> refs(props.size());
    for (std::size_t i = 0; i < props.size(); ++i) {
      Box b = props[i];
      if (rendered.factor != 1.0) b = rescale(b, rendered.factor);
      if (run.flip) b = flip_h(b, work.width);
      refs[i] = b;
    }

    const ClassificationOracle oracle(work, n_classes, cfg.classifier, cfg.seed,
                                      run_idx);
    std::vector<FrcnDetection> dets = oracle.evaluate(refs);
    for (FrcnDetection& d : dets) {
      Box b = d.box;
      if (run.flip) b = flip_h(b, work.width);
      if (rendered.factor != 1.0) b = rescale(b, 1.0 / rendered.factor);
      d.box = clip_to(b, scene.width, scene.height);
    }
    frcn_sets.push_back(std::move(dets));
  }

  std::vector<FrcnDetection> merged = merge_frcn(frcn_sets);

  // classification-only context fusion; identity priors are skipped outright
  // so alpha = 0 stays bit-identical to running without a prior
  const ContextPrior prior = context_prior_for(scene, n_classes, cfg.context_alpha);
  if (!prior.is_identity())
    for (FrcnDetection& d : merged)
      d.class_scores = apply_context_prior(d.class_scores, prior);

  // top-1 class per proposal, then per-class NMS at the preset threshold
  std::vector<std::vector<ScoredBox>> per_class(n_classes);
  for (const FrcnDetection& d : merged) {
    int best_c = 0;
    for (int c = 1; c < n_classes; ++c)
      if (d.class_scores[c] > d.class_scores[best_c]) best_c = c;
    per_class[best_c].push_back(
        {d.box, d.objectness * d.class_scores[best_c], best_c});
  }

  const double det_nms = nms_threshold(cfg.eval.nms_preset);
  const double vote_iou = cfg.merge.vote_iou > 0.0 ? cfg.merge.vote_iou : det_nms;
  for (int c = 0; c < n_classes; ++c) {
    if (per_class[c].empty()) continue;
    const std::vector<ScoredBox> kept =
        cfg.merge.box_voting ? nms_with_voting(per_class[c], det_nms, vote_iou)
                             : nms(per_class[c], det_nms);
    outcome.detections.insert(outcome.detections.end(), kept.begin(), kept.end());
  }
  std::stable_sort(outcome.detections.begin(), outcome.detections.end(),
                   [](const ScoredBox& a, const ScoredBox& b) {
                     return a.score > b.score;
                   });
  if (static_cast<int>(outcome.detections.size()) > cfg.eval.max_detections)
    outcome.detections.resize(cfg.eval.max_detections);
  return outcome;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  return config_from_json(parse_json_text(json_text, "config"));
}

std::string canonical_config_json(const ExperimentConfig& cfg) {
  return config_to_json(cfg).dump();
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : data) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_config_json(cfg))));
  return buf;
}

RunRecord run_experiment(const ExperimentConfig& cfg, const Dataset& dataset,
                         int threads, const std::string& label) {
  const auto t0 = std::chrono::steady_clock::now();
  if (dataset.n_classes <= 0)
    throw std::invalid_argument("run_experiment: dataset has no class catalog");

  const int n = static_cast<int>(dataset.scenes.size());
  std::vector<SceneOutcome> outcomes(n);
  parallel_for(n, threads, [&](int i) {
    outcomes[i] = process_scene(cfg, dataset.scenes[i], dataset.n_classes);
  });

  RunRecord rec;
  rec.label = label;
  rec.config_hash = config_hash(cfg);
  rec.config_json = canonical_config_json(cfg);
  rec.report.proposal_budget = cfg.cascade.proposal_budget;

  // pooled recall over every annotated object in the dataset
  std::size_t total_gts = 0;
  for (const auto& o : outcomes) total_gts += o.gt_best_iou.size();

  auto pooled_recall = [&](double t) {
    if (total_gts == 0) return 1.0;
    std::size_t covered = 0;
    for (const auto& o : outcomes)
      for (double v : o.gt_best_iou)
        if (v >= t) ++covered;
    return static_cast<double>(covered) / static_cast<double>(total_gts);
  };

  if (total_gts == 0)
    rec.report.notes.push_back("dataset has no ground truth; recall metrics are vacuous");

  for (double t : cfg.eval.recall_thresholds) rec.report.recall_at[t] = pooled_recall(t);
  double ar = 0.0;
  for (double t : kArThresholds) ar += pooled_recall(t);
  rec.report.average_recall = ar / static_cast<double>(kArThresholds.size());

  std::vector<std::vector<ScoredBox>> dets_by_image(n);
  std::vector<std::vector<GtBox>> gts_by_image(n);
  for (int i = 0; i < n; ++i) {
    dets_by_image[i] = outcomes[i].detections;
    gts_by_image[i] = dataset.scenes[i].objects;
  }
  bool first = true;
  for (double t : cfg.eval.map_thresholds) {
    const ApResult ap = evaluate_detections(dets_by_image, gts_by_image, t);
    rec.report.map_at[t] = ap.map;
    if (first) {
      rec.report.per_class_ap = ap.per_class;
      for (const std::string& note : ap.notes) rec.report.notes.push_back(note);
      first = false;
    }
  }

  for (const auto& o : outcomes) {
    rec.batch_stats.batches += o.batches;
    rec.batch_stats.np_ratio_mean += o.np_sum;
    rec.batch_stats.np_ratio_max = std::max(rec.batch_stats.np_ratio_max, o.np_max);
    rec.batch_stats.np_ratio_max_ratio_capped =
        std::max(rec.batch_stats.np_ratio_max_ratio_capped, o.np_max_capped);
    rec.batch_stats.floor_bound_batches += o.floor_bound;
  }
  if (rec.batch_stats.batches > 0)
    rec.batch_stats.np_ratio_mean /= rec.batch_stats.batches;

  rec.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

namespace {

std::string format_threshold(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", t);
  return buf;
}

json record_to_json_obj(const RunRecord& rec) {
  json metrics;
  for (const auto& [t, v] : rec.report.recall_at)
    metrics["recall"][format_threshold(t)] = v;
  metrics["average_recall"] = rec.report.average_recall;
  for (const auto& [t, v] : rec.report.map_at)
    metrics["map"][format_threshold(t)] = v;
  for (const auto& [c, v] : rec.report.per_class_ap)
    metrics["per_class_ap"][std::to_string(c)] = v;

  json j;
  j["run_record"] = {
      {"format_version", 1},
      {"tool_version", rec.tool_version},
      {"label", rec.label},
      {"config_hash", rec.config_hash},
      {"wall_time_sec", rec.wall_time_sec},
      {"proposal_budget", rec.report.proposal_budget},
      {"metrics", std::move(metrics)},
      {"batch_stats",
       {{"batches", rec.batch_stats.batches},
        {"np_ratio_mean", rec.batch_stats.np_ratio_mean},
        {"np_ratio_max", rec.batch_stats.np_ratio_max},
        {"np_ratio_max_ratio_capped", rec.batch_stats.np_ratio_max_ratio_capped},
        {"floor_bound_batches", rec.batch_stats.floor_bound_batches}}},
      {"notes", rec.report.notes},
      {"config", json::parse(rec.config_json)}};
  return j;
}

}  // namespace

std::string run_record_to_json(const RunRecord& rec) {
  return record_to_json_obj(rec).dump(2) + "\n";
}

RunRecord run_record_from_json(const std::string& text) {
  const json root = parse_json_text(text, "run record");
  if (!root.contains("run_record"))
    throw ConfigError("run record: missing top-level 'run_record' object");
  const json& j = root["run_record"];
  if (j.value("format_version", -1) != 1)
    throw ConfigError("run record: unsupported format_version");

  RunRecord rec;
  rec.tool_version = j.at("tool_version").get<std::string>();
  rec.label = j.at("label").get<std::string>();
  rec.config_hash = j.at("config_hash").get<std::string>();
  rec.wall_time_sec = j.at("wall_time_sec").get<double>();
  rec.report.proposal_budget = j.at("proposal_budget").get<int>();
  const json& metrics = j.at("metrics");
  if (metrics.contains("recall"))
    for (auto it = metrics["recall"].begin(); it != metrics["recall"].end(); ++it)
      rec.report.recall_at[std::stod(it.key())] = it.value().get<double>();
  rec.report.average_recall = metrics.at("average_recall").get<double>();
  if (metrics.contains("map"))
    for (auto it = metrics["map"].begin(); it != metrics["map"].end(); ++it)
      rec.report.map_at[std::stod(it.key())] = it.value().get<double>();
  if (metrics.contains("per_class_ap"))
    for (auto it = metrics["per_class_ap"].begin(); it != metrics["per_class_ap"].end(); ++it)
      rec.report.per_class_ap[std::stoi(it.key())] = it.value().get<double>();
  const json& bs = j.at("batch_stats");
  rec.batch_stats.batches = bs.at("batches").get<int>();
  rec.batch_stats.np_ratio_mean = bs.at("np_ratio_mean").get<double>();
  rec.batch_stats.np_ratio_max = bs.at("np_ratio_max").get<double>();
  rec.batch_stats.np_ratio_max_ratio_capped =
      bs.at("np_ratio_max_ratio_capped").get<double>();
  rec.batch_stats.floor_bound_batches = bs.at("floor_bound_batches").get<int>();
  if (j.contains("notes"))
    for (const json& note : j["notes"])
      rec.report.notes.push_back(note.get<std::string>());
  rec.config_json = j.at("config").dump();
  return rec;
}

void write_run_record(const RunRecord& rec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  const std::string text = run_record_to_json(rec);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

RunRecord read_run_record(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open run record: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return run_record_from_json(buf.str());
}

std::vector<RunRecord> run_ablation(const std::string& grid_json_text,
                                    const Dataset& dataset, int threads) {
  const json root = parse_json_text(grid_json_text, "ablation grid");
  SectionReader top(root, "");
  const json* base = top.subsection("base");
  const json* grid = top.subsection("grid");
  top.done();
  if (!base) throw ConfigError("ablation grid: missing 'base' config");
  if (!grid) throw ConfigError("ablation grid: missing 'grid' object");

  // axes iterate in sorted key order (json objects keep keys sorted)
  std::vector<std::string> axis_names;
  std::vector<const json*> axis_values;
  std::size_t n_cells = 1;
  for (auto it = grid->begin(); it != grid->end(); ++it) {
    if (!it.value().is_array() || it.value().empty())
      throw ConfigError("ablation grid: axis '" + it.key() +
                        "' must be a non-empty array");
    axis_names.push_back(it.key());
    axis_values.push_back(&it.value());
    n_cells *= it.value().size();
  }
  if (axis_names.empty()) throw ConfigError("ablation grid: no axes");

  struct Cell {
    std::string label;
    std::string config_text;
  };
  std::vector<Cell> cells(n_cells);
  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    json cfg = *base;
    std::string label;
    std::size_t rem = cell;
    // last axis varies fastest
    for (int a = static_cast<int>(axis_names.size()) - 1; a >= 0; --a) {
      const json& values = *axis_values[a];
      const std::size_t pick = rem % values.size();
      rem /= values.size();
      const json& value = values[pick];

      json* node = &cfg;
      std::string_view path = axis_names[a];
      while (true) {
        const std::size_t dot = path.find('.');
        if (dot == std::string_view::npos) {
          (*node)[std::string(path)] = value;
          break;
        }
        node = &(*node)[std::string(path.substr(0, dot))];
        path.remove_prefix(dot + 1);
      }

      std::string vs = value.is_string() ? value.get<std::string>() : value.dump();
      label = axis_names[a] + "=" + vs + (label.empty() ? "" : "|" + label);
    }
    cells[cell].label = label;
    cells[cell].config_text = cfg.dump();
  }

  // validate every cell before burning time on any of them
  std::vector<ExperimentConfig> cell_cfgs(n_cells);
  for (std::size_t i = 0; i < n_cells; ++i) {
    try {
      cell_cfgs[i] = parse_experiment_config(cells[i].config_text);
    } catch (const ConfigError& e) {
      throw ConfigError("ablation cell '" + cells[i].label + "': " + e.what());
    }
  }

  std::vector<RunRecord> records(n_cells);
  const int cell_threads = std::max(1, std::min<int>(threads, static_cast<int>(n_cells)));
  const int inner_threads = std::max(1, threads / cell_threads);
  parallel_for(static_cast<int>(n_cells), cell_threads, [&](int i) {
    records[i] = run_experiment(cell_cfgs[i], dataset, inner_threads, cells[i].label);
  });
  return records;
}

namespace {

std::string sanitize_label(const std::string& label) {
  std::string out = label;
  for (char& c : out)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return out;
}

struct MetricRow {
  std::string name;
  std::vector<double> values;
};

std::vector<MetricRow> metric_rows(std::span<const RunRecord> records) {
  if (records.empty()) throw std::invalid_argument("report: no run records");
  for (const RunRecord& r : records)
    if (r.tool_version != records[0].tool_version)
      throw std::runtime_error(
          "report: refusing to combine run records from different tool versions (" +
          records[0].tool_version + " vs " + r.tool_version + ")");
  for (const RunRecord& r : records) {
    if (r.report.recall_at.size() != records[0].report.recall_at.size() ||
        r.report.map_at.size() != records[0].report.map_at.size())
      throw std::runtime_error("report: run records measure different metric sets");
  }

  std::vector<MetricRow> rows;
  for (const auto& [t, v] : records[0].report.recall_at) {
    MetricRow row{"Recall@" + format_threshold(t), {}};
    for (const RunRecord& r : records) {
      auto it = r.report.recall_at.find(t);
      if (it == r.report.recall_at.end())
        throw std::runtime_error("report: run records measure different metric sets");
      row.values.push_back(it->second);
    }
    rows.push_back(std::move(row));
  }
  {
    MetricRow row{"AR", {}};
    for (const RunRecord& r : records) row.values.push_back(r.report.average_recall);
    rows.push_back(std::move(row));
  }
  for (const auto& [t, v] : records[0].report.map_at) {
    MetricRow row{"mAP@" + format_threshold(t), {}};
    for (const RunRecord& r : records) {
      auto it = r.report.map_at.find(t);
      if (it == r.report.map_at.end())
        throw std::runtime_error("report: run records measure different metric sets");
      row.values.push_back(it->second);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string report_csv(std::span<const RunRecord> records) {
  const auto rows = metric_rows(records);
  std::string out = "metric";
  for (const RunRecord& r : records) out += "," + sanitize_label(r.label);
  out += '\n';
  for (const auto& row : rows) {
    out += row.name;
    for (double v : row.values) out += "," + format_value(v);
    out += '\n';
  }
  return out;
}

std::string report_text(std::span<const RunRecord> records) {
  const auto rows = metric_rows(records);
  std::vector<std::string> headers{"metric"};
  for (const RunRecord& r : records) headers.push_back(r.label);

  std::vector<std::size_t> widths(headers.size());
  for (std::size_t c = 0; c < headers.size(); ++c) widths[c] = headers[c].size();
  for (const auto& row : rows) {
    widths[0] = std::max(widths[0], row.name.size());
    for (std::size_t c = 0; c < row.values.size(); ++c)
      widths[c + 1] = std::max(widths[c + 1], format_value(row.values[c]).size());
  }

  auto pad = [](const std::string& s, std::size_t w) {
    return s + std::string(w - s.size(), ' ');
  };

  std::string out;
  for (std::size_t c = 0; c < headers.size(); ++c)
    out += (c ? "  " : "") + pad(headers[c], widths[c]);
  out += '\n';
  for (const auto& row : rows) {
    out += pad(row.name, widths[0]);
    for (std::size_t c = 0; c < row.values.size(); ++c)
      out += "  " + pad(format_value(row.values[c]), widths[c + 1]);
    out += '\n';
  }
  return out;
}

}  // namespace proplab
