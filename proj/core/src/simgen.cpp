#include "proplab/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace proplab {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kTagScene = stream_tag("scene-gen");
constexpr std::uint64_t kTagScore = stream_tag("oracle-score");
constexpr std::uint64_t kTagSmallBias = stream_tag("oracle-small-bias");
constexpr std::uint64_t kTagCls = stream_tag("oracle-class");

constexpr int kDatasetFormatVersion = 1;

// argmax-IoU gt for a reference box; -1 when the scene is empty
int best_gt(const Scene& scene, const Box& ref, double* best_iou_out) {
  int best = -1;
  double best_iou = 0.0;
  for (std::size_t j = 0; j < scene.objects.size(); ++j) {
    const double v = iou(ref, scene.objects[j].box);
    if (v > best_iou) {
      best_iou = v;
      best = static_cast<int>(j);
    }
  }
  *best_iou_out = best_iou;
  return best;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

std::vector<double> class_weights(const LongTailSpec& spec) {
  if (spec.n_classes <= 0)
    throw std::invalid_argument("LongTailSpec: n_classes must be > 0");
  if (!(spec.imbalance_ratio >= 1.0))
    throw std::invalid_argument("LongTailSpec: imbalance_ratio must be >= 1");
  if (!(spec.exponent > 0.0))
    throw std::invalid_argument("LongTailSpec: exponent must be > 0");

  std::vector<double> w(spec.n_classes);
  if (spec.n_classes == 1) {
    w[0] = 1.0;
    return w;
  }
  // endpoints pinned to 1 and 1/ratio; exponent shapes the path between them
  double sum = 0.0;
  for (int c = 0; c < spec.n_classes; ++c) {
    const double frac = static_cast<double>(c) / (spec.n_classes - 1);
    w[c] = std::pow(spec.imbalance_ratio, -std::pow(frac, spec.exponent));
    sum += w[c];
  }
  for (double& v : w) v /= sum;
  return w;
}

Dataset generate_dataset(const SceneGenConfig& cfg, std::uint64_t seed) {
  if (cfg.n_scenes < 0) throw std::invalid_argument("generate_dataset: n_scenes < 0");
  if (!(cfg.canvas_width > 0.0) || !(cfg.canvas_height > 0.0))
    throw std::invalid_argument("generate_dataset: canvas must be positive");
  if (cfg.objects_min < 0 || cfg.objects_max < cfg.objects_min)
    throw std::invalid_argument("generate_dataset: bad objects_min/objects_max");
  if (cfg.negative_fraction < 0.0 || cfg.negative_fraction > 1.0)
    throw std::invalid_argument("generate_dataset: negative_fraction outside [0, 1]");
  if (!(cfg.min_object_side > 0.0))
    throw std::invalid_argument("generate_dataset: min_object_side must be > 0");
  if (!(cfg.max_object_frac > 0.0) || cfg.max_object_frac > 1.0)
    throw std::invalid_argument("generate_dataset: max_object_frac outside (0, 1]");

  const double short_side = std::min(cfg.canvas_width, cfg.canvas_height);
  const double max_side = cfg.max_object_frac * short_side;
  if (max_side < cfg.min_object_side)
    throw std::invalid_argument("generate_dataset: canvas too small for min_object_side");

  const std::vector<double> weights = class_weights(cfg.classes);

  Dataset ds;
  ds.n_classes = cfg.classes.n_classes;
  ds.scenes.resize(cfg.n_scenes);

  for (int s = 0; s < cfg.n_scenes; ++s) {
    Rng rng = Rng::keyed(seed, kTagScene, static_cast<std::uint64_t>(s));
    Scene& scene = ds.scenes[s];
    scene.id = s;
    scene.width = cfg.canvas_width;
    scene.height = cfg.canvas_height;

    if (rng.bernoulli(cfg.negative_fraction)) continue;  // negative scene

    const int n_obj = rng.uniform_int(cfg.objects_min, cfg.objects_max);
    for (int o = 0; o < n_obj; ++o) {
      bool placed = false;
      for (int attempt = 0; attempt < cfg.max_placement_retries; ++attempt) {
        // log-uniform size, log-uniform aspect in [1/2, 2]
        const double side = std::exp(
            rng.uniform(std::log(cfg.min_object_side), std::log(max_side)));
        const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
        const double w = side * std::sqrt(aspect);
        const double h = side / std::sqrt(aspect);
        if (w > cfg.canvas_width || h > cfg.canvas_height) continue;

        const double x1 = rng.uniform(0.0, cfg.canvas_width - w);
        const double y1 = rng.uniform(0.0, cfg.canvas_height - h);
        const Box cand(x1, y1, x1 + w, y1 + h);

        bool crowded = false;
        for (const GtBox& g : scene.objects)
          if (iou(cand, g.box) > cfg.max_gt_iou) {
            crowded = true;
            break;
          }
        if (crowded) continue;

        GtBox g;
        g.box = cand;
        // inverse-CDF draw over the class weights
        double u = rng.uniform01();
        int cls = 0;
        for (; cls + 1 < static_cast<int>(weights.size()); ++cls) {
          if (u < weights[cls]) break;
          u -= weights[cls];
        }
        g.class_id = cls;
        g.difficult = false;
        scene.objects.push_back(g);
        placed = true;
        break;
      }
      if (!placed)
        throw std::runtime_error("generate_dataset: could not place object " +
                                 std::to_string(o) + " in scene " +
                                 std::to_string(s) + " after " +
                                 std::to_string(cfg.max_placement_retries) +
                                 " attempts");
    }
  }
  return ds;
}

OracleScorer::OracleScorer(const Scene& scene, const NoiseModel& noise,
                           int stage, std::uint64_t run_tag,
                           double extra_score_sigma)
    : scene_(&scene),
      noise_(noise),
      stage_(stage),
      run_tag_(run_tag),
      extra_score_sigma_(extra_score_sigma) {
  if (stage != 1 && stage != 2)
    throw std::invalid_argument("OracleScorer: stage must be 1 or 2");
  if (extra_score_sigma < 0.0)
    throw std::invalid_argument("OracleScorer: negative extra_score_sigma");
}

std::vector<ScorerOutput> OracleScorer::score_and_regress(
    std::span<const Box> references) const {
  const double shrink =
      stage_ == 1 ? noise_.stage1_shrink : noise_.stage2_shrink;
  const double reg_sigma =
      stage_ == 1 ? noise_.stage1_reg_sigma : noise_.stage2_reg_sigma;
  const double score_sigma = noise_.score_sigma + extra_score_sigma_;

  // The second pass misregresses small objects systematically: one bias per
  // (gt, run), shared by every box matched to that gt, so extra candidates
  // cannot average it away. Separate augmentation runs draw fresh biases.
  std::vector<RegressionDelta> small_bias(scene_->objects.size());
  if (stage_ == 2 && noise_.stage2_small_extra_sigma > 0.0) {
    for (std::size_t g = 0; g < scene_->objects.size(); ++g) {
      const double side =
          std::sqrt(std::max(scene_->objects[g].box.area(), 0.0));
      const double deficit = std::max(0.0, 1.0 - side / 64.0);
      if (deficit <= 0.0) continue;
      const double sigma = noise_.stage2_small_extra_sigma * deficit;
      Rng rng = Rng::keyed(noise_.seed, kTagSmallBias,
                           static_cast<std::uint64_t>(scene_->id), run_tag_,
                           static_cast<std::uint64_t>(g));
      small_bias[g].tx = rng.normal(0.0, sigma);
      small_bias[g].ty = rng.normal(0.0, sigma);
      small_bias[g].tw = rng.normal(0.0, sigma);
      small_bias[g].th = rng.normal(0.0, sigma);
    }
  }

  std::vector<ScorerOutput> out(references.size());
  for (std::size_t i = 0; i < references.size(); ++i) {
    const Box& ref = references[i];
    Rng rng = Rng::keyed(noise_.seed, kTagScore,
                         static_cast<std::uint64_t>(scene_->id),
                         static_cast<std::uint64_t>(stage_), run_tag_,
                         static_cast<std::uint64_t>(i));

    double best_iou = 0.0;
    const int gt = best_gt(*scene_, ref, &best_iou);

    RegressionDelta d;
    if (gt >= 0) {
      const Box safe_ref = ensure_min_extent(ref, 1e-6);
      d = encode(scene_->objects[gt].box, safe_ref);
      d.tx *= shrink;
      d.ty *= shrink;
      d.tw *= shrink;
      d.th *= shrink;
      // a reference already sitting on its gt stays put
      if (std::abs(d.tx) < 1e-12 && std::abs(d.ty) < 1e-12 &&
          std::abs(d.tw) < 1e-12 && std::abs(d.th) < 1e-12)
        d = RegressionDelta{};
      if (stage_ == 2) {
        d.tx += small_bias[gt].tx;
        d.ty += small_bias[gt].ty;
        d.tw += small_bias[gt].tw;
        d.th += small_bias[gt].th;
      }
    }
    d.tx += rng.normal(0.0, reg_sigma);
    d.ty += rng.normal(0.0, reg_sigma);
    d.tw += rng.normal(0.0, reg_sigma);
    d.th += rng.normal(0.0, reg_sigma);

    out[i].delta = d;
    out[i].objectness = clamp01(best_iou + rng.normal(0.0, score_sigma));
  }
  return out;
}

ClassificationOracle::ClassificationOracle(const Scene& scene, int n_classes,
                                           const ClassifierModel& model,
                                           std::uint64_t seed,
                                           std::uint64_t run_tag)
    : scene_(&scene),
      n_classes_(n_classes),
      model_(model),
      seed_(seed),
      run_tag_(run_tag) {
  if (n_classes <= 0)
    throw std::invalid_argument("ClassificationOracle: n_classes must be > 0");
  if (model.confusion_weight < 0.0 || model.confusion_weight >= 1.0)
    throw std::invalid_argument(
        "ClassificationOracle: confusion_weight outside [0, 1)");
}

std::vector<FrcnDetection> ClassificationOracle::evaluate(
    std::span<const Box> proposals) const {
  std::vector<FrcnDetection> out(proposals.size());
  const double floor_w = 0.02 / n_classes_;  // keeps every class strictly positive

  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const Box& ref = proposals[i];
    Rng rng = Rng::keyed(seed_, kTagCls, static_cast<std::uint64_t>(scene_->id),
                         run_tag_, static_cast<std::uint64_t>(i));

    double best_iou = 0.0;
    const int gt = best_gt(*scene_, ref, &best_iou);

    // box refinement, same delta-space mechanics as the proposal stages
    const Box safe_ref = ensure_min_extent(ref, 1e-6);
    RegressionDelta d;
    if (gt >= 0) {
      d = encode(scene_->objects[gt].box, safe_ref);
      d.tx *= model_.reg_shrink;
      d.ty *= model_.reg_shrink;
      d.tw *= model_.reg_shrink;
      d.th *= model_.reg_shrink;
    }
    d.tx += rng.normal(0.0, model_.reg_sigma);
    d.ty += rng.normal(0.0, model_.reg_sigma);
    d.tw += rng.normal(0.0, model_.reg_sigma);
    d.th += rng.normal(0.0, model_.reg_sigma);
    out[i].box = decode(d, safe_ref);

    // class posterior: true class holds most of the mass, the partner class
    // (c ^ 1) steals confusion_weight of it, everything else sits at a floor
    std::vector<double> w(n_classes_, floor_w);
    if (gt >= 0 && best_iou >= model_.match_iou) {
      const int truth = scene_->objects[gt].class_id;
      const int partner = (truth ^ 1) < n_classes_ ? (truth ^ 1) : truth;
      w[truth] = 1.0 - model_.confusion_weight;
      if (partner != truth) w[partner] += model_.confusion_weight;
    }
    double sum = 0.0;
    for (int c = 0; c < n_classes_; ++c) {
      w[c] = std::exp(std::log(w[c]) + rng.normal(0.0, model_.class_logit_sigma));
      sum += w[c];
    }
    out[i].class_scores.resize(n_classes_);
    for (int c = 0; c < n_classes_; ++c) out[i].class_scores[c] = w[c] / sum;

    out[i].objectness = clamp01(best_iou + rng.normal(0.0, model_.objectness_sigma));
  }
  return out;
}

ContextPrior context_prior_for(const Scene& scene, int n_classes, double alpha) {
  if (n_classes <= 0)
    throw std::invalid_argument("context_prior_for: n_classes must be > 0");
  if (alpha < 0.0)
    throw std::invalid_argument("context_prior_for: alpha must be >= 0");
  std::vector<double> w(n_classes, 1.0);
  for (const GtBox& g : scene.objects)
    if (g.class_id >= 0 && g.class_id < n_classes) w[g.class_id] = 1.0 + alpha;
  return ContextPrior(std::move(w));
}

RenderedScene render_at_scale(const Scene& scene, double short_side) {
  if (!(short_side > 0.0))
    throw std::invalid_argument("render_at_scale: short_side must be > 0");
  if (!(scene.width > 0.0) || !(scene.height > 0.0))
    throw std::invalid_argument("render_at_scale: empty canvas");

  RenderedScene out;
  out.factor = short_side / std::min(scene.width, scene.height);
  out.scene.id = scene.id;
  out.scene.width = scene.width * out.factor;
  out.scene.height = scene.height * out.factor;
  out.scene.objects = scene.objects;
  for (GtBox& g : out.scene.objects) g.box = rescale(g.box, out.factor);
  return out;
}

Scene flip_scene(const Scene& scene) {
  Scene out = scene;
  for (GtBox& g : out.objects) g.box = flip_h(g.box, scene.width);
  return out;
}

std::vector<std::vector<int>> images_by_class(const Dataset& dataset) {
  std::vector<std::vector<int>> lists(dataset.n_classes);
  for (std::size_t i = 0; i < dataset.scenes.size(); ++i) {
    std::vector<char> seen(dataset.n_classes, 0);
    for (const GtBox& g : dataset.scenes[i].objects) {
      if (g.class_id < 0 || g.class_id >= dataset.n_classes || seen[g.class_id])
        continue;
      seen[g.class_id] = 1;
      lists[g.class_id].push_back(static_cast<int>(i));
    }
  }
  return lists;
}

std::string dataset_to_text(const Dataset& dataset) {
  std::string out;
  json header;
  header["dataset"] = {{"format_version", kDatasetFormatVersion},
                       {"n_classes", dataset.n_classes},
                       {"n_scenes", dataset.scenes.size()}};
  out += header.dump();
  out += '\n';

  for (const Scene& s : dataset.scenes) {
    json objs = json::array();
    for (const GtBox& g : s.objects)
      objs.push_back({g.box.x1, g.box.y1, g.box.x2, g.box.y2, g.class_id,
                      g.difficult ? 1 : 0});
    json rec;
    rec["scene"] = {{"id", s.id},
                    {"width", s.width},
                    {"height", s.height},
                    {"objects", std::move(objs)}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

Dataset dataset_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;

  auto fail = [&](const std::string& what) -> std::runtime_error {
    return std::runtime_error("dataset line " + std::to_string(line_no) + ": " + what);
  };

  Dataset ds;
  bool have_header = false;
  std::size_t declared_scenes = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw fail(std::string("not valid JSON (") + e.what() + ")");
    }
    if (!have_header) {
      if (!rec.contains("dataset")) throw fail("expected dataset header record");
      const json& h = rec["dataset"];
      if (h.value("format_version", -1) != kDatasetFormatVersion)
        throw fail("unsupported dataset format_version");
      ds.n_classes = h.at("n_classes").get<int>();
      declared_scenes = h.at("n_scenes").get<std::size_t>();
      have_header = true;
      continue;
    }
    if (!rec.contains("scene")) throw fail("expected scene record");
    const json& sj = rec["scene"];
    Scene s;
    s.id = sj.at("id").get<int>();
    s.width = sj.at("width").get<double>();
    s.height = sj.at("height").get<double>();
    for (const json& oj : sj.at("objects")) {
      if (!oj.is_array() || oj.size() != 6)
        throw fail("object tuple must be [x1, y1, x2, y2, class_id, difficult]");
      GtBox g;
      g.box = Box(oj[0].get<double>(), oj[1].get<double>(), oj[2].get<double>(),
                  oj[3].get<double>());
      g.class_id = oj[4].get<int>();
      g.difficult = oj[5].get<int>() != 0;
      if (g.class_id < 0 || g.class_id >= ds.n_classes)
        throw fail("class_id outside the declared catalog");
      s.objects.push_back(g);
    }
    ds.scenes.push_back(std::move(s));
  }
  if (!have_header) throw std::runtime_error("dataset: missing header record");
  if (ds.scenes.size() != declared_scenes)
    throw std::runtime_error("dataset: header declares " +
                             std::to_string(declared_scenes) + " scenes, found " +
                             std::to_string(ds.scenes.size()));
  return ds;
}

void write_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  const std::string text = dataset_to_text(dataset);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return dataset_from_text(buf.str());
}

}  // namespace proplab
