#include "proplab/postprocess.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace proplab {

namespace {

void check_unit_interval(double v, const char* what) {
  if (!(v > 0.0) || !(v < 1.0))
    throw std::invalid_argument(std::string(what) + " must be in (0, 1)");
}

std::vector<int> score_order(std::span<const ScoredBox> boxes) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return boxes[a].score > boxes[b].score;
  });
  return order;
}

}  // namespace

namespace {

std::vector<int> nms_keep_indices(std::span<const ScoredBox> boxes,
                                  double iou_threshold) {
  const auto order = score_order(boxes);
  std::vector<char> dead(boxes.size(), 0);
  std::vector<int> kept;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const int i = order[oi];
    if (dead[i]) continue;
    kept.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const int j = order[oj];
      if (!dead[j] && iou(boxes[i].box, boxes[j].box) > iou_threshold)
        dead[j] = 1;
    }
  }
  return kept;
}

}  // namespace

std::vector<ScoredBox> nms(std::span<const ScoredBox> boxes,
                           double iou_threshold) {
  check_unit_interval(iou_threshold, "nms: iou_threshold");
  std::vector<ScoredBox> out;
  for (int i : nms_keep_indices(boxes, iou_threshold)) out.push_back(boxes[i]);
  return out;
}

ScoredBox box_vote(const ScoredBox& kept, std::span<const ScoredBox> pool,
                   double vote_iou) {
  check_unit_interval(vote_iou, "box_vote: vote_iou");

  double w = kept.score;
  double x1 = kept.box.x1 * w, y1 = kept.box.y1 * w;
  double x2 = kept.box.x2 * w, y2 = kept.box.y2 * w;
  bool any_votes = false;
  for (const ScoredBox& p : pool) {
    if (iou(p.box, kept.box) < vote_iou) continue;
    any_votes = true;
    w += p.score;
    x1 += p.box.x1 * p.score;
    y1 += p.box.y1 * p.score;
    x2 += p.box.x2 * p.score;
    y2 += p.box.y2 * p.score;
  }
  // no voters (or all at score 0): the box must come back bit-identical, so
  // don't round-trip it through the weighted mean
  if (!any_votes || !(w > 0.0)) return kept;

  ScoredBox out = kept;
  out.box = Box(x1 / w, y1 / w, x2 / w, y2 / w);
  return out;
}

std::vector<ScoredBox> nms_with_voting(std::span<const ScoredBox> boxes,
                                       double nms_iou, double vote_iou) {
  check_unit_interval(nms_iou, "nms_with_voting: nms_iou");
  if (vote_iou <= 0.0) vote_iou = nms_iou;

  const std::vector<int> kept_idx = nms_keep_indices(boxes, nms_iou);
  std::vector<char> survived(boxes.size(), 0);
  for (int i : kept_idx) survived[i] = 1;

  // the suppressed boxes vote; survivors don't pull on each other
  std::vector<ScoredBox> suppressed;
  for (std::size_t i = 0; i < boxes.size(); ++i)
    if (!survived[i]) suppressed.push_back(boxes[i]);

  std::vector<ScoredBox> out;
  out.reserve(kept_idx.size());
  for (int i : kept_idx) out.push_back(box_vote(boxes[i], suppressed, vote_iou));
  return out;
}

std::vector<ScoredBox> merge_rpn(const std::vector<std::vector<ScoredBox>>& runs,
                                 double nms_iou, int top_n) {
  if (top_n <= 0) throw std::invalid_argument("merge_rpn: top_n must be > 0");
  std::vector<ScoredBox> all;
  for (const auto& run : runs) all.insert(all.end(), run.begin(), run.end());
  std::vector<ScoredBox> kept = nms(all, nms_iou);
  if (static_cast<int>(kept.size()) > top_n) kept.resize(top_n);
  return kept;
}

std::vector<FrcnDetection> merge_frcn(
    const std::vector<std::vector<FrcnDetection>>& runs) {
  if (runs.empty()) throw std::invalid_argument("merge_frcn: no runs");
  const std::size_t n = runs[0].size();
  for (const auto& run : runs)
    if (run.size() != n)
      throw std::invalid_argument("merge_frcn: runs have different lengths");

  std::vector<FrcnDetection> out(n);
  const double inv = 1.0 / static_cast<double>(runs.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t width = runs[0][i].class_scores.size();
    out[i].class_scores.assign(width, 0.0);
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    for (const auto& run : runs) {
      const FrcnDetection& d = run[i];
      if (d.class_scores.size() != width)
        throw std::invalid_argument("merge_frcn: ragged class score widths");
      for (std::size_t c = 0; c < width; ++c)
        out[i].class_scores[c] += d.class_scores[c];
      out[i].objectness += d.objectness;
      x1 += d.box.x1;
      y1 += d.box.y1;
      x2 += d.box.x2;
      y2 += d.box.y2;
    }
    for (double& s : out[i].class_scores) s *= inv;
    out[i].objectness *= inv;
    out[i].box = Box(x1 * inv, y1 * inv, x2 * inv, y2 * inv);
  }
  return out;
}

ContextPrior::ContextPrior(std::vector<double> weights)
    : weights_(std::move(weights)) {
  if (weights_.empty())
    throw std::invalid_argument("ContextPrior: empty weight vector");
  for (double w : weights_)
    if (!(w > 0.0) || !std::isfinite(w))
      throw std::invalid_argument("ContextPrior: weights must be finite and > 0");
}

bool ContextPrior::is_identity() const {
  return std::all_of(weights_.begin(), weights_.end(),
                     [](double w) { return w == 1.0; });
}

std::vector<double> apply_context_prior(std::span<const double> class_scores,
                                        const ContextPrior& prior) {
  if (class_scores.size() != prior.weights().size())
    throw std::invalid_argument(
        "apply_context_prior: score/prior dimension mismatch");
  std::vector<double> out(class_scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = class_scores[i] * prior.weights()[i];
    sum += out[i];
  }
  if (!(sum > 0.0))
    throw std::invalid_argument(
        "apply_context_prior: scores sum to zero, cannot renormalize");
  for (double& v : out) v /= sum;
  return out;
}

double nms_threshold(NmsPreset preset) {
  switch (preset) {
    case NmsPreset::kImagenet: return 0.4;
    case NmsPreset::kVoc: return 0.45;
    case NmsPreset::kCoco: return 0.45;
    case NmsPreset::kClassic: return 0.3;
  }
  throw std::invalid_argument("nms_threshold: bad preset");
}

NmsPreset parse_nms_preset(std::string_view name) {
  if (name == "imagenet") return NmsPreset::kImagenet;
  if (name == "voc") return NmsPreset::kVoc;
  if (name == "coco") return NmsPreset::kCoco;
  if (name == "classic") return NmsPreset::kClassic;
  throw std::invalid_argument("unknown nms preset: " + std::string(name) +
                              " (expected imagenet|voc|coco|classic)");
}

std::string_view to_string(NmsPreset preset) {
  switch (preset) {
    case NmsPreset::kImagenet: return "imagenet";
    case NmsPreset::kVoc: return "voc";
    case NmsPreset::kCoco: return "coco";
    case NmsPreset::kClassic: return "classic";
  }
  return "?";
}

}  // namespace proplab
