#include "proplab/cascade.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "proplab/postprocess.hpp"

namespace proplab {

namespace {

std::vector<Box> boxes_of(std::span<const Anchor> anchors) {
  std::vector<Box> refs;
  refs.reserve(anchors.size());
  for (const Anchor& a : anchors) refs.push_back(a.box);
  return refs;
}

void check_scorer_output(std::size_t got, std::size_t want) {
  if (got != want)
    throw std::runtime_error("scorer returned " + std::to_string(got) +
                             " outputs for " + std::to_string(want) +
                             " references");
}

}  // namespace

std::vector<Proposal> stage1(std::span<const Anchor> anchors,
                             const Scorer& scorer, double image_w,
                             double image_h) {
  if (anchors.empty()) throw std::invalid_argument("stage1: no anchors");

  const std::vector<Box> refs = boxes_of(anchors);
  const std::vector<ScorerOutput> outs = scorer.score_and_regress(refs);
  check_scorer_output(outs.size(), anchors.size());

  std::vector<Proposal> props(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    props[i].box = clip_to(decode(outs[i].delta, anchors[i].box), image_w, image_h);
    props[i].objectness = outs[i].objectness;
    props[i].parent_anchor = static_cast<int>(i);
    props[i].stage = 1;
  }
  return props;
}

std::vector<Proposal> stage2(std::span<const Proposal> stage1_out,
                             std::span<const Anchor> anchors,
                             const Scorer& scorer, double image_w,
                             double image_h) {
  if (stage1_out.size() != anchors.size())
    throw std::invalid_argument("stage2: stage-1 list and anchor list differ in length");
  for (std::size_t i = 0; i < stage1_out.size(); ++i)
    if (stage1_out[i].parent_anchor != static_cast<int>(i))
      throw std::invalid_argument("stage2: stage-1 proposals not index-aligned with anchors");

  std::vector<Box> refs;
  refs.reserve(stage1_out.size());
  for (const Proposal& p : stage1_out)
    refs.push_back(ensure_min_extent(p.box, 1.0));

  const std::vector<ScorerOutput> outs = scorer.score_and_regress(refs);
  check_scorer_output(outs.size(), stage1_out.size());

  std::vector<Proposal> props(stage1_out.size());
  for (std::size_t i = 0; i < stage1_out.size(); ++i) {
    props[i].box = clip_to(decode(outs[i].delta, refs[i]), image_w, image_h);
    props[i].objectness = outs[i].objectness;
    props[i].parent_anchor = stage1_out[i].parent_anchor;
    props[i].stage = 2;
  }
  return props;
}

std::vector<Proposal> fuse_by_size(std::span<const Proposal> s1,
                                   std::span<const Proposal> s2,
                                   double threshold_area, SizeKey key) {
  if (s1.size() != s2.size())
    throw std::invalid_argument("fuse_by_size: stage lists differ in length");
  if (threshold_area < 0.0)
    throw std::invalid_argument("fuse_by_size: negative area threshold");

  std::vector<Proposal> out(s1.size());
  for (std::size_t i = 0; i < s1.size(); ++i) {
    const Box& keyed = key == SizeKey::kStage1Box ? s1[i].box : s2[i].box;
    out[i] = keyed.area() < threshold_area ? s1[i] : s2[i];
  }
  return out;
}

std::vector<ScoredBox> finalize_proposals(std::span<const Proposal> proposals,
                                          double nms_iou, int top_n,
                                          int pre_nms_top_n) {
  if (top_n <= 0)
    throw std::invalid_argument("finalize_proposals: top_n must be > 0");

  std::vector<ScoredBox> scored(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i)
    scored[i] = {proposals[i].box, proposals[i].objectness, kNoClass};

  if (pre_nms_top_n > 0 && static_cast<int>(scored.size()) > pre_nms_top_n) {
    std::vector<int> order(scored.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return scored[a].score > scored[b].score;
    });
    std::vector<ScoredBox> cut;
    cut.reserve(pre_nms_top_n);
    for (int i = 0; i < pre_nms_top_n; ++i) cut.push_back(scored[order[i]]);
    scored.swap(cut);
  }

  std::vector<ScoredBox> kept = nms(scored, nms_iou);
  if (static_cast<int>(kept.size()) > top_n) kept.resize(top_n);
  return kept;
}

}  // namespace proplab
