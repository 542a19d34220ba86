#include "proplab/sampling.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace proplab {

namespace {

void validate_np(const NPConfig& cfg) {
  if (cfg.batch_size <= 0) throw std::invalid_argument("NPConfig: batch_size must be > 0");
  if (!(cfg.max_np_ratio > 0.0)) throw std::invalid_argument("NPConfig: max_np_ratio must be > 0");
  if (cfg.min_batch_size < 0 || cfg.min_batch_size > cfg.batch_size)
    throw std::invalid_argument("NPConfig: min_batch_size outside [0, batch_size]");
}

}  // namespace

AnchorLabeling label_anchors(std::span<const Anchor> anchors,
                             std::span<const Box> gts, double pos_iou,
                             double neg_iou) {
  if (!(pos_iou > 0.0) || !(neg_iou >= 0.0) || neg_iou > pos_iou)
    throw std::invalid_argument("label_anchors: need 0 <= neg_iou <= pos_iou");

  const int n = static_cast<int>(anchors.size());
  const int g = static_cast<int>(gts.size());
  AnchorLabeling out;
  out.max_iou.assign(n, 0.0);
  out.matched_gt.assign(n, -1);

  std::vector<double> gt_best(g, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < g; ++j) {
      const double v = iou(anchors[i].box, gts[j]);
      if (v > out.max_iou[i]) {
        out.max_iou[i] = v;
        out.matched_gt[i] = j;
      }
      if (v > gt_best[j]) gt_best[j] = v;
    }
  }

  std::vector<char> is_pos(n, 0);
  for (int i = 0; i < n; ++i)
    if (out.max_iou[i] >= pos_iou && out.matched_gt[i] >= 0) is_pos[i] = 1;
  // argmax rule: anchors tied at a gt's best overlap are positive too
  for (int i = 0; i < n; ++i) {
    if (is_pos[i]) continue;
    for (int j = 0; j < g; ++j) {
      if (gt_best[j] > 0.0 && iou(anchors[i].box, gts[j]) == gt_best[j]) {
        is_pos[i] = 1;
        if (out.matched_gt[i] < 0) out.matched_gt[i] = j;
        break;
      }
    }
  }

  for (int i = 0; i < n; ++i) {
    if (is_pos[i])
      out.positives.push_back(i);
    else if (out.max_iou[i] < neg_iou)
      out.negatives.push_back(i);
  }
  return out;
}

double BatchSample::np_ratio() const {
  if (pos.empty())
    return neg.empty() ? 0.0 : std::numeric_limits<double>::infinity();
  return static_cast<double>(neg.size()) / static_cast<double>(pos.size());
}

std::vector<int> sample_without_replacement(std::span<const int> pool, int k,
                                            Rng& rng) {
  const int n = static_cast<int>(pool.size());
  if (k < 0) throw std::invalid_argument("sample_without_replacement: k < 0");
  k = std::min(k, n);
  std::vector<int> scratch(pool.begin(), pool.end());
  std::vector<int> out;
  out.reserve(k);
  // partial Fisher-Yates; exactly uniform over k-subsets
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(scratch[i], scratch[j]);
    out.push_back(scratch[i]);
  }
  return out;
}

BatchSample constrained_np_sample(const AnchorLabeling& labeling,
                                  const NPConfig& cfg, Rng& rng) {
  validate_np(cfg);
  const int avail_pos = static_cast<int>(labeling.positives.size());
  const int avail_neg = static_cast<int>(labeling.negatives.size());

  const int n_pos = std::min(avail_pos, cfg.batch_size / 2);
  const int ratio_cap = static_cast<int>(n_pos * cfg.max_np_ratio);
  const int floor_need = cfg.min_batch_size - n_pos;
  int n_neg = std::max(ratio_cap, std::max(floor_need, 0));
  n_neg = std::min({n_neg, avail_neg, cfg.batch_size - n_pos});

  BatchSample out;
  out.pos = sample_without_replacement(labeling.positives, n_pos, rng);
  out.neg = sample_without_replacement(labeling.negatives, n_neg, rng);
  out.floor_bound = n_neg > ratio_cap;
  return out;
}

BatchSample naive_np_sample(const AnchorLabeling& labeling, const NPConfig& cfg,
                            Rng& rng) {
  validate_np(cfg);
  const int n_pos =
      std::min(static_cast<int>(labeling.positives.size()), cfg.batch_size / 2);
  const int n_neg = std::min(static_cast<int>(labeling.negatives.size()),
                             cfg.batch_size - n_pos);
  BatchSample out;
  out.pos = sample_without_replacement(labeling.positives, n_pos, rng);
  out.neg = sample_without_replacement(labeling.negatives, n_neg, rng);
  return out;
}

BalancedSampler::BalancedSampler(std::vector<std::vector<int>> images_by_class,
                                 Rng rng)
    : images_by_class_(std::move(images_by_class)), rng_(rng) {
  for (int c = 0; c < static_cast<int>(images_by_class_.size()); ++c)
    if (!images_by_class_[c].empty()) usable_.push_back(c);
  if (usable_.empty())
    throw std::invalid_argument("BalancedSampler: no class has any image");
}

int BalancedSampler::next() {
  const int c = usable_[rng_.below(usable_.size())];
  const auto& imgs = images_by_class_[c];
  return imgs[rng_.below(imgs.size())];
}

TrainingBatch negative_image_batch(std::span<const Box> gts, int anchor_count,
                                   const NPConfig& cfg, Rng& rng) {
  if (!gts.empty())
    throw std::invalid_argument(
        "negative_image_batch: image has ground truth, use the regular sampler");
  if (anchor_count < 0)
    throw std::invalid_argument("negative_image_batch: anchor_count < 0");
  validate_np(cfg);

  std::vector<int> all(anchor_count);
  std::iota(all.begin(), all.end(), 0);
  const int take = std::min(cfg.min_batch_size, anchor_count);

  TrainingBatch batch;
  for (int idx : sample_without_replacement(all, take, rng))
    batch.cls.push_back({idx, 0});
  return batch;
}

std::vector<int> ohem_select(std::span<const double> losses, int forward_n,
                             int backward_k) {
  if (forward_n <= 0 || backward_k <= 0)
    throw std::invalid_argument("ohem_select: forward_n and backward_k must be > 0");
  const int n = static_cast<int>(losses.size());
  if (n > forward_n)
    throw std::invalid_argument("ohem_select: more candidates than forward_n");

  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const int k = std::min(backward_k, n);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](int a, int b) {
                      if (losses[a] != losses[b]) return losses[a] > losses[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

}  // namespace proplab
