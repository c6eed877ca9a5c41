// Copyright 2026 The camoseg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "camoseg/eval.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace camoseg {

double mask_iou(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw std::invalid_argument("mask_iou: mask shapes differ");
  auto x = a != 0;
  auto y = b != 0;
  const double inter = x.logical_and(y).sum().item<double>();
  const double uni = x.logical_or(y).sum().item<double>();
  return uni > 0.0 ? inter / uni : 0.0;
}

torch::Tensor mask_iou_matrix(const torch::Tensor& preds, const torch::Tensor& gts) {
  if (preds.dim() != 3 || gts.dim() != 3) throw std::invalid_argument("mask_iou_matrix: expected (N, H, W)");
  if (preds.size(0) > 0 && gts.size(0) > 0 &&
      (preds.size(1) != gts.size(1) || preds.size(2) != gts.size(2))) {
    throw std::invalid_argument("mask_iou_matrix: prediction and ground-truth sizes differ");
  }
  const int64_t p = preds.size(0);
  const int64_t g = gts.size(0);
  if (p == 0 || g == 0) return torch::zeros({p, g}, torch::kFloat64);
  auto a = (preds.reshape({p, -1}) != 0).to(torch::kFloat64);
  auto b = (gts.reshape({g, -1}) != 0).to(torch::kFloat64);
  auto inter = a.mm(b.t());
  auto uni = a.sum(1, true) + b.sum(1).unsqueeze(0) - inter;
  return torch::where(uni > 0, inter / uni.clamp_min(1.0), torch::zeros_like(inter));
}

std::array<double, kNumIouThresholds> iou_thresholds() {
  // Same construction as numpy.linspace(0.5, 0.95, 10).
  std::array<double, kNumIouThresholds> t{};
  const double step = (0.95 - 0.5) / (kNumIouThresholds - 1);
  for (int i = 0; i < kNumIouThresholds; ++i) t[i] = i * step + 0.5;
  t[kNumIouThresholds - 1] = 0.95;
  return t;
}

namespace {

std::array<double, kNumRecallPoints> recall_thresholds() {
  std::array<double, kNumRecallPoints> r{};
  for (int i = 0; i < kNumRecallPoints; ++i) r[i] = i * 0.01;
  r[kNumRecallPoints - 1] = 1.0;
  return r;
}

}  // namespace

void MaskApEvaluator::add_image(const torch::Tensor& gt_masks, const torch::Tensor& pred_masks,
                                const std::vector<double>& scores) {
  if (static_cast<int64_t>(scores.size()) != pred_masks.size(0)) {
    throw std::invalid_argument("add_image: one score per predicted mask required");
  }
  add_image_ious(mask_iou_matrix(pred_masks, gt_masks), gt_masks.size(0), scores);
}

void MaskApEvaluator::add_image_ious(const torch::Tensor& ious, int64_t num_gt,
                                     const std::vector<double>& scores) {
  const int64_t image = num_images_++;
  num_gt_ += num_gt;
  std::vector<int64_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t a, int64_t b) { return scores[a] > scores[b]; });
  if (order.size() > static_cast<size_t>(kMaxDetections)) order.resize(kMaxDetections);

  auto iou = ious.to(torch::kFloat64).contiguous();
  auto acc = iou.accessor<double, 2>();
  const auto thresholds = iou_thresholds();
  std::vector<Detection> dets;
  for (int64_t d : order) dets.push_back({scores[d], image, d, {}});
  for (int t = 0; t < kNumIouThresholds; ++t) {
    std::vector<bool> gt_taken(static_cast<size_t>(num_gt), false);
    for (auto& det : dets) {
      double best = std::min(thresholds[t], 1.0 - 1e-10);
      int64_t match = -1;
      for (int64_t g = 0; g < num_gt; ++g) {
        if (gt_taken[g]) continue;
        const double v = acc[det.index][g];
        if (v < best) continue;
        best = v;
        match = g;
      }
      if (match >= 0) {
        gt_taken[match] = true;
        det.matched[t] = true;
      }
    }
  }
  detections_.insert(detections_.end(), dets.begin(), dets.end());
}

void MaskApEvaluator::merge(const MaskApEvaluator& other) {
  for (auto det : other.detections_) {
    det.image += num_images_;
    detections_.push_back(det);
  }
  num_images_ += other.num_images_;
  num_gt_ += other.num_gt_;
}

ApMetrics MaskApEvaluator::summarize() const {
  ApMetrics m;
  m.num_images = num_images_;
  m.num_gt = num_gt_;
  m.num_predictions = static_cast<int64_t>(detections_.size());
  if (num_gt_ == 0) {
    m.per_threshold.fill(-1.0);
    return m;
  }

  // Images in insertion order, detections by rank within each image; a
  // stable sort keeps that order among equal scores.
  std::vector<size_t> order(detections_.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return detections_[a].score > detections_[b].score;
  });
  const auto recall_points = recall_thresholds();
  const size_t nd = order.size();
  for (int t = 0; t < kNumIouThresholds; ++t) {
    std::vector<double> recall(nd), precision(nd);
    double tp = 0.0, fp = 0.0;
    for (size_t i = 0; i < nd; ++i) {
      if (detections_[order[i]].matched[t]) {
        tp += 1.0;
      } else {
        fp += 1.0;
      }
      recall[i] = tp / static_cast<double>(num_gt_);
      precision[i] = tp / (tp + fp + std::numeric_limits<double>::epsilon());
    }
    for (size_t i = nd; i > 1; --i) precision[i - 2] = std::max(precision[i - 2], precision[i - 1]);
    double sum = 0.0;
    for (double r : recall_points) {
      auto it = std::lower_bound(recall.begin(), recall.end(), r);
      if (it != recall.end()) sum += precision[static_cast<size_t>(it - recall.begin())];
    }
    m.per_threshold[t] = sum / kNumRecallPoints;
  }
  m.ap = std::accumulate(m.per_threshold.begin(), m.per_threshold.end(), 0.0) / kNumIouThresholds;
  m.ap50 = m.per_threshold[0];
  m.ap75 = m.per_threshold[5];
  return m;
}

ApMetrics evaluate(const std::vector<EvalImage>& images) {
  MaskApEvaluator evaluator;
  for (const auto& img : images) evaluator.add_image(img.gt_masks, img.pred_masks, img.scores);
  return evaluator.summarize();
}

}  // namespace camoseg
