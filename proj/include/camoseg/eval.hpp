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
#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

// Class-agnostic COCO-style mask AP.
namespace camoseg {

// |a & b| / |a | b|; 0 when the union is empty. Throws on shape mismatch.
double mask_iou(const torch::Tensor& a, const torch::Tensor& b);

// preds: (P, H, W), gts: (G, H, W) -> (P, G) float64.
torch::Tensor mask_iou_matrix(const torch::Tensor& preds, const torch::Tensor& gts);

inline constexpr int kNumIouThresholds = 10;  // 0.50:0.05:0.95
inline constexpr int kNumRecallPoints = 101;
inline constexpr int kMaxDetections = 100;

std::array<double, kNumIouThresholds> iou_thresholds();

struct ApMetrics {
  // -1 when the dataset holds no ground truth.
  double ap = -1.0;
  double ap50 = -1.0;
  double ap75 = -1.0;
  std::array<double, kNumIouThresholds> per_threshold{-1, -1, -1, -1, -1, -1, -1, -1, -1, -1};
  int64_t num_images = 0;
  int64_t num_gt = 0;
  int64_t num_predictions = 0;

  bool defined() const { return num_gt > 0; }
};

struct EvalImage {
  torch::Tensor gt_masks;    // (G, H, W)
  torch::Tensor pred_masks;  // (P, H, W)
  std::vector<double> scores;
};

/// Accumulates per-image greedy matches; summarize() computes 101-point
/// interpolated AP per IoU threshold. Images are independent, so partial
/// evaluators can be merged.
class MaskApEvaluator {
 public:
  void add_image(const torch::Tensor& gt_masks, const torch::Tensor& pred_masks,
                 const std::vector<double>& scores);
  // Same, with a precomputed (P, G) IoU matrix.
  void add_image_ious(const torch::Tensor& ious, int64_t num_gt, const std::vector<double>& scores);
  void merge(const MaskApEvaluator& other);
  ApMetrics summarize() const;

 private:
  struct Detection {
    double score;
    int64_t image;
    int64_t index;
    std::array<bool, kNumIouThresholds> matched;
  };
  std::vector<Detection> detections_;
  int64_t num_images_ = 0;
  int64_t num_gt_ = 0;
};

ApMetrics evaluate(const std::vector<EvalImage>& images);

}  // namespace camoseg
