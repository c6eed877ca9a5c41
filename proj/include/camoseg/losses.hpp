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

#include <limits>
#include <span>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace camoseg {

struct ScaleRange {
  double lower = 0.0;
  double upper = std::numeric_limits<double>::infinity();
};

struct AssignmentOptions {
  // sqrt(mask area) ranges in pixels, one per query level.
  std::vector<ScaleRange> scale_ranges{{0.0, 96.0}, {48.0, 192.0},
                                       {96.0, std::numeric_limits<double>::infinity()}};
  double center_epsilon = 0.2;
  int64_t mask_stride = 4;
};

struct TargetAssignment {
  torch::Tensor labels;            // (L,) float, 1 for positives
  torch::Tensor matched;           // (L,) int64, GT index or -1
  torch::Tensor positive_indices;  // (P,) ascending
  torch::Tensor target_masks;      // (P, H / stride, W / stride) float {0, 1}
  std::vector<torch::Tensor> edge_labels;  // per supervised level, filled by the caller

  int64_t num_positives() const { return positive_indices.size(0); }
};

/// SOLO-style location assignment. gt_masks: (N, H, W) at the padded
/// canvas. Each instance goes to every level whose scale range holds
/// sqrt(area); on that level, cells whose centers lie within
/// mass-center +/- epsilon * extent (per axis) are positive, and so is the
/// cell holding the mass center. Smaller instances win contested cells.
TargetAssignment assign_targets(const torch::Tensor& gt_masks, std::span<const int64_t> grid_sizes,
                                const AssignmentOptions& options = {});

/// Sigmoid focal loss summed over elements, divided by max(1, #positives).
torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& targets,
                         double alpha = 0.25, double gamma = 2.0);

/// 1 - (2 sum(p t) + s) / (sum(p^2) + sum(t^2) + s) over the whole tensor.
torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target, double smooth = 1.0);

/// Same, reduced per leading index: (N, ...) -> (N,).
torch::Tensor dice_loss_per_item(const torch::Tensor& probs, const torch::Tensor& target,
                                 double smooth = 1.0);

/// Sum over levels of dice(sigmoid(logits_j), labels_j). Each level may carry
/// a batch dimension; per-level dice is averaged over it.
torch::Tensor edge_loss(const std::vector<torch::Tensor>& logits,
                        const std::vector<torch::Tensor>& labels, double smooth = 1.0);

struct LossWeights {
  double edge = 1.0;
  double location = 1.0;
  double mask = 3.0;
};

struct LossComponents {
  torch::Tensor edge;
  torch::Tensor location;
  torch::Tensor mask;
};

/// Weighted sum; throws naming the offending component if any is non-finite.
torch::Tensor total_loss(const LossComponents& components, const LossWeights& weights = {});

}  // namespace camoseg
