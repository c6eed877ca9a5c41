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

#include <torch/torch.h>

namespace camoseg {

struct HeadOptions {
  double score_threshold = 0.5;
  double nms_sigma = 2.0;
  int64_t pre_nms_top_k = 500;
  int64_t max_instances = 100;
  double score_floor = 0.05;
  int64_t min_area = 4;  // pixels at stride 4
  double mask_threshold = 0.5;
  bool matrix_nms = true;  // false keeps raw confidences (ablation)
};

struct LocationPredictions {
  torch::Tensor logits;         // (B, L)
  torch::Tensor confidence;     // sigmoid(logits)
  torch::Tensor kernel_params;  // (B, L, D)
};

struct InstanceSet {
  torch::Tensor masks;   // (N, H, W) uint8
  torch::Tensor scores;  // (N,) descending
  torch::Tensor omega;   // (N, D)
  torch::Tensor beta;    // (N, 1)
  torch::Tensor cells;   // (N,) query index each instance came from

  int64_t size() const { return scores.defined() ? scores.size(0) : 0; }
};

/// logits = upsample_x4(omega . F + beta). F: (D, h, w). Returns (N, 4h, 4w),
/// or (N, h, w) when `upsample` is false.
torch::Tensor synthesize_masks(const torch::Tensor& omega, const torch::Tensor& beta,
                               const torch::Tensor& mask_feature, bool upsample = true);

/// Indices (ascending) of cells with confidence strictly above `threshold`.
torch::Tensor suppress(const torch::Tensor& confidence, double threshold);

/// Gaussian Matrix NMS. masks: (N, h, w) binary, scores: (N,). Returns the
/// decayed scores in input order; masks are ranked by score (stable).
torch::Tensor matrix_nms(const torch::Tensor& masks, const torch::Tensor& scores, double sigma = 2.0);

/// Location branch (one FC -> sigmoid), kernel branch (2-layer MLP), and the
/// two linear maps turning a kernel into (omega, beta).
class DcinHeadImpl : public torch::nn::Module {
 public:
  explicit DcinHeadImpl(int64_t dim, double prior_prob = 0.01);

  LocationPredictions predict_locations(const torch::Tensor& embeddings);
  std::pair<torch::Tensor, torch::Tensor> affine_params(const torch::Tensor& kernels);

  // Single image: confidence (L,), kernels (L, D), mask feature (D, h, w).
  // Masks are returned at (4h, 4w).
  InstanceSet infer(const torch::Tensor& confidence, const torch::Tensor& kernels,
                    const torch::Tensor& mask_feature, const HeadOptions& options);

  torch::nn::Linear location_fc{nullptr};
  torch::nn::Sequential kernel_mlp{nullptr};
  torch::nn::Linear omega_fc{nullptr};
  torch::nn::Linear beta_fc{nullptr};
};
TORCH_MODULE(DcinHead);

}  // namespace camoseg
