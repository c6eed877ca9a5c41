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

#include "camoseg/backbone.hpp"

namespace camoseg {

/// Multi-scale deformable attention sampling core.
///
///   value:      (B, M, heads, head_dim), canonical token order for `layout`
///   locations:  (B, Nq, heads, levels, points, 2) normalized (x, y)
///   weights:    (B, Nq, heads, levels, points)
///
/// Each location is sampled bilinearly (pixel centers at (i + 0.5) / size,
/// zero outside the map) and the samples are combined with `weights`.
/// Returns (B, Nq, heads * head_dim).
torch::Tensor deformable_sample(const torch::Tensor& value, const GridLayout& layout,
                                const torch::Tensor& locations, const torch::Tensor& weights);

/// Multi-head multi-scale deformable attention. Each query predicts `points`
/// sampling offsets per head and level around its reference point, plus
/// softmax-normalized weights across (levels x points).
class MsDeformAttnImpl : public torch::nn::Module {
 public:
  MsDeformAttnImpl(int64_t dim, int64_t levels, int64_t heads, int64_t points);

  /// Zero offset weights with the directional bias pattern, zero attention
  /// logits, xavier value/output projections.
  void reset_parameters();

  /// query: (B, Nq, D); reference_points: (B or 1, Nq, levels, 2) in [0, 1];
  /// value_input: (B, M, D) canonical order. When `attention_weights` is
  /// non-null it receives the normalized weights (B, Nq, heads, levels, points).
  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& reference_points,
                        const torch::Tensor& value_input, const GridLayout& layout,
                        torch::Tensor* attention_weights = nullptr);

  int64_t dim() const { return dim_; }
  int64_t levels() const { return levels_; }
  int64_t heads() const { return heads_; }
  int64_t points() const { return points_; }

  torch::nn::Linear sampling_offsets{nullptr};
  torch::nn::Linear attention_weights{nullptr};
  torch::nn::Linear value_proj{nullptr};
  torch::nn::Linear output_proj{nullptr};

 private:
  int64_t dim_, levels_, heads_, points_;
};
TORCH_MODULE(MsDeformAttn);

}  // namespace camoseg
