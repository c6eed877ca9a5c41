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

#include <vector>

#include <torch/torch.h>

namespace camoseg {

struct ReaOutput {
  torch::Tensor refined;      // fused * (1 - attention)
  torch::Tensor edge_logits;  // (B, 1, h, w)
  torch::Tensor attention;    // (B, 1, h, w), in (0, 1)
};

/// Reverse edge attention. Channel-wise mean and max of the guide feature
/// feed a 7x7 conv + sigmoid; the complement of that map reweights the fused
/// feature, and a 3x3 conv reads edge logits off the result.
class ReverseEdgeAttentionImpl : public torch::nn::Module {
 public:
  explicit ReverseEdgeAttentionImpl(int64_t fused_channels);
  ReaOutput forward(const torch::Tensor& guide, const torch::Tensor& fused);

  torch::nn::Conv2d attention_conv{nullptr};
  torch::nn::Conv2d edge_conv{nullptr};
};
TORCH_MODULE(ReverseEdgeAttention);

struct FusionOutput {
  torch::Tensor mask_feature;              // (B, D, H/4, W/4)
  std::vector<torch::Tensor> edge_logits;  // coarse to fine, one per REA
};

/// Coarse-to-fine cascade. Inputs are given fine to coarse (stride 4, 8,
/// 16, 32), each with `dim` channels. Starting from the coarsest input,
/// every stage runs Conv3x3 -> GN -> 2x bilinear upsample, adds the reduced
/// next-finer input and passes the sum through REA (for the last
/// `edge_levels` junctions). The stride-4 result goes through
/// Conv1x1 -> GN -> ReLU back to `dim` channels.
class CoarseToFineFusionImpl : public torch::nn::Module {
 public:
  CoarseToFineFusionImpl(int64_t dim, int64_t num_inputs = 4, int64_t edge_levels = 3,
                         int64_t gn_groups = 32);
  FusionOutput forward(const std::vector<torch::Tensor>& inputs);

  int64_t dim() const { return dim_; }
  int64_t hidden_dim() const { return dim_ / 2; }
  int64_t edge_levels() const { return edge_levels_; }

  torch::nn::ModuleList stage_convs{nullptr};    // coarse to fine
  torch::nn::ModuleList lateral_convs{nullptr};  // one per junction, coarse to fine
  torch::nn::ModuleList reas{nullptr};           // one per supervised junction
  torch::nn::Sequential output{nullptr};

 private:
  int64_t dim_;
  int64_t num_inputs_;
  int64_t edge_levels_;
};
TORCH_MODULE(CoarseToFineFusion);

}  // namespace camoseg
