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
#include "camoseg/cff.hpp"

#include "camoseg/backbone.hpp"

namespace camoseg {

namespace F = torch::nn::functional;

ReverseEdgeAttentionImpl::ReverseEdgeAttentionImpl(int64_t fused_channels) {
  attention_conv = register_module(
      "attention_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(2, 1, 7).padding(3)));
  edge_conv = register_module(
      "edge_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(fused_channels, 1, 3).padding(1)));
}

ReaOutput ReverseEdgeAttentionImpl::forward(const torch::Tensor& guide, const torch::Tensor& fused) {
  TORCH_CHECK(guide.dim() == 4 && fused.dim() == 4, "REA expects (B, C, H, W) inputs");
  TORCH_CHECK(guide.size(0) == fused.size(0) && guide.size(2) == fused.size(2) &&
                  guide.size(3) == fused.size(3),
              "REA guide ", guide.sizes(), " and fused ", fused.sizes(), " differ in shape");
  auto pooled = torch::cat({guide.mean(1, true), std::get<0>(guide.max(1, true))}, 1);
  auto attention = torch::sigmoid(attention_conv(pooled));
  auto refined = fused * (1.0 - attention);
  return {refined, edge_conv(refined), attention};
}

namespace {

torch::nn::Sequential conv3_gn(int64_t in, int64_t out, int64_t groups) {
  return torch::nn::Sequential(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)),
                               torch::nn::GroupNorm(group_count(out, groups), out));
}

}  // namespace

CoarseToFineFusionImpl::CoarseToFineFusionImpl(int64_t dim, int64_t num_inputs, int64_t edge_levels,
                                               int64_t gn_groups)
    : dim_(dim), num_inputs_(num_inputs), edge_levels_(edge_levels) {
  TORCH_CHECK(num_inputs >= 2, "fusion needs at least two inputs");
  TORCH_CHECK(dim % 2 == 0, "fusion dim must be even");
  TORCH_CHECK(edge_levels >= 0 && edge_levels <= num_inputs - 1, "edge_levels must be in [0, ",
              num_inputs - 1, "]");
  const int64_t hidden = dim / 2;
  stage_convs = register_module("stage_convs", torch::nn::ModuleList());
  lateral_convs = register_module("lateral_convs", torch::nn::ModuleList());
  reas = register_module("reas", torch::nn::ModuleList());
  for (int64_t j = 0; j < num_inputs - 1; ++j) {
    stage_convs->push_back(conv3_gn(j == 0 ? dim : hidden, hidden, gn_groups));
    lateral_convs->push_back(conv3_gn(dim, hidden, gn_groups));
  }
  for (int64_t j = 0; j < edge_levels; ++j) reas->push_back(ReverseEdgeAttention(hidden));
  output = register_module(
      "output", torch::nn::Sequential(torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, dim, 1)),
                                      torch::nn::GroupNorm(group_count(dim, gn_groups), dim),
                                      torch::nn::ReLU()));
}

FusionOutput CoarseToFineFusionImpl::forward(const std::vector<torch::Tensor>& inputs) {
  TORCH_CHECK(static_cast<int64_t>(inputs.size()) == num_inputs_, "fusion expects ", num_inputs_,
              " inputs, got ", inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    TORCH_CHECK(inputs[i].dim() == 4 && inputs[i].size(1) == dim_, "fusion input ", i,
                " must have ", dim_, " channels");
    if (i + 1 < inputs.size()) {
      TORCH_CHECK(inputs[i].size(2) == 2 * inputs[i + 1].size(2) &&
                      inputs[i].size(3) == 2 * inputs[i + 1].size(3),
                  "fusion inputs break the 2x stride chain at input ", i, ": ",
                  inputs[i].sizes(), " vs ", inputs[i + 1].sizes());
    }
  }
  FusionOutput out;
  const int64_t junctions = num_inputs_ - 1;
  auto x = inputs.back();
  for (int64_t j = 0; j < junctions; ++j) {
    const auto& finer = inputs[junctions - 1 - j];
    x = stage_convs[j]->as<torch::nn::Sequential>()->forward(x);
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{finer.size(2), finer.size(3)})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    x = x + lateral_convs[j]->as<torch::nn::Sequential>()->forward(finer);
    const int64_t rea_index = j - (junctions - edge_levels_);
    if (rea_index >= 0) {
      auto rea = reas[rea_index]->as<ReverseEdgeAttention>()->forward(finer, x);
      x = rea.refined;
      out.edge_logits.push_back(rea.edge_logits);
    }
  }
  out.mask_feature = output->forward(x);
  return out;
}

}  // namespace camoseg
