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
#include "camoseg/deform_attn.hpp"

#include <numbers>

namespace camoseg {

namespace F = torch::nn::functional;

torch::Tensor deformable_sample(const torch::Tensor& value, const GridLayout& layout,
                                const torch::Tensor& locations, const torch::Tensor& weights) {
  const int64_t batch = value.size(0);
  const int64_t heads = value.size(2);
  const int64_t head_dim = value.size(3);
  const int64_t num_queries = locations.size(1);
  const int64_t levels = locations.size(3);
  const int64_t points = locations.size(4);
  TORCH_CHECK(value.size(1) == layout.total(), "value length ", value.size(1),
              " does not match layout total ", layout.total());
  TORCH_CHECK(static_cast<size_t>(levels) == layout.num_levels(), "sampling locations cover ",
              levels, " levels but memory has ", layout.num_levels());
  if (num_queries == 0) return torch::zeros({batch, 0, heads * head_dim}, value.options());

  auto grids = 2.0 * locations - 1.0;
  std::vector<torch::Tensor> sampled;
  sampled.reserve(levels);
  for (int64_t l = 0; l < levels; ++l) {
    const auto& shape = layout.shapes[l];
    auto v = value.narrow(1, layout.starts[l], shape.area())
                 .permute({0, 2, 3, 1})
                 .reshape({batch * heads, head_dim, shape.height, shape.width});
    auto g = grids.select(3, l).transpose(1, 2).reshape({batch * heads, num_queries, points, 2});
    sampled.push_back(F::grid_sample(v, g,
                                     F::GridSampleFuncOptions()
                                         .mode(torch::kBilinear)
                                         .padding_mode(torch::kZeros)
                                         .align_corners(false)));
  }
  // (B*heads, head_dim, Nq, levels * points)
  auto stacked = torch::stack(sampled, -2).flatten(-2);
  auto w = weights.transpose(1, 2).reshape({batch * heads, 1, num_queries, levels * points});
  auto out = (stacked * w).sum(-1);
  return out.view({batch, heads * head_dim, num_queries}).transpose(1, 2);
}

MsDeformAttnImpl::MsDeformAttnImpl(int64_t dim, int64_t levels, int64_t heads, int64_t points)
    : dim_(dim), levels_(levels), heads_(heads), points_(points) {
  TORCH_CHECK(dim % heads == 0, "embed dim ", dim, " not divisible by ", heads, " heads");
  sampling_offsets = register_module("sampling_offsets",
                                     torch::nn::Linear(dim, heads * levels * points * 2));
  attention_weights = register_module("attention_weights",
                                      torch::nn::Linear(dim, heads * levels * points));
  value_proj = register_module("value_proj", torch::nn::Linear(dim, dim));
  output_proj = register_module("output_proj", torch::nn::Linear(dim, dim));
  reset_parameters();
}

void MsDeformAttnImpl::reset_parameters() {
  torch::NoGradGuard no_grad;
  sampling_offsets->weight.zero_();
  // Head h looks along direction 2*pi*h/heads; point k sits k+1 cells out.
  auto thetas = torch::arange(heads_, torch::kFloat32) * (2.0 * std::numbers::pi / heads_);
  auto grid = torch::stack({thetas.cos(), thetas.sin()}, -1);
  grid = grid / std::get<0>(grid.abs().max(-1, true));
  grid = grid.view({heads_, 1, 1, 2}).repeat({1, levels_, points_, 1});
  for (int64_t k = 0; k < points_; ++k) grid.select(2, k).mul_(static_cast<double>(k + 1));
  sampling_offsets->bias.copy_(grid.view({-1}));
  attention_weights->weight.zero_();
  attention_weights->bias.zero_();
  torch::nn::init::xavier_uniform_(value_proj->weight);
  value_proj->bias.zero_();
  torch::nn::init::xavier_uniform_(output_proj->weight);
  output_proj->bias.zero_();
}

torch::Tensor MsDeformAttnImpl::forward(const torch::Tensor& query,
                                        const torch::Tensor& reference_points,
                                        const torch::Tensor& value_input, const GridLayout& layout,
                                        torch::Tensor* attention_weights_out) {
  TORCH_CHECK(static_cast<int64_t>(layout.num_levels()) == levels_, "attention built for ",
              levels_, " levels, memory has ", layout.num_levels());
  TORCH_CHECK(reference_points.size(-1) == 2 && reference_points.size(-2) == levels_,
              "reference points must be (B, Nq, levels, 2)");
  const int64_t batch = query.size(0);
  const int64_t num_queries = query.size(1);
  const int64_t memory_len = value_input.size(1);

  auto value = value_proj(value_input).view({batch, memory_len, heads_, dim_ / heads_});
  auto offsets = sampling_offsets(query).view({batch, num_queries, heads_, levels_, points_, 2});
  auto weights = attention_weights(query)
                     .view({batch, num_queries, heads_, levels_ * points_})
                     .softmax(-1)
                     .view({batch, num_queries, heads_, levels_, points_});

  std::vector<double> norm_values;
  for (const auto& s : layout.shapes) {
    norm_values.push_back(static_cast<double>(s.width));
    norm_values.push_back(static_cast<double>(s.height));
  }
  auto normalizer = torch::tensor(norm_values, query.options()).view({1, 1, 1, levels_, 1, 2});
  auto refs = reference_points.view({reference_points.size(0), num_queries, 1, levels_, 1, 2});
  auto locations = refs + offsets / normalizer;

  if (attention_weights_out != nullptr) *attention_weights_out = weights;
  return output_proj(deformable_sample(value, layout, locations, weights));
}

}  // namespace camoseg
