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
#include "camoseg/lst.hpp"

namespace camoseg {

namespace F = torch::nn::functional;

namespace {

// (M, 2) centers -> (1, M, levels, 2) reference points.
torch::Tensor replicate_refs(const torch::Tensor& centers, int64_t levels,
                             const torch::TensorOptions& options) {
  return centers.to(options).view({1, centers.size(0), 1, 2}).expand({1, centers.size(0), levels, 2});
}

}  // namespace

BcFfnImpl::BcFfnImpl(int64_t dim, int64_t gn_groups) {
  conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(dim, dim, 3).padding(1)));
  norm = register_module("norm", torch::nn::GroupNorm(group_count(dim, gn_groups), dim));
  conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(dim, dim, 3).padding(1)));
}

torch::Tensor BcFfnImpl::forward(const torch::Tensor& tokens, const GridLayout& layout) {
  TORCH_CHECK(!layout.shapes.empty(), "BC-FFN needs spatial shapes to restore tokens");
  auto maps = split_to_maps(tokens, layout);
  for (auto& m : maps) m = conv2(torch::gelu(norm(conv1(m))));
  return flatten_maps(maps);
}

EncoderLayerImpl::EncoderLayerImpl(const LstOptions& options, int64_t levels)
    : residual_(options.ffn_residual) {
  attn = register_module("attn", MsDeformAttn(options.dim, levels, options.heads, options.points));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({options.dim})));
  ffn = register_module("ffn", BcFfn(options.dim, options.gn_groups));
}

torch::Tensor EncoderLayerImpl::forward(const torch::Tensor& x, const torch::Tensor& pos,
                                        const torch::Tensor& refs, const GridLayout& layout) {
  auto q = x + pos;
  auto y = norm(q + attn(q, refs, q, layout));
  auto out = ffn(y, layout);
  return residual_ ? y + out : out;
}

LstEncoderImpl::LstEncoderImpl(const LstOptions& options, int64_t levels, int64_t num_layers) {
  TORCH_CHECK(num_layers >= 1, "encoder needs at least one layer");
  layers_ = register_module("layers", torch::nn::ModuleList());
  for (int64_t i = 0; i < num_layers; ++i) layers_->push_back(EncoderLayer(options, levels));
}

EncoderMemory LstEncoderImpl::forward(const TokenSequence& tokens) {
  const auto& layout = tokens.layout;
  auto x = tokens.to_canonical(tokens.tokens);
  auto pos = tokens.to_canonical(tokens.positional_encoding, 0);
  auto refs = replicate_refs(layout.normalized_centers(), layout.num_levels(), x.options());
  for (const auto& layer : *layers_) x = layer->as<EncoderLayer>()->forward(x, pos, refs, layout);
  return tokens.with_tokens(tokens.from_canonical(x));
}

QueryGrid build_location_guided_queries(const EncoderMemory& memory,
                                        std::span<const int64_t> grid_sizes) {
  TORCH_CHECK(!grid_sizes.empty(), "at least one query grid size is required");
  for (auto s : grid_sizes) TORCH_CHECK(s > 0, "grid sizes must be positive, got ", s);
  const size_t n = grid_sizes.size();
  const size_t levels = memory.layout.num_levels();
  TORCH_CHECK(levels >= n, "memory has ", levels, " levels, need ", n, " for the query grids");

  auto maps = split_to_maps(memory.to_canonical(memory.tokens), memory.layout);
  const int64_t dim = memory.tokens.size(2);
  std::vector<torch::Tensor> resized;
  std::vector<torch::Tensor> encodings;
  std::vector<torch::Tensor> coords;
  std::vector<int> ids;
  std::vector<LevelShape> shapes;
  for (size_t i = 0; i < n; ++i) {
    const int64_t s = grid_sizes[i];
    const auto& map = maps[levels - n + i];
    resized.push_back(F::interpolate(map, F::InterpolateFuncOptions()
                                              .size(std::vector<int64_t>{s, s})
                                              .mode(torch::kBilinear)
                                              .align_corners(false)));
    encodings.push_back(sine_position_encoding(s, s, dim).to(map.options()));
    auto rc = torch::meshgrid({torch::arange(s), torch::arange(s)}, "ij");
    coords.push_back(torch::stack({torch::full({s * s}, static_cast<int64_t>(i), torch::kInt64),
                                   rc[0].reshape(-1), rc[1].reshape(-1)},
                                  1));
    ids.push_back(static_cast<int>(i));
    shapes.push_back({s, s});
  }
  QueryGrid grid;
  grid.queries = flatten_maps(resized);
  grid.positional_encoding = torch::cat(encodings, 0);
  grid.cell_coords = torch::cat(coords, 0);
  grid.grid_sizes.assign(grid_sizes.begin(), grid_sizes.end());
  grid.layout = GridLayout::from_shapes(std::move(ids), std::move(shapes));
  return grid;
}

DecoderLayerImpl::DecoderLayerImpl(const LstOptions& options, int64_t memory_levels)
    : residual_(options.ffn_residual) {
  attn = register_module("attn", MsDeformAttn(options.dim, memory_levels, options.heads, options.points));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({options.dim})));
  ffn = register_module("ffn", BcFfn(options.dim, options.gn_groups));
}

torch::Tensor DecoderLayerImpl::forward(const torch::Tensor& queries, const torch::Tensor& query_pos,
                                        const torch::Tensor& refs, const GridLayout& query_layout,
                                        const torch::Tensor& memory_value,
                                        const GridLayout& memory_layout) {
  // Cross-attention only; queries never attend to each other.
  auto q = queries + query_pos;
  auto y = norm(q + attn(q, refs, memory_value, memory_layout));
  auto out = ffn(y, query_layout);
  return residual_ ? y + out : out;
}

LstDecoderImpl::LstDecoderImpl(const LstOptions& options, int64_t memory_levels, int64_t num_layers) {
  TORCH_CHECK(num_layers >= 1, "decoder needs at least one layer");
  layers_ = register_module("layers", torch::nn::ModuleList());
  for (int64_t i = 0; i < num_layers; ++i) layers_->push_back(DecoderLayer(options, memory_levels));
}

InstanceEmbeddings LstDecoderImpl::forward(const QueryGrid& queries, const EncoderMemory& memory) {
  auto memory_value = memory.to_canonical(memory.tokens) +
                      memory.to_canonical(memory.positional_encoding, 0);
  auto refs = replicate_refs(queries.layout.normalized_centers(), memory.layout.num_levels(),
                             queries.queries.options());
  auto x = queries.queries;
  for (const auto& layer : *layers_) {
    x = layer->as<DecoderLayer>()->forward(x, queries.positional_encoding, refs, queries.layout,
                                           memory_value, memory.layout);
  }
  return {x, queries.cell_coords};
}

}  // namespace camoseg
