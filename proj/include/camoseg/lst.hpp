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

#include <span>
#include <vector>

#include <torch/torch.h>

#include "camoseg/backbone.hpp"
#include "camoseg/deform_attn.hpp"

// Location-sensing transformer: deformable encoder with convolutional
// feed-forward blocks, grid queries cut from the encoder output, and a
// cross-attention-only decoder.
namespace camoseg {

struct LstOptions {
  int64_t dim = 256;
  int64_t heads = 8;
  int64_t points = 4;
  int64_t gn_groups = 32;
  // Wrap the feed-forward block in a residual connection (ablation only).
  bool ffn_residual = false;
};

/// Conv3x3 -> GroupNorm -> GELU -> Conv3x3 applied to each level's 2D
/// restoration of the tokens. No residual and no MLP.
class BcFfnImpl : public torch::nn::Module {
 public:
  BcFfnImpl(int64_t dim, int64_t gn_groups);
  // tokens: (B, N, D) in canonical order for `layout`.
  torch::Tensor forward(const torch::Tensor& tokens, const GridLayout& layout);

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Conv2d conv2{nullptr};
};
TORCH_MODULE(BcFfn);

// Encoder output keeps the token bookkeeping of its input.
using EncoderMemory = TokenSequence;

class EncoderLayerImpl : public torch::nn::Module {
 public:
  EncoderLayerImpl(const LstOptions& options, int64_t levels);
  // x: (B, M, D) canonical; pos: (M, D); refs: (1, M, levels, 2).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& pos,
                        const torch::Tensor& refs, const GridLayout& layout);

  MsDeformAttn attn{nullptr};
  torch::nn::LayerNorm norm{nullptr};
  BcFfn ffn{nullptr};

 private:
  bool residual_;
};
TORCH_MODULE(EncoderLayer);

class LstEncoderImpl : public torch::nn::Module {
 public:
  LstEncoderImpl(const LstOptions& options, int64_t levels, int64_t num_layers);
  EncoderMemory forward(const TokenSequence& tokens);
  int64_t num_layers() const { return static_cast<int64_t>(layers_->size()); }

 private:
  torch::nn::ModuleList layers_{nullptr};
};
TORCH_MODULE(LstEncoder);

struct QueryGrid {
  torch::Tensor queries;              // (B, L, D)
  torch::Tensor positional_encoding;  // (L, D)
  torch::Tensor cell_coords;          // (L, 3) int64: (level, row, col)
  std::vector<int64_t> grid_sizes;
  GridLayout layout;                  // one S x S grid per query level

  int64_t size() const { return queries.size(1); }
};

inline int64_t query_count(std::span<const int64_t> grid_sizes) {
  int64_t n = 0;
  for (auto s : grid_sizes) n += s * s;
  return n;
}

/// Restores the last `grid_sizes.size()` memory levels to 2D, bilinearly
/// resizes level i to S_i x S_i and flattens the cells into queries.
QueryGrid build_location_guided_queries(const EncoderMemory& memory,
                                        std::span<const int64_t> grid_sizes);

struct InstanceEmbeddings {
  torch::Tensor embeddings;   // (B, L, D)
  torch::Tensor cell_coords;  // (L, 3)
};

class DecoderLayerImpl : public torch::nn::Module {
 public:
  DecoderLayerImpl(const LstOptions& options, int64_t memory_levels);
  torch::Tensor forward(const torch::Tensor& queries, const torch::Tensor& query_pos,
                        const torch::Tensor& refs, const GridLayout& query_layout,
                        const torch::Tensor& memory_value, const GridLayout& memory_layout);

  MsDeformAttn attn{nullptr};
  torch::nn::LayerNorm norm{nullptr};
  BcFfn ffn{nullptr};

 private:
  bool residual_;
};
TORCH_MODULE(DecoderLayer);

class LstDecoderImpl : public torch::nn::Module {
 public:
  LstDecoderImpl(const LstOptions& options, int64_t memory_levels, int64_t num_layers);
  InstanceEmbeddings forward(const QueryGrid& queries, const EncoderMemory& memory);
  int64_t num_layers() const { return static_cast<int64_t>(layers_->size()); }

 private:
  torch::nn::ModuleList layers_{nullptr};
};
TORCH_MODULE(LstDecoder);

}  // namespace camoseg
