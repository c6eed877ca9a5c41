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
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace camoseg {

inline constexpr int64_t kSizeDivisor = 32;

struct Normalization {
  std::array<float, 3> mean{123.675f, 116.28f, 103.53f};
  std::array<float, 3> std{58.395f, 57.12f, 57.375f};
};

// Normalized (3, H, W) float image, zero padded bottom/right so that both
// sides are multiples of 32. `height`/`width` keep the unpadded extent.
struct ImageTensor {
  torch::Tensor data;
  int64_t height = 0;
  int64_t width = 0;
  Normalization norm;

  int64_t padded_height() const { return data.size(1); }
  int64_t padded_width() const { return data.size(2); }
};

int64_t pad_to_multiple(int64_t value, int64_t multiple = kSizeDivisor);

// Zero-pads the last two dims of `x` on the bottom/right to (height, width).
torch::Tensor pad_bottom_right(const torch::Tensor& x, int64_t height, int64_t width);

// rgb: (H, W, 3) uint8. Rejects non-finite input.
ImageTensor make_image_tensor(const torch::Tensor& rgb, const Normalization& norm = {});

enum class FeatureOrigin { kBackbone, kEncoder };

// level id -> (B, C, H / 2^level, W / 2^level)
struct FeaturePyramid {
  std::map<int, torch::Tensor> levels;
  FeatureOrigin origin = FeatureOrigin::kBackbone;

  const torch::Tensor& at(int level) const;
  bool has(int level) const { return levels.count(level) != 0; }
};

struct LevelShape {
  int64_t height = 0;
  int64_t width = 0;
  int64_t area() const { return height * width; }
  bool operator==(const LevelShape&) const = default;
};

// Bookkeeping for a set of 2D grids flattened row-major and concatenated.
// Shared by encoder tokens (one grid per pyramid level) and decoder queries
// (one S x S grid per query level).
struct GridLayout {
  std::vector<int> level_ids;
  std::vector<LevelShape> shapes;
  std::vector<int64_t> starts;

  static GridLayout from_shapes(std::vector<int> level_ids, std::vector<LevelShape> shapes);
  int64_t total() const;
  size_t num_levels() const { return shapes.size(); }
  // (M,) int64: position of each token's level within `shapes`.
  torch::Tensor level_index() const;
  // (M, 2) float: (x, y) cell centers normalized to [0, 1].
  torch::Tensor normalized_centers() const;
};

// (B, M, D) -> per-level (B, D, h, w). Tokens must be in canonical order.
std::vector<torch::Tensor> split_to_maps(const torch::Tensor& tokens, const GridLayout& layout);
// Inverse of split_to_maps.
torch::Tensor flatten_maps(const std::vector<torch::Tensor>& maps);

struct TokenSequence {
  torch::Tensor tokens;               // (B, M, D)
  torch::Tensor positional_encoding;  // (M, D)
  torch::Tensor level_index;          // (M,)
  GridLayout layout;
  // canonical_index[i] is the canonical (level-major, row-major) slot of
  // token i. Undefined while the sequence is in canonical order.
  torch::Tensor canonical_index;

  int64_t size() const { return tokens.size(1); }
  bool is_canonical() const { return !canonical_index.defined(); }

  // Reorders the tokens (and their encodings) along the sequence axis.
  TokenSequence permuted(const torch::Tensor& perm) const;
  // Gathers any (B, M, ...) or (M, ...) tensor aligned with this sequence
  // into canonical order, and back.
  torch::Tensor to_canonical(const torch::Tensor& x, int64_t dim = 1) const;
  torch::Tensor from_canonical(const torch::Tensor& x, int64_t dim = 1) const;
  // Copy of this sequence with tokens replaced (same bookkeeping).
  TokenSequence with_tokens(torch::Tensor new_tokens) const;
};

// 2D sine/cosine encoding, half of the channels per axis: (h * w, dim).
torch::Tensor sine_position_encoding(int64_t height, int64_t width, int64_t dim,
                                     double temperature = 10000.0);

// Flattens the requested pyramid levels into one sequence. `level_embed`
// ((num levels, D), optional) is added to the sine encoding per level.
TokenSequence flatten_multilevel(const FeaturePyramid& pyramid, std::span<const int> levels,
                                 const torch::Tensor& level_embed = {});

FeaturePyramid restore_to_2d(const TokenSequence& sequence,
                             FeatureOrigin origin = FeatureOrigin::kEncoder);

// Pluggable CNN trunk producing C2..C5 at strides 4/8/16/32.
class BackboneImpl : public torch::nn::Module {
 public:
  virtual std::array<torch::Tensor, 4> forward(const torch::Tensor& images) = 0;
  virtual std::array<int64_t, 4> out_channels() const = 0;
};

// Small 4-stage conv net, widths 64/128/256/512 by default.
class SmallBackboneImpl : public BackboneImpl {
 public:
  explicit SmallBackboneImpl(std::array<int64_t, 4> widths = {64, 128, 256, 512},
                             int64_t gn_groups = 32);
  std::array<torch::Tensor, 4> forward(const torch::Tensor& images) override;
  std::array<int64_t, 4> out_channels() const override { return widths_; }

 private:
  std::array<int64_t, 4> widths_;
  torch::nn::Sequential stem_{nullptr};
  std::array<torch::nn::Sequential, 4> stages_;
};

// ResNet-50 trunk with frozen batch norm, parameter names following the
// torchvision layout (conv1, bn1, layer1..layer4).
class ResNet50BackboneImpl : public BackboneImpl {
 public:
  ResNet50BackboneImpl();
  std::array<torch::Tensor, 4> forward(const torch::Tensor& images) override;
  std::array<int64_t, 4> out_channels() const override { return {256, 512, 1024, 2048}; }

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::AnyModule bn1_;
  std::array<torch::nn::Sequential, 4> layers_;
};

std::shared_ptr<BackboneImpl> make_backbone(const std::string& name, int64_t gn_groups = 32);

// Backbone plus per-level 1x1 projections to a uniform channel width.
class FeatureExtractorImpl : public torch::nn::Module {
 public:
  FeatureExtractorImpl(std::shared_ptr<BackboneImpl> backbone, int64_t dim);
  // images: (B, 3, H, W) with H, W multiples of 32.
  FeaturePyramid forward(const torch::Tensor& images);
  int64_t dim() const { return dim_; }
  BackboneImpl& backbone() { return *backbone_; }

 private:
  int64_t dim_;
  std::shared_ptr<BackboneImpl> backbone_;
  torch::nn::ModuleList projections_{nullptr};
};
TORCH_MODULE(FeatureExtractor);

// Picks a GroupNorm group count that divides `channels`.
int64_t group_count(int64_t channels, int64_t preferred = 32);

}  // namespace camoseg
