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
#include "camoseg/backbone.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace camoseg {

namespace F = torch::nn::functional;

int64_t pad_to_multiple(int64_t value, int64_t multiple) {
  return (value + multiple - 1) / multiple * multiple;
}

torch::Tensor pad_bottom_right(const torch::Tensor& x, int64_t height, int64_t width) {
  const int64_t h = x.size(-2);
  const int64_t w = x.size(-1);
  TORCH_CHECK(height >= h && width >= w, "pad target ", height, "x", width,
              " smaller than input ", h, "x", w);
  if (height == h && width == w) return x;
  return F::pad(x, F::PadFuncOptions({0, width - w, 0, height - h}));
}

ImageTensor make_image_tensor(const torch::Tensor& rgb, const Normalization& norm) {
  TORCH_CHECK(rgb.dim() == 3 && rgb.size(2) == 3, "expected (H, W, 3) image, got ", rgb.sizes());
  auto img = rgb.to(torch::kFloat32).permute({2, 0, 1}).contiguous();
  TORCH_CHECK(torch::isfinite(img).all().item<bool>(), "image contains non-finite values");
  auto mean = torch::tensor({norm.mean[0], norm.mean[1], norm.mean[2]}).view({3, 1, 1});
  auto std = torch::tensor({norm.std[0], norm.std[1], norm.std[2]}).view({3, 1, 1});
  img = (img - mean) / std;
  ImageTensor out;
  out.height = img.size(1);
  out.width = img.size(2);
  out.norm = norm;
  out.data = pad_bottom_right(img, pad_to_multiple(out.height), pad_to_multiple(out.width));
  return out;
}

const torch::Tensor& FeaturePyramid::at(int level) const {
  auto it = levels.find(level);
  TORCH_CHECK(it != levels.end(), "feature level ", level, " not present in pyramid");
  return it->second;
}

GridLayout GridLayout::from_shapes(std::vector<int> level_ids, std::vector<LevelShape> shapes) {
  TORCH_CHECK(level_ids.size() == shapes.size(), "level id / shape count mismatch");
  GridLayout layout;
  layout.level_ids = std::move(level_ids);
  layout.shapes = std::move(shapes);
  int64_t offset = 0;
  for (const auto& s : layout.shapes) {
    TORCH_CHECK(s.height > 0 && s.width > 0, "grid level must be non-empty");
    layout.starts.push_back(offset);
    offset += s.area();
  }
  return layout;
}

int64_t GridLayout::total() const {
  int64_t n = 0;
  for (const auto& s : shapes) n += s.area();
  return n;
}

torch::Tensor GridLayout::level_index() const {
  std::vector<torch::Tensor> parts;
  for (size_t l = 0; l < shapes.size(); ++l) {
    parts.push_back(torch::full({shapes[l].area()}, static_cast<int64_t>(l), torch::kInt64));
  }
  if (parts.empty()) return torch::empty({0}, torch::kInt64);
  return torch::cat(parts);
}

torch::Tensor GridLayout::normalized_centers() const {
  std::vector<torch::Tensor> parts;
  for (const auto& s : shapes) {
    auto ys = (torch::arange(s.height, torch::kFloat32) + 0.5) / static_cast<double>(s.height);
    auto xs = (torch::arange(s.width, torch::kFloat32) + 0.5) / static_cast<double>(s.width);
    auto grid = torch::meshgrid({ys, xs}, "ij");
    parts.push_back(torch::stack({grid[1].reshape(-1), grid[0].reshape(-1)}, 1));
  }
  if (parts.empty()) return torch::empty({0, 2});
  return torch::cat(parts);
}

std::vector<torch::Tensor> split_to_maps(const torch::Tensor& tokens, const GridLayout& layout) {
  TORCH_CHECK(!layout.shapes.empty(), "grid layout has no spatial shapes");
  TORCH_CHECK(tokens.dim() == 3 && tokens.size(1) == layout.total(), "token count ",
              tokens.size(1), " does not match layout total ", layout.total());
  const int64_t batch = tokens.size(0);
  const int64_t dim = tokens.size(2);
  std::vector<torch::Tensor> maps;
  maps.reserve(layout.shapes.size());
  for (size_t l = 0; l < layout.shapes.size(); ++l) {
    const auto& s = layout.shapes[l];
    maps.push_back(tokens.narrow(1, layout.starts[l], s.area())
                       .transpose(1, 2)
                       .reshape({batch, dim, s.height, s.width}));
  }
  return maps;
}

torch::Tensor flatten_maps(const std::vector<torch::Tensor>& maps) {
  std::vector<torch::Tensor> parts;
  parts.reserve(maps.size());
  for (const auto& m : maps) parts.push_back(m.flatten(2).transpose(1, 2));
  return torch::cat(parts, 1);
}

TokenSequence TokenSequence::permuted(const torch::Tensor& perm) const {
  TORCH_CHECK(perm.dim() == 1 && perm.size(0) == size(), "permutation length mismatch");
  TokenSequence out = *this;
  auto p = perm.to(torch::kInt64);
  out.tokens = tokens.index_select(1, p);
  out.positional_encoding = positional_encoding.index_select(0, p);
  out.level_index = level_index.index_select(0, p);
  auto current = is_canonical() ? torch::arange(size(), torch::kInt64) : canonical_index;
  out.canonical_index = current.index_select(0, p);
  return out;
}

torch::Tensor TokenSequence::to_canonical(const torch::Tensor& x, int64_t dim) const {
  if (is_canonical()) return x;
  // Slot canonical_index[i] receives element i.
  auto inverse = torch::empty_like(canonical_index);
  inverse.index_put_({canonical_index}, torch::arange(size(), torch::kInt64));
  return x.index_select(dim, inverse);
}

torch::Tensor TokenSequence::from_canonical(const torch::Tensor& x, int64_t dim) const {
  if (is_canonical()) return x;
  return x.index_select(dim, canonical_index);
}

TokenSequence TokenSequence::with_tokens(torch::Tensor new_tokens) const {
  TORCH_CHECK(new_tokens.sizes() == tokens.sizes(), "replacement tokens change the shape");
  TokenSequence out = *this;
  out.tokens = std::move(new_tokens);
  return out;
}

torch::Tensor sine_position_encoding(int64_t height, int64_t width, int64_t dim,
                                     double temperature) {
  TORCH_CHECK(dim % 4 == 0, "sine position encoding needs dim divisible by 4, got ", dim);
  const int64_t half = dim / 2;
  constexpr double kScale = 2.0 * std::numbers::pi;
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto ys = (torch::arange(height, opts) + 0.5) / static_cast<double>(height) * kScale;
  auto xs = (torch::arange(width, opts) + 0.5) / static_cast<double>(width) * kScale;
  auto idx = torch::arange(half, opts);
  auto dim_t = torch::pow(temperature, 2.0 * torch::floor(idx / 2.0) / static_cast<double>(half));
  auto even = (torch::arange(half) % 2 == 0);
  auto encode = [&](const torch::Tensor& v) {
    auto phase = v.unsqueeze(1) / dim_t;
    return torch::where(even, torch::sin(phase), torch::cos(phase));
  };
  auto py = encode(ys).unsqueeze(1).expand({height, width, half});
  auto px = encode(xs).unsqueeze(0).expand({height, width, half});
  return torch::cat({py, px}, 2).reshape({height * width, dim}).to(torch::kFloat32);
}

TokenSequence flatten_multilevel(const FeaturePyramid& pyramid, std::span<const int> levels,
                                 const torch::Tensor& level_embed) {
  TORCH_CHECK(!levels.empty(), "flatten_multilevel needs at least one level");
  if (level_embed.defined()) {
    TORCH_CHECK(level_embed.size(0) >= static_cast<int64_t>(levels.size()),
                "level embedding has fewer rows than requested levels");
  }
  std::vector<int> ids;
  std::vector<LevelShape> shapes;
  std::vector<torch::Tensor> maps;
  std::vector<torch::Tensor> encodings;
  for (size_t l = 0; l < levels.size(); ++l) {
    const auto& map = pyramid.at(levels[l]);
    const int64_t h = map.size(2);
    const int64_t w = map.size(3);
    const int64_t d = map.size(1);
    ids.push_back(levels[l]);
    shapes.push_back({h, w});
    maps.push_back(map);
    auto pe = sine_position_encoding(h, w, d).to(map.device(), map.scalar_type());
    if (level_embed.defined()) pe = pe + level_embed[static_cast<int64_t>(l)].unsqueeze(0);
    encodings.push_back(pe);
  }
  TokenSequence seq;
  seq.layout = GridLayout::from_shapes(std::move(ids), std::move(shapes));
  seq.tokens = flatten_maps(maps);
  seq.positional_encoding = torch::cat(encodings, 0);
  seq.level_index = seq.layout.level_index();
  return seq;
}

FeaturePyramid restore_to_2d(const TokenSequence& sequence, FeatureOrigin origin) {
  auto maps = split_to_maps(sequence.to_canonical(sequence.tokens), sequence.layout);
  FeaturePyramid pyramid;
  pyramid.origin = origin;
  for (size_t l = 0; l < maps.size(); ++l) pyramid.levels[sequence.layout.level_ids[l]] = maps[l];
  return pyramid;
}

int64_t group_count(int64_t channels, int64_t preferred) {
  return std::gcd(channels, preferred);
}

namespace {

torch::nn::Sequential conv_gn_relu(int64_t in, int64_t out, int64_t stride, int64_t groups) {
  return torch::nn::Sequential(
      torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)),
      torch::nn::GroupNorm(group_count(out, groups), out), torch::nn::ReLU());
}

// Batch norm with fixed statistics; the usual choice for fine-tuning a
// detection trunk at batch size 2.
class FrozenBatchNormImpl : public torch::nn::Module {
 public:
  explicit FrozenBatchNormImpl(int64_t channels) {
    weight = register_buffer("weight", torch::ones({channels}));
    bias = register_buffer("bias", torch::zeros({channels}));
    running_mean = register_buffer("running_mean", torch::zeros({channels}));
    running_var = register_buffer("running_var", torch::ones({channels}));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto scale = weight * torch::rsqrt(running_var + 1e-5);
    auto shift = bias - running_mean * scale;
    return x * scale.view({1, -1, 1, 1}) + shift.view({1, -1, 1, 1});
  }
  torch::Tensor weight, bias, running_mean, running_var;
};
TORCH_MODULE(FrozenBatchNorm);

class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(int64_t in, int64_t width, int64_t stride, bool downsample) {
    const int64_t out = width * 4;
    conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, width, 1).bias(false)));
    bn1 = register_module("bn1", FrozenBatchNorm(width));
    conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, width, 3)
                                                           .stride(stride).padding(1).bias(false)));
    bn2 = register_module("bn2", FrozenBatchNorm(width));
    conv3 = register_module("conv3", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, out, 1).bias(false)));
    bn3 = register_module("bn3", FrozenBatchNorm(out));
    if (downsample) {
      shortcut = register_module(
          "downsample",
          torch::nn::Sequential(
              torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)),
              FrozenBatchNorm(out)));
    }
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto y = torch::relu(bn1(conv1(x)));
    y = torch::relu(bn2(conv2(y)));
    y = bn3(conv3(y));
    return torch::relu(y + (shortcut ? shortcut->forward(x) : x));
  }
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  FrozenBatchNorm bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
  torch::nn::Sequential shortcut{nullptr};
};
TORCH_MODULE(Bottleneck);

}  // namespace

SmallBackboneImpl::SmallBackboneImpl(std::array<int64_t, 4> widths, int64_t gn_groups)
    : widths_(widths) {
  constexpr int64_t kStemWidth = 32;
  stem_ = register_module("stem", conv_gn_relu(3, kStemWidth, 2, gn_groups));
  int64_t in = kStemWidth;
  for (size_t i = 0; i < 4; ++i) {
    torch::nn::Sequential stage;
    stage->extend(*conv_gn_relu(in, widths[i], 2, gn_groups));
    stage->extend(*conv_gn_relu(widths[i], widths[i], 1, gn_groups));
    stages_[i] = register_module("stage" + std::to_string(i + 2), stage);
    in = widths[i];
  }
}

std::array<torch::Tensor, 4> SmallBackboneImpl::forward(const torch::Tensor& images) {
  std::array<torch::Tensor, 4> out;
  auto x = stem_->forward(images);
  for (size_t i = 0; i < 4; ++i) {
    x = stages_[i]->forward(x);
    out[i] = x;
  }
  return out;
}

ResNet50BackboneImpl::ResNet50BackboneImpl() {
  conv1_ = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)));
  bn1_ = torch::nn::AnyModule(register_module("bn1", FrozenBatchNorm(64)));
  constexpr std::array<int64_t, 4> kBlocks{3, 4, 6, 3};
  constexpr std::array<int64_t, 4> kWidths{64, 128, 256, 512};
  int64_t in = 64;
  for (size_t i = 0; i < 4; ++i) {
    torch::nn::Sequential layer;
    for (int64_t b = 0; b < kBlocks[i]; ++b) {
      const int64_t stride = (b == 0 && i > 0) ? 2 : 1;
      layer->push_back(Bottleneck(in, kWidths[i], stride, b == 0));
      in = kWidths[i] * 4;
    }
    layers_[i] = register_module("layer" + std::to_string(i + 1), layer);
  }
}

std::array<torch::Tensor, 4> ResNet50BackboneImpl::forward(const torch::Tensor& images) {
  auto x = torch::relu(bn1_.forward(conv1_->forward(images)));
  x = torch::max_pool2d(x, 3, 2, 1);
  std::array<torch::Tensor, 4> out;
  for (size_t i = 0; i < 4; ++i) {
    x = layers_[i]->forward(x);
    out[i] = x;
  }
  return out;
}

std::shared_ptr<BackboneImpl> make_backbone(const std::string& name, int64_t gn_groups) {
  if (name == "small") return std::make_shared<SmallBackboneImpl>(std::array<int64_t, 4>{64, 128, 256, 512}, gn_groups);
  if (name == "resnet50") return std::make_shared<ResNet50BackboneImpl>();
  TORCH_CHECK(false, "unknown backbone '", name, "' (expected 'small' or 'resnet50')");
}

FeatureExtractorImpl::FeatureExtractorImpl(std::shared_ptr<BackboneImpl> backbone, int64_t dim)
    : dim_(dim), backbone_(std::move(backbone)) {
  register_module("backbone", backbone_);
  projections_ = register_module("projections", torch::nn::ModuleList());
  for (int64_t c : backbone_->out_channels()) {
    torch::nn::Conv2d proj(torch::nn::Conv2dOptions(c, dim, 1));
    torch::nn::init::zeros_(proj->bias);
    projections_->push_back(proj);
  }
}

FeaturePyramid FeatureExtractorImpl::forward(const torch::Tensor& images) {
  TORCH_CHECK(images.dim() == 4 && images.size(1) == 3, "expected (B, 3, H, W) images");
  TORCH_CHECK(images.size(2) % kSizeDivisor == 0 && images.size(3) % kSizeDivisor == 0,
              "image size ", images.size(2), "x", images.size(3), " is not padded to a multiple of 32");
  TORCH_CHECK(torch::isfinite(images).all().item<bool>(), "input images contain non-finite values");
  auto taps = backbone_->forward(images);
  FeaturePyramid pyramid;
  pyramid.origin = FeatureOrigin::kBackbone;
  for (size_t i = 0; i < 4; ++i) {
    pyramid.levels[static_cast<int>(i) + 2] = projections_[i]->as<torch::nn::Conv2d>()->forward(taps[i]);
  }
  return pyramid;
}

}  // namespace camoseg
