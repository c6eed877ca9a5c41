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
#include "camoseg/losses.hpp"

#include <algorithm>
#include <cmath>

namespace camoseg {

namespace F = torch::nn::functional;

namespace {

struct InstanceGeometry {
  double area = 0.0;
  double center_y = 0.0;
  double center_x = 0.0;
  double extent_h = 0.0;
  double extent_w = 0.0;
};

InstanceGeometry measure(const torch::Tensor& mask) {
  auto pts = torch::nonzero(mask).to(torch::kFloat64);  // (K, 2) rows, cols
  InstanceGeometry g;
  g.area = static_cast<double>(pts.size(0));
  if (g.area == 0) return g;
  auto ys = pts.select(1, 0);
  auto xs = pts.select(1, 1);
  g.center_y = ys.mean().item<double>() + 0.5;
  g.center_x = xs.mean().item<double>() + 0.5;
  g.extent_h = ys.max().item<double>() - ys.min().item<double>() + 1.0;
  g.extent_w = xs.max().item<double>() - xs.min().item<double>() + 1.0;
  return g;
}

}  // namespace

TargetAssignment assign_targets(const torch::Tensor& gt_masks, std::span<const int64_t> grid_sizes,
                                const AssignmentOptions& options) {
  TORCH_CHECK(gt_masks.dim() == 3, "gt masks must be (N, H, W)");
  TORCH_CHECK(options.scale_ranges.size() >= grid_sizes.size(), "need one scale range per grid level");
  const int64_t num_gt = gt_masks.size(0);
  const int64_t height = gt_masks.size(1);
  const int64_t width = gt_masks.size(2);
  int64_t total = 0;
  for (auto s : grid_sizes) total += s * s;

  std::vector<int64_t> matched(total, -1);
  std::vector<double> owner_area(total, std::numeric_limits<double>::infinity());
  auto masks = gt_masks.to(torch::kCPU).to(torch::kBool);
  for (int64_t n = 0; n < num_gt; ++n) {
    const auto g = measure(masks[n]);
    TORCH_CHECK(g.area > 0, "ground-truth instance ", n, " has an empty mask");
    const double scale = std::sqrt(g.area);
    const double half_h = options.center_epsilon * g.extent_h;
    const double half_w = options.center_epsilon * g.extent_w;
    int64_t offset = 0;
    for (size_t level = 0; level < grid_sizes.size(); ++level) {
      const int64_t s = grid_sizes[level];
      const auto& range = options.scale_ranges[level];
      if (scale >= range.lower && scale <= range.upper) {
        const double cell_h = static_cast<double>(height) / static_cast<double>(s);
        const double cell_w = static_cast<double>(width) / static_cast<double>(s);
        auto claim = [&](int64_t r, int64_t c) {
          const int64_t idx = offset + r * s + c;
          if (g.area < owner_area[idx]) {
            owner_area[idx] = g.area;
            matched[idx] = n;
          }
        };
        for (int64_t r = 0; r < s; ++r) {
          const double cy = (static_cast<double>(r) + 0.5) * cell_h;
          if (std::abs(cy - g.center_y) > half_h) continue;
          for (int64_t c = 0; c < s; ++c) {
            const double cx = (static_cast<double>(c) + 0.5) * cell_w;
            if (std::abs(cx - g.center_x) <= half_w) claim(r, c);
          }
        }
        const auto home_r = std::min<int64_t>(static_cast<int64_t>(g.center_y / cell_h), s - 1);
        const auto home_c = std::min<int64_t>(static_cast<int64_t>(g.center_x / cell_w), s - 1);
        claim(home_r, home_c);
      }
      offset += s * s;
    }
  }

  TargetAssignment out;
  out.matched = torch::tensor(matched, torch::kInt64);
  out.labels = (out.matched >= 0).to(torch::kFloat32);
  out.positive_indices = torch::nonzero(out.matched >= 0).reshape(-1);
  const int64_t stride = options.mask_stride;
  const int64_t low_h = (height + stride - 1) / stride;
  const int64_t low_w = (width + stride - 1) / stride;
  if (out.positive_indices.numel() == 0) {
    out.target_masks = torch::zeros({0, low_h, low_w});
    return out;
  }
  auto gt_ids = out.matched.index_select(0, out.positive_indices);
  auto selected = masks.index_select(0, gt_ids).to(torch::kFloat32).unsqueeze(1);
  auto pooled = F::avg_pool2d(selected, F::AvgPool2dFuncOptions(stride).stride(stride).ceil_mode(true));
  out.target_masks = (pooled.squeeze(1) >= 0.5).to(torch::kFloat32);
  return out;
}

torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& targets, double alpha,
                         double gamma) {
  TORCH_CHECK(logits.sizes() == targets.sizes(), "focal loss: logits ", logits.sizes(),
              " vs targets ", targets.sizes());
  auto t = targets.to(logits.scalar_type());
  auto p = torch::sigmoid(logits);
  auto pos = alpha * t * torch::pow(1.0 - p, gamma) * -F::logsigmoid(logits);
  auto neg = (1.0 - alpha) * (1.0 - t) * torch::pow(p, gamma) * -F::logsigmoid(-logits);
  auto normalizer = std::max(1.0, t.sum().item<double>());
  return (pos + neg).sum() / normalizer;
}

torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target, double smooth) {
  TORCH_CHECK(probs.sizes() == target.sizes(), "dice loss: shapes ", probs.sizes(), " vs ",
              target.sizes());
  auto t = target.to(probs.scalar_type());
  auto num = 2.0 * (probs * t).sum() + smooth;
  auto den = probs.square().sum() + t.square().sum() + smooth;
  return 1.0 - num / den;
}

torch::Tensor dice_loss_per_item(const torch::Tensor& probs, const torch::Tensor& target,
                                 double smooth) {
  TORCH_CHECK(probs.sizes() == target.sizes(), "dice loss: shapes ", probs.sizes(), " vs ",
              target.sizes());
  const int64_t n = probs.size(0);
  auto p = probs.reshape({n, -1});
  auto t = target.to(probs.scalar_type()).reshape({n, -1});
  auto num = 2.0 * (p * t).sum(1) + smooth;
  auto den = p.square().sum(1) + t.square().sum(1) + smooth;
  return 1.0 - num / den;
}

torch::Tensor edge_loss(const std::vector<torch::Tensor>& logits,
                        const std::vector<torch::Tensor>& labels, double smooth) {
  TORCH_CHECK(logits.size() == labels.size(), "edge loss: ", logits.size(),
              " predicted levels but ", labels.size(), " label levels");
  TORCH_CHECK(!logits.empty(), "edge loss needs at least one level");
  torch::Tensor sum;
  for (size_t j = 0; j < logits.size(); ++j) {
    auto probs = torch::sigmoid(logits[j]);
    auto term = logits[j].dim() == 4 ? dice_loss_per_item(probs, labels[j], smooth).mean()
                                     : dice_loss(probs, labels[j], smooth);
    sum = sum.defined() ? sum + term : term;
  }
  return sum;
}

torch::Tensor total_loss(const LossComponents& c, const LossWeights& w) {
  auto check = [](const torch::Tensor& t, const char* name) {
    TORCH_CHECK(t.defined(), name, " loss component is missing");
    TORCH_CHECK(torch::isfinite(t).all().item<bool>(), name, " loss component is not finite (",
                t.item<double>(), ")");
  };
  check(c.edge, "edge");
  check(c.location, "location");
  check(c.mask, "mask");
  return w.edge * c.edge + w.location * c.location + w.mask * c.mask;
}

}  // namespace camoseg
