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
#include "camoseg/head.hpp"

#include <cmath>

namespace camoseg {

namespace F = torch::nn::functional;

torch::Tensor synthesize_masks(const torch::Tensor& omega, const torch::Tensor& beta,
                               const torch::Tensor& mask_feature, bool upsample) {
  TORCH_CHECK(mask_feature.dim() == 3, "mask feature must be (D, h, w)");
  TORCH_CHECK(omega.dim() == 2 && omega.size(1) == mask_feature.size(0), "omega must be (N, ",
              mask_feature.size(0), "), got ", omega.sizes());
  TORCH_CHECK(beta.numel() == omega.size(0), "beta must hold one bias per instance");
  const int64_t n = omega.size(0);
  const int64_t h = mask_feature.size(1);
  const int64_t w = mask_feature.size(2);
  auto low = omega.mm(mask_feature.reshape({mask_feature.size(0), h * w})).view({n, h, w}) +
             beta.reshape({n, 1, 1});
  if (!upsample) return low;
  if (n == 0) return low.new_zeros({0, 4 * h, 4 * w});
  return F::interpolate(low.unsqueeze(1), F::InterpolateFuncOptions()
                                              .size(std::vector<int64_t>{4 * h, 4 * w})
                                              .mode(torch::kBilinear)
                                              .align_corners(false))
      .squeeze(1);
}

torch::Tensor suppress(const torch::Tensor& confidence, double threshold) {
  return torch::nonzero(confidence.reshape(-1) > threshold).reshape(-1);
}

torch::Tensor matrix_nms(const torch::Tensor& masks, const torch::Tensor& scores, double sigma) {
  const int64_t n = scores.size(0);
  TORCH_CHECK(masks.size(0) == n, "mask count ", masks.size(0), " != score count ", n);
  if (n == 0) return scores.clone();
  auto order = std::get<1>(scores.sort(/*stable=*/true, /*dim=*/0, /*descending=*/true));
  auto flat = masks.index_select(0, order).reshape({n, -1}).to(torch::kFloat64);
  auto areas = flat.sum(1);
  auto inter = flat.mm(flat.t());
  auto uni = (areas.unsqueeze(1) + areas.unsqueeze(0) - inter).clamp_min(1.0);
  // iou[i][j] for i ranked above j.
  auto iou = (inter / uni).triu(1);
  // How much each suppressor was itself suppressed.
  auto compensate = std::get<0>(iou.max(0));
  auto decay = torch::exp(-sigma * iou.square()) /
               torch::exp(-sigma * compensate.square()).unsqueeze(1);
  auto coefficient = std::get<0>(decay.min(0));
  auto sorted_scores = scores.index_select(0, order).to(torch::kFloat64);
  auto decayed = torch::empty_like(sorted_scores);
  decayed.index_put_({order}, sorted_scores * coefficient);
  return decayed.to(scores.scalar_type());
}

DcinHeadImpl::DcinHeadImpl(int64_t dim, double prior_prob) {
  location_fc = register_module("location_fc", torch::nn::Linear(dim, 1));
  kernel_mlp = register_module("kernel_mlp",
                               torch::nn::Sequential(torch::nn::Linear(dim, dim), torch::nn::ReLU(),
                                                     torch::nn::Linear(dim, dim)));
  omega_fc = register_module("omega_fc", torch::nn::Linear(dim, dim));
  beta_fc = register_module("beta_fc", torch::nn::Linear(dim, 1));
  torch::NoGradGuard no_grad;
  torch::nn::init::normal_(location_fc->weight, 0.0, 0.01);
  location_fc->bias.fill_(-std::log((1.0 - prior_prob) / prior_prob));
}

LocationPredictions DcinHeadImpl::predict_locations(const torch::Tensor& embeddings) {
  LocationPredictions out;
  out.logits = location_fc(embeddings).squeeze(-1);
  out.confidence = torch::sigmoid(out.logits);
  out.kernel_params = kernel_mlp->forward(embeddings);
  return out;
}

std::pair<torch::Tensor, torch::Tensor> DcinHeadImpl::affine_params(const torch::Tensor& kernels) {
  return {omega_fc(kernels), beta_fc(kernels)};
}

InstanceSet DcinHeadImpl::infer(const torch::Tensor& confidence, const torch::Tensor& kernels,
                                const torch::Tensor& mask_feature, const HeadOptions& options) {
  torch::NoGradGuard no_grad;
  const int64_t dim = mask_feature.size(0);
  const int64_t out_h = 4 * mask_feature.size(1);
  const int64_t out_w = 4 * mask_feature.size(2);
  auto empty = [&] {
    InstanceSet set;
    set.masks = torch::zeros({0, out_h, out_w}, torch::kUInt8);
    set.scores = torch::zeros({0}, confidence.options());
    set.omega = torch::zeros({0, dim}, mask_feature.options());
    set.beta = torch::zeros({0, 1}, mask_feature.options());
    set.cells = torch::zeros({0}, torch::kInt64);
    return set;
  };

  auto cells = suppress(confidence, options.score_threshold);
  if (cells.numel() == 0) return empty();
  auto scores = confidence.index_select(0, cells);
  if (scores.size(0) > options.pre_nms_top_k) {
    auto top = std::get<1>(scores.topk(options.pre_nms_top_k));
    cells = cells.index_select(0, top);
    scores = scores.index_select(0, top);
  }
  auto [omega, beta] = affine_params(kernels.index_select(0, cells));
  auto low = synthesize_masks(omega, beta, mask_feature, /*upsample=*/false);
  auto binary = torch::sigmoid(low) > options.mask_threshold;
  auto areas = binary.sum({1, 2});
  auto keep = torch::nonzero(areas >= options.min_area).reshape(-1);
  if (keep.numel() == 0) return empty();
  cells = cells.index_select(0, keep);
  scores = scores.index_select(0, keep);
  omega = omega.index_select(0, keep);
  beta = beta.index_select(0, keep);
  binary = binary.index_select(0, keep);

  auto decayed = options.matrix_nms ? matrix_nms(binary, scores, options.nms_sigma) : scores;
  keep = torch::nonzero(decayed >= options.score_floor).reshape(-1);
  if (keep.numel() == 0) return empty();
  decayed = decayed.index_select(0, keep);
  auto order = std::get<1>(decayed.sort(/*stable=*/true, 0, /*descending=*/true));
  if (order.size(0) > options.max_instances) order = order.narrow(0, 0, options.max_instances);
  keep = keep.index_select(0, order);

  InstanceSet set;
  set.scores = decayed.index_select(0, order);
  set.cells = cells.index_select(0, keep);
  set.omega = omega.index_select(0, keep);
  set.beta = beta.index_select(0, keep);
  auto logits = synthesize_masks(set.omega, set.beta, mask_feature, /*upsample=*/true);
  set.masks = (torch::sigmoid(logits) > options.mask_threshold).to(torch::kUInt8);
  return set;
}

}  // namespace camoseg
