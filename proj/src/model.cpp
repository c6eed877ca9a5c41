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
#include "camoseg/model.hpp"

#include <algorithm>

namespace camoseg {

namespace F = torch::nn::functional;

int64_t input_stride(const std::string& name) {
  TORCH_CHECK(name.size() == 2 && (name[0] == 'C' || name[0] == 'T') && name[1] >= '2' && name[1] <= '5',
              "fusion input must be C2..C5 or T2..T5, got '", name, "'");
  return int64_t{1} << (name[1] - '0');
}

Batch collate(const std::vector<Sample>& samples, const Normalization& norm,
              std::span<const int64_t> grid_sizes, const AssignmentOptions& assignment,
              std::span<const int64_t> edge_strides) {
  TORCH_CHECK(!samples.empty(), "collate needs at least one sample");
  int64_t height = 0, width = 0;
  for (const auto& s : samples) {
    height = std::max(height, pad_to_multiple(s.height()));
    width = std::max(width, pad_to_multiple(s.width()));
  }
  Batch batch;
  std::vector<torch::Tensor> images;
  std::vector<std::vector<torch::Tensor>> edges(edge_strides.size());
  for (const auto& s : samples) {
    auto img = make_image_tensor(s.image, norm);
    images.push_back(pad_bottom_right(img.data, height, width));
    batch.image_sizes.emplace_back(s.height(), s.width());
    auto masks = pad_bottom_right(s.masks, height, width);
    batch.targets.push_back(assign_targets(masks, grid_sizes, assignment));
    auto edge = s.edges.defined() ? s.edges : edge_map(s.masks);
    auto pooled = downsample_edges(pad_bottom_right(edge, height, width), edge_strides);
    for (size_t j = 0; j < pooled.size(); ++j) edges[j].push_back(pooled[j].to(torch::kFloat32).unsqueeze(0));
  }
  batch.images = torch::stack(images);
  for (auto& level : edges) batch.edge_labels.push_back(torch::stack(level));
  return batch;
}

CamoSegModelImpl::CamoSegModelImpl(const ModelConfig& config) : config_(config) {
  TORCH_CHECK(config.grid_sizes.size() <= config.encoder_levels.size(),
              "more query grids than encoder levels");
  const int64_t dim = config.embed_dim;
  features = register_module("features",
                             FeatureExtractor(make_backbone(config.backbone, config.gn_groups), dim));
  const auto levels = static_cast<int64_t>(config.encoder_levels.size());
  level_embed = register_parameter("level_embed", torch::randn({levels, dim}) * 0.02);

  LstOptions lst;
  lst.dim = dim;
  lst.heads = config.heads;
  lst.points = config.sample_points;
  lst.gn_groups = config.gn_groups;
  lst.ffn_residual = config.ffn_residual;
  encoder = register_module("encoder", LstEncoder(lst, levels, config.encoder_layers));
  decoder = register_module("decoder", LstDecoder(lst, levels, config.decoder_layers));

  int64_t prev = 0;
  for (const auto& name : config.cff_inputs) {
    const int64_t s = input_stride(name);
    TORCH_CHECK(prev == 0 || s == 2 * prev, "cff_inputs must be ordered fine to coarse with doubling strides");
    if (name[0] == 'T') {
      TORCH_CHECK(std::find(config.encoder_levels.begin(), config.encoder_levels.end(), name[1] - '0') !=
                      config.encoder_levels.end(),
                  "fusion input ", name, " is not an encoder level");
    }
    prev = s;
  }
  TORCH_CHECK(input_stride(config.cff_inputs.front()) == 4, "the finest fusion input must be at stride 4");
  fusion = register_module("fusion",
                           CoarseToFineFusion(dim, static_cast<int64_t>(config.cff_inputs.size()),
                                              config.edge_levels, config.gn_groups));
  head = register_module("head", DcinHead(dim));
}

std::vector<int64_t> CamoSegModelImpl::edge_strides() const {
  // Junction k (coarse to fine) produces a map at the stride of input n-2-k;
  // the last edge_levels junctions are supervised.
  std::vector<int64_t> out;
  for (int64_t j = config_.edge_levels - 1; j >= 0; --j) out.push_back(input_stride(config_.cff_inputs[j]));
  return out;
}

ModelOutput CamoSegModelImpl::forward(const torch::Tensor& images) {
  auto pyramid = features->forward(images);
  auto tokens = flatten_multilevel(pyramid, config_.encoder_levels, level_embed);
  auto memory = encoder->forward(tokens);
  auto grid = build_location_guided_queries(memory, config_.grid_sizes);
  auto embeddings = decoder->forward(grid, memory);
  auto encoded = restore_to_2d(memory);

  std::vector<torch::Tensor> inputs;
  for (const auto& name : config_.cff_inputs) {
    const int level = name[1] - '0';
    inputs.push_back(name[0] == 'C' ? pyramid.at(level) : encoded.at(level));
  }
  auto fused = fusion->forward(inputs);
  auto locations = head->predict_locations(embeddings.embeddings);

  ModelOutput out;
  out.location_logits = locations.logits;
  out.kernel_params = locations.kernel_params;
  out.mask_feature = fused.mask_feature;
  out.edge_logits = fused.edge_logits;
  return out;
}

InstanceSet CamoSegModelImpl::predict(const torch::Tensor& rgb, const Normalization& norm,
                                      const HeadOptions& options) {
  torch::NoGradGuard no_grad;
  auto image = make_image_tensor(rgb, norm);
  auto out = forward(image.data.unsqueeze(0));
  auto set = head->infer(torch::sigmoid(out.location_logits[0]), out.kernel_params[0], out.mask_feature[0],
                         options);
  set.masks = set.masks.narrow(1, 0, image.height).narrow(2, 0, image.width).contiguous();
  return set;
}

LossReport compute_losses(CamoSegModelImpl& model, const ModelOutput& output, const Batch& batch,
                          const LossConfig& config) {
  const int64_t b = output.location_logits.size(0);
  TORCH_CHECK(static_cast<int64_t>(batch.targets.size()) == b, "batch holds ", batch.targets.size(),
              " targets for ", b, " images");
  std::vector<torch::Tensor> labels;
  std::vector<torch::Tensor> dice_terms;
  int64_t positives = 0;
  for (int64_t i = 0; i < b; ++i) {
    const auto& t = batch.targets[i];
    labels.push_back(t.labels);
    if (t.num_positives() == 0) continue;
    positives += t.num_positives();
    auto kernels = output.kernel_params[i].index_select(0, t.positive_indices);
    auto [omega, beta] = model.head->affine_params(kernels);
    auto logits = synthesize_masks(omega, beta, output.mask_feature[i], /*upsample=*/false);
    TORCH_CHECK(logits.sizes().slice(1) == t.target_masks.sizes().slice(1), "mask logits ", logits.sizes(),
                " do not match targets ", t.target_masks.sizes());
    dice_terms.push_back(dice_loss_per_item(torch::sigmoid(logits), t.target_masks, config.dice_smooth));
  }
  LossReport report;
  report.num_positives = positives;
  auto targets = torch::stack(labels).to(output.location_logits.device());
  report.components.location =
      focal_loss(output.location_logits, targets, config.focal_alpha, config.focal_gamma);
  if (dice_terms.empty()) {
    report.components.mask = output.mask_feature.sum() * 0.0;
  } else {
    report.components.mask = torch::cat(dice_terms).mean();
  }
  if (output.edge_logits.empty()) {
    report.components.edge = output.mask_feature.sum() * 0.0;
  } else {
    report.components.edge = edge_loss(output.edge_logits, batch.edge_labels, config.dice_smooth);
  }
  report.total = total_loss(report.components, {config.lambda_edge, config.lambda_loc, config.lambda_mask});
  return report;
}

}  // namespace camoseg
