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

#include <string>
#include <vector>

#include <torch/torch.h>

#include "camoseg/backbone.hpp"
#include "camoseg/cff.hpp"
#include "camoseg/config.hpp"
#include "camoseg/data.hpp"
#include "camoseg/head.hpp"
#include "camoseg/losses.hpp"
#include "camoseg/lst.hpp"

namespace camoseg {

struct ModelOutput {
  torch::Tensor location_logits;  // (B, L)
  torch::Tensor kernel_params;    // (B, L, D)
  torch::Tensor mask_feature;     // (B, D, H/4, W/4)
  std::vector<torch::Tensor> edge_logits;  // coarse to fine, (B, 1, h, w)
};

struct Batch {
  torch::Tensor images;  // (B, 3, H, W) normalized, padded to a multiple of 32
  std::vector<std::pair<int64_t, int64_t>> image_sizes;  // unpadded (h, w)
  std::vector<TargetAssignment> targets;  // in padded coordinates
  std::vector<torch::Tensor> edge_labels;  // per edge level, (B, 1, H/s, W/s) float
};

// Pads every sample to the largest padded size in the list, assigns
// targets on the padded canvas and pools edge labels to `edge_strides`.
Batch collate(const std::vector<Sample>& samples, const Normalization& norm,
              std::span<const int64_t> grid_sizes, const AssignmentOptions& assignment,
              std::span<const int64_t> edge_strides);

class CamoSegModelImpl : public torch::nn::Module {
 public:
  explicit CamoSegModelImpl(const ModelConfig& config);

  ModelOutput forward(const torch::Tensor& images);

  // Single unpadded image (H, W, 3) uint8; masks come back at (H, W).
  InstanceSet predict(const torch::Tensor& rgb, const Normalization& norm, const HeadOptions& options);

  // Strides of the edge supervision maps, coarse to fine.
  std::vector<int64_t> edge_strides() const;
  const ModelConfig& config() const { return config_; }

  FeatureExtractor features{nullptr};
  torch::Tensor level_embed;
  LstEncoder encoder{nullptr};
  LstDecoder decoder{nullptr};
  CoarseToFineFusion fusion{nullptr};
  DcinHead head{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(CamoSegModel);

// Stride of a "C<k>" / "T<k>" fusion input name.
int64_t input_stride(const std::string& name);

// Weighted sum plus its components; the mask term averages dice over all
// positive cells of the batch.
struct LossReport {
  torch::Tensor total;
  LossComponents components;
  int64_t num_positives = 0;
};

LossReport compute_losses(CamoSegModelImpl& model, const ModelOutput& output, const Batch& batch,
                          const LossConfig& config);

}  // namespace camoseg
