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
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "camoseg/head.hpp"
#include "camoseg/losses.hpp"

namespace camoseg {

struct ModelConfig {
  std::string backbone = "small";
  int64_t embed_dim = 256;
  int64_t encoder_layers = 6;
  int64_t decoder_layers = 3;
  int64_t heads = 8;
  int64_t sample_points = 4;
  int64_t gn_groups = 32;
  bool ffn_residual = false;
  std::vector<int> encoder_levels{3, 4, 5};
  std::vector<int64_t> grid_sizes{36, 24, 16};
  std::vector<std::string> cff_inputs{"C2", "T3", "T4", "T5"};
  int64_t edge_levels = 3;
};

struct LossConfig {
  double lambda_edge = 1.0;
  double lambda_loc = 1.0;
  double lambda_mask = 3.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double dice_smooth = 1.0;
  double center_epsilon = 0.2;
  std::vector<ScaleRange> scale_ranges{{0.0, 96.0}, {48.0, 192.0},
                                       {96.0, std::numeric_limits<double>::infinity()}};
};

struct OptimConfig {
  double base_lr = 2.5e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int64_t> milestones{60000, 80000};
  double gamma = 0.1;
  int64_t total_iters = 90000;
  int64_t warmup_iters = 1000;
  double warmup_factor = 1e-3;
  int64_t batch_size = 2;
  double clip_grad_norm = 0.0;  // 0 disables
};

struct DataConfig {
  std::string train_annotations;
  std::string train_images;
  std::string val_annotations;
  std::string val_images;
  int64_t min_short_side = 480;
  int64_t max_short_side = 800;
  int64_t max_long_side = 1333;
  int64_t test_short_side = 800;
  double flip_prob = 0.5;
  std::array<double, 3> pixel_mean{123.675, 116.28, 103.53};
  std::array<double, 3> pixel_std{58.395, 57.12, 57.375};
  // Used for training when no annotation file is configured.
  int64_t synthetic_count = 0;
  int64_t synthetic_size = 96;
  uint64_t synthetic_seed = 0;
};

struct RunConfig {
  std::string preset = "paper";
  uint64_t seed = 0;
  std::string output_dir = "runs/default";
  int64_t checkpoint_every = 5000;
  int64_t log_every = 20;
  ModelConfig model;
  HeadOptions head;
  LossConfig loss;
  OptimConfig optim;
  DataConfig data;
};

RunConfig paper_preset();
RunConfig desk_preset();
RunConfig preset(const std::string& name);

nlohmann::json to_json(const RunConfig& config);
// Keys missing from `j` come from the preset named by j["preset"] (or
// "paper"); unknown keys throw.
RunConfig config_from_json(const nlohmann::json& j);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& config, const std::filesystem::path& path);
std::string canonical_json(const RunConfig& config);
std::string config_hash(const RunConfig& config);

// "a.b.c=value"; value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Throws std::invalid_argument describing the first problem found.
// Paths are checked for existence only when `check_paths` is set.
void validate(const RunConfig& config, bool check_paths = true);

// Linear warm-up from base * warmup_factor, then step decay at milestones.
double learning_rate_at(const OptimConfig& optim, int64_t iteration);

// output_dir, resolved against $CAMOSEG_OUTPUT_ROOT when relative.
std::filesystem::path resolve_output_dir(const RunConfig& config);

HeadOptions head_options(const RunConfig& config);
AssignmentOptions assignment_options(const RunConfig& config);
LossWeights loss_weights(const RunConfig& config);

}  // namespace camoseg
