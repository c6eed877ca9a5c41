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

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "camoseg/config.hpp"
#include "camoseg/data.hpp"
#include "camoseg/eval.hpp"
#include "camoseg/model.hpp"

namespace camoseg {

std::string version_string();  // "0.1.0 (<git rev>)"

Normalization normalization(const RunConfig& config);

// Training data for a config: the COCO annotation file when set, otherwise
// the configured synthetic set.
std::shared_ptr<SampleSource> training_source(const RunConfig& config);
// Validation data; falls back to the training source.
std::shared_ptr<SampleSource> validation_source(const RunConfig& config);

// Writes manifest.json and config.json into `dir`.
void write_manifest(const RunConfig& config, const std::filesystem::path& dir, const std::string& command);

struct TrainResult {
  int64_t iterations = 0;  // completed optimizer steps
  double last_loss = 0.0;
  bool aborted = false;    // non-finite loss
  std::string message;
  std::filesystem::path last_checkpoint;
};

class Trainer {
 public:
  Trainer(RunConfig config, std::shared_ptr<SampleSource> data);

  // Restores model, optimizer and iteration.
  void resume(const std::filesystem::path& checkpoint);
  void save_checkpoint(const std::filesystem::path& path);

  // Trains until total_iters (or `max_iters` more steps). `callback` runs
  // after every step; returning false stops training early.
  TrainResult run(std::optional<int64_t> max_iters = std::nullopt,
                  const std::function<bool(int64_t, const LossReport&)>& callback = {});

  // One optimizer step on the next batch; returns the loss report.
  LossReport step();

  CamoSegModel& model() { return model_; }
  int64_t iteration() const { return iteration_; }
  double current_lr() const;
  const RunConfig& config() const { return config_; }
  std::filesystem::path output_dir() const { return output_dir_; }

 private:
  std::vector<Sample> next_batch();

  RunConfig config_;
  std::shared_ptr<SampleSource> data_;
  CamoSegModel model_{nullptr};
  std::unique_ptr<torch::optim::SGD> optimizer_;
  std::filesystem::path output_dir_;
  int64_t iteration_ = 0;
};

// Loads weights written by Trainer::save_checkpoint (or a bare model file).
void load_model_weights(CamoSegModelImpl& model, const std::filesystem::path& checkpoint);

class Predictor {
 public:
  Predictor(RunConfig config, CamoSegModel model);
  Predictor(RunConfig config, const std::filesystem::path& checkpoint);

  // rgb (H, W, 3) uint8 at original size; masks returned at (H, W).
  InstanceSet predict(const torch::Tensor& rgb);

  CamoSegModel& model() { return model_; }

 private:
  RunConfig config_;
  CamoSegModel model_{nullptr};
};

struct ImagePrediction {
  int64_t image_id = 0;
  std::string file_name;
  int64_t height = 0;
  int64_t width = 0;
  torch::Tensor masks;  // (N, H, W) uint8
  std::vector<double> scores;
};

ImagePrediction to_image_prediction(const Sample& sample, const InstanceSet& set);

// {file_name, height, width, instances: [{score, segmentation}]}
nlohmann::json image_prediction_json(const ImagePrediction& p);
// COCO results list: [{image_id, category_id, segmentation, score}]
nlohmann::json coco_results_json(const std::vector<ImagePrediction>& predictions);
// Parses a COCO results list; throws std::invalid_argument naming the
// offending entry and field. `sizes` maps image_id to (height, width).
std::map<int64_t, ImagePrediction> parse_coco_results(
    const nlohmann::json& results, const std::map<int64_t, std::pair<int64_t, int64_t>>& sizes);

// Runs `predictor` over every sample of `source`.
std::vector<ImagePrediction> predict_source(Predictor& predictor, const SampleSource& source);

// Scores predictions against the samples of `source` (matched by image_id;
// images without predictions count as empty).
ApMetrics evaluate_predictions(const SampleSource& source, const std::map<int64_t, ImagePrediction>& predictions);
ApMetrics evaluate_predictions(const SampleSource& source, const std::vector<ImagePrediction>& predictions);

// {AP, AP50, AP75, metadata{...}}; `timestamp` goes into metadata.
nlohmann::json metrics_json(const ApMetrics& metrics, const nlohmann::json& metadata);
std::string metrics_table(const ApMetrics& metrics);

// Contours and scores drawn over a copy of `rgb`.
torch::Tensor draw_overlay(const torch::Tensor& rgb, const torch::Tensor& masks, const std::vector<double>& scores);

std::string utc_timestamp();

}  // namespace camoseg
