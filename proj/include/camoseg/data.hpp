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

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace camoseg {

struct Sample {
  torch::Tensor image;  // (H, W, 3) uint8 RGB
  torch::Tensor masks;  // (N, H, W) uint8, every mask non-empty
  std::vector<int64_t> instance_ids;
  torch::Tensor edges;  // (H, W) uint8 union of instance edges, full resolution
  std::string file_name;
  int64_t image_id = 0;
  int64_t original_height = 0;
  int64_t original_width = 0;

  int64_t height() const { return image.size(0); }
  int64_t width() const { return image.size(1); }
  int64_t num_instances() const { return masks.size(0); }
};

torch::Tensor read_rgb(const std::filesystem::path& path);
void write_rgb(const std::filesystem::path& path, const torch::Tensor& rgb);

// Mask minus its erosion by a 3x3 cross (border replicated), OR-ed over
// instances. masks: (N, H, W) -> (H, W) uint8.
torch::Tensor edge_map(const torch::Tensor& masks);

// Full-resolution edges max-pooled to each stride: (H / s, W / s) uint8.
std::vector<torch::Tensor> derive_edge_labels(const torch::Tensor& masks,
                                              std::span<const int64_t> strides);
std::vector<torch::Tensor> downsample_edges(const torch::Tensor& edges,
                                            std::span<const int64_t> strides);

// Fills `edges` from the masks.
Sample with_edges(Sample sample);

struct AugmentOptions {
  int64_t min_short_side = 480;
  int64_t max_short_side = 800;
  int64_t max_long_side = 1333;
  double flip_prob = 0.5;
};

// Scale that brings the short side to `short_side` without the long side
// exceeding `max_long_side`.
double resize_scale(int64_t height, int64_t width, int64_t short_side, int64_t max_long_side);

Sample resize_sample(const Sample& sample, int64_t height, int64_t width);
Sample flip_sample(const Sample& sample);
// Random short-side jitter plus horizontal flip. Instances that vanish are
// dropped; edges are recomputed.
Sample augment(const Sample& sample, const AugmentOptions& options, std::mt19937_64& rng);

struct SyntheticOptions {
  int64_t min_instances = 1;
  int64_t max_instances = 4;
  double contrast = 0.12;       // mean shift of instance texture, fraction of 255
  double texture_amplitude = 0.25;
  int64_t min_area = 16;
  double max_pair_iou = 0.3;
};

// Procedural camouflage scenes: noise-textured background and 1-4 blobs
// filled with the same texture statistics shifted by a small contrast
// delta. Sample i depends only on (seed, i, size).
std::vector<Sample> generate_synthetic(uint64_t seed, int64_t count, int64_t size,
                                       const SyntheticOptions& options = {});

// Random-access sample provider.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual size_t size() const = 0;
  virtual Sample get(size_t index) const = 0;
};

class InMemorySource : public SampleSource {
 public:
  explicit InMemorySource(std::vector<Sample> samples) : samples_(std::move(samples)) {}
  size_t size() const override { return samples_.size(); }
  Sample get(size_t index) const override { return samples_.at(index); }

 private:
  std::vector<Sample> samples_;
};

struct CocoImageRecord {
  int64_t id = 0;
  std::string file_name;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<nlohmann::json> segmentations;
  std::vector<int64_t> annotation_ids;
};

// COCO-format instance annotations. Images missing on disk are skipped with
// a warning; malformed JSON throws.
class CocoDataset : public SampleSource {
 public:
  static CocoDataset load(const std::filesystem::path& annotation_file,
                          const std::filesystem::path& image_root);

  size_t size() const override { return records_.size(); }
  Sample get(size_t index) const override;
  const CocoImageRecord& record(size_t index) const { return records_.at(index); }
  const std::vector<CocoImageRecord>& records() const { return records_; }

 private:
  std::filesystem::path root_;
  std::vector<CocoImageRecord> records_;
};

// Deterministic permutation of [0, n) for a seed.
std::vector<size_t> shuffled_order(size_t n, uint64_t seed);

// Samples of `source` in shuffled order for `seed`.
std::vector<Sample> load_stream(const SampleSource& source, uint64_t seed);

// FNV-1a digest over images, masks and ids of a stream.
std::string stream_digest(const std::vector<Sample>& samples);

// Writes <dir>/images/*.png and <dir>/annotations.json (RLE segmentations,
// single "camouflage" category).
void write_coco_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir);

}  // namespace camoseg
