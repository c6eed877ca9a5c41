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
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

// COCO mask encodings: run-length (column-major, starting with a zero run),
// its compact string form, and polygon rasterization.
namespace camoseg {

struct Rle {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint32_t> counts;

  int64_t area() const;
};

// mask: (H, W), any dtype; nonzero is foreground.
Rle rle_encode(const torch::Tensor& mask);
// (H, W) uint8.
torch::Tensor rle_decode(const Rle& rle);

std::string rle_to_string(const Rle& rle);
Rle rle_from_string(const std::string& counts, int64_t height, int64_t width);

// Even-odd fill sampled at pixel centers; several polygons are OR-ed.
// Each polygon is a flat [x0, y0, x1, y1, ...] list in pixel units.
torch::Tensor rasterize_polygons(const std::vector<std::vector<double>>& polygons, int64_t height,
                                 int64_t width);

// {"size": [h, w], "counts": "<compact string>"}
nlohmann::json rle_to_json(const Rle& rle);
// Accepts polygon lists, compact RLE and uncompressed RLE objects.
torch::Tensor decode_segmentation(const nlohmann::json& segmentation, int64_t height, int64_t width);

}  // namespace camoseg
