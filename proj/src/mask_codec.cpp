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
#include "camoseg/mask_codec.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace camoseg {

int64_t Rle::area() const {
  int64_t a = 0;
  for (size_t i = 1; i < counts.size(); i += 2) a += counts[i];
  return a;
}

Rle rle_encode(const torch::Tensor& mask) {
  if (mask.dim() != 2) throw std::invalid_argument("rle_encode expects an (H, W) mask");
  Rle rle;
  rle.height = mask.size(0);
  rle.width = mask.size(1);
  auto col_major = (mask.to(torch::kCPU) != 0).t().contiguous().to(torch::kUInt8);
  const auto* data = col_major.data_ptr<uint8_t>();
  const int64_t n = col_major.numel();
  uint8_t current = 0;
  uint32_t run = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (data[i] != current) {
      rle.counts.push_back(run);
      run = 0;
      current = data[i];
    }
    ++run;
  }
  rle.counts.push_back(run);
  return rle;
}

torch::Tensor rle_decode(const Rle& rle) {
  auto col_major = torch::zeros({rle.width, rle.height}, torch::kUInt8);
  auto* data = col_major.data_ptr<uint8_t>();
  const int64_t n = rle.width * rle.height;
  int64_t pos = 0;
  uint8_t value = 0;
  for (uint32_t run : rle.counts) {
    if (pos + run > n) throw std::invalid_argument("RLE counts exceed mask size");
    if (value) std::fill(data + pos, data + pos + run, uint8_t{1});
    pos += run;
    value = !value;
  }
  if (pos != n) throw std::invalid_argument("RLE counts do not cover the mask");
  return col_major.t().contiguous();
}

std::string rle_to_string(const Rle& rle) {
  std::string out;
  for (size_t i = 0; i < rle.counts.size(); ++i) {
    int64_t x = rle.counts[i];
    if (i > 2) x -= static_cast<int64_t>(rle.counts[i - 2]);
    bool more = true;
    while (more) {
      char c = static_cast<char>(x & 0x1f);
      x >>= 5;
      more = (c & 0x10) ? x != -1 : x != 0;
      if (more) c |= 0x20;
      out.push_back(static_cast<char>(c + 48));
    }
  }
  return out;
}

Rle rle_from_string(const std::string& counts, int64_t height, int64_t width) {
  Rle rle;
  rle.height = height;
  rle.width = width;
  size_t p = 0;
  while (p < counts.size()) {
    int64_t x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= counts.size()) throw std::invalid_argument("truncated RLE string");
      const int64_t c = static_cast<int64_t>(counts[p]) - 48;
      x |= (c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= static_cast<int64_t>(-1) << (5 * k);
    }
    const size_t m = rle.counts.size();
    if (m > 2) x += static_cast<int64_t>(rle.counts[m - 2]);
    if (x < 0) throw std::invalid_argument("negative run in RLE string");
    rle.counts.push_back(static_cast<uint32_t>(x));
  }
  return rle;
}

torch::Tensor rasterize_polygons(const std::vector<std::vector<double>>& polygons, int64_t height,
                                 int64_t width) {
  auto mask = torch::zeros({height, width}, torch::kUInt8);
  auto acc = mask.accessor<uint8_t, 2>();
  for (const auto& poly : polygons) {
    if (poly.size() < 6 || poly.size() % 2 != 0) continue;
    const size_t n = poly.size() / 2;
    double min_x = poly[0], max_x = poly[0], min_y = poly[1], max_y = poly[1];
    for (size_t i = 1; i < n; ++i) {
      min_x = std::min(min_x, poly[2 * i]);
      max_x = std::max(max_x, poly[2 * i]);
      min_y = std::min(min_y, poly[2 * i + 1]);
      max_y = std::max(max_y, poly[2 * i + 1]);
    }
    const auto r0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(min_y)) - 1);
    const auto r1 = std::min<int64_t>(height, static_cast<int64_t>(std::ceil(max_y)) + 1);
    const auto c0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(min_x)) - 1);
    const auto c1 = std::min<int64_t>(width, static_cast<int64_t>(std::ceil(max_x)) + 1);
    for (int64_t r = r0; r < r1; ++r) {
      const double py = static_cast<double>(r) + 0.5;
      for (int64_t c = c0; c < c1; ++c) {
        const double px = static_cast<double>(c) + 0.5;
        bool inside = false;
        for (size_t i = 0, j = n - 1; i < n; j = i++) {
          const double xi = poly[2 * i], yi = poly[2 * i + 1];
          const double xj = poly[2 * j], yj = poly[2 * j + 1];
          if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
        }
        if (inside) acc[r][c] = 1;
      }
    }
  }
  return mask;
}

nlohmann::json rle_to_json(const Rle& rle) {
  return {{"size", {rle.height, rle.width}}, {"counts", rle_to_string(rle)}};
}

torch::Tensor decode_segmentation(const nlohmann::json& seg, int64_t height, int64_t width) {
  if (seg.is_array()) {
    std::vector<std::vector<double>> polys;
    for (const auto& p : seg) polys.push_back(p.get<std::vector<double>>());
    return rasterize_polygons(polys, height, width);
  }
  if (!seg.is_object() || !seg.contains("counts")) {
    throw std::invalid_argument("segmentation must be a polygon list or an RLE object");
  }
  int64_t h = height;
  int64_t w = width;
  if (seg.contains("size")) {
    h = seg["size"].at(0).get<int64_t>();
    w = seg["size"].at(1).get<int64_t>();
  }
  Rle rle;
  if (seg["counts"].is_string()) {
    rle = rle_from_string(seg["counts"].get<std::string>(), h, w);
  } else {
    rle.height = h;
    rle.width = w;
    rle.counts = seg["counts"].get<std::vector<uint32_t>>();
  }
  return rle_decode(rle);
}

}  // namespace camoseg
