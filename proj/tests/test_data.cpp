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
#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>
#include <random>

#include "camoseg/data.hpp"
#include "camoseg/mask_codec.hpp"

using namespace camoseg;

namespace {

torch::Tensor square_mask(int64_t h, int64_t w, int64_t y0, int64_t x0, int64_t size) {
  auto m = torch::zeros({h, w}, torch::kUInt8);
  m.slice(0, y0, y0 + size).slice(1, x0, x0 + size).fill_(1);
  return m;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("camoseg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

double iou(const torch::Tensor& a, const torch::Tensor& b) {
  auto x = a.to(torch::kBool), y = b.to(torch::kBool);
  const double u = (x | y).sum().item<double>();
  return u > 0 ? (x & y).sum().item<double>() / u : 0.0;
}

}  // namespace

TEST_CASE("polygon rasterization samples pixel centers") {
  auto m = rasterize_polygons({{2, 2, 6, 2, 6, 6, 2, 6}}, 8, 8);
  CHECK(m.sum().item<int64_t>() == 16);
  CHECK(torch::equal(m, square_mask(8, 8, 2, 2, 4)));
  // Two polygons are OR-ed.
  auto two = rasterize_polygons({{0, 0, 2, 0, 2, 2, 0, 2}, {4, 4, 6, 4, 6, 6, 4, 6}}, 8, 8);
  CHECK(two.sum().item<int64_t>() == 8);
  // Right triangle: centers with x + y + 1 < 10.2.
  auto tri = rasterize_polygons({{0, 0, 10.2, 0, 0, 10.2}}, 10, 10);
  CHECK(tri.sum().item<int64_t>() == 55);
}

TEST_CASE("RLE encoding is column-major and starts with a zero run") {
  auto full = torch::ones({4, 5}, torch::kUInt8);
  auto rle = rle_encode(full);
  CHECK(rle.counts == std::vector<uint32_t>{0, 20});
  CHECK(rle.area() == 20);
  auto m = torch::zeros({3, 3}, torch::kUInt8);
  m[0][1] = 1;
  m[1][1] = 1;
  // Column-major: 0,0,0 | 1,1,0 | 0,0,0.
  CHECK(rle_encode(m).counts == std::vector<uint32_t>{3, 2, 4});
  CHECK(rle_encode(torch::zeros({2, 2})).counts == std::vector<uint32_t>{4});
}

TEST_CASE("RLE round trips through counts and compact strings") {
  std::mt19937_64 rng(1);
  torch::manual_seed(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = (torch::rand({13, 17}) > 0.6).to(torch::kUInt8);
    auto rle = rle_encode(m);
    CHECK(torch::equal(rle_decode(rle), m));
    auto back = rle_from_string(rle_to_string(rle), 13, 17);
    CHECK(back.counts == rle.counts);
    CHECK(torch::equal(decode_segmentation(rle_to_json(rle), 13, 17), m));
  }
  nlohmann::json uncompressed = {{"size", {3, 3}}, {"counts", {3, 2, 4}}};
  auto d = decode_segmentation(uncompressed, 3, 3);
  CHECK(d.sum().item<int64_t>() == 2);
  CHECK(d[1][1].item<int>() == 1);
  CHECK_THROWS(decode_segmentation(nlohmann::json{{"size", {3, 3}}, {"counts", {3, 2, 9}}}, 3, 3));
}

TEST_CASE("edge map of a 3x3 square is its 8-pixel ring") {
  auto m = square_mask(7, 7, 2, 2, 3).unsqueeze(0);
  auto e = edge_map(m);
  CHECK(e.sum().item<int64_t>() == 8);
  CHECK(e[3][3].item<int>() == 0);
  CHECK(e[2][2].item<int>() == 1);
  // A single pixel is all edge.
  auto p = torch::zeros({1, 5, 5}, torch::kUInt8);
  p[0][2][2] = 1;
  CHECK(edge_map(p).sum().item<int64_t>() == 1);
  // Full image with a replicated border has no edges.
  CHECK(edge_map(torch::ones({1, 6, 6}, torch::kUInt8)).sum().item<int64_t>() == 0);
  // Instances are OR-ed.
  auto two = torch::stack({square_mask(10, 10, 0, 0, 3), square_mask(10, 10, 5, 5, 3)});
  CHECK(torch::equal(edge_map(two), edge_map(two.slice(0, 0, 1)) | edge_map(two.slice(0, 1, 2))));
  CHECK(edge_map(torch::zeros({0, 4, 4}, torch::kUInt8)).sum().item<int64_t>() == 0);
}

TEST_CASE("edge labels per stride are max-pooled") {
  auto m = square_mask(32, 32, 8, 8, 8).unsqueeze(0);
  std::vector<int64_t> strides{16, 8, 4};
  auto labels = derive_edge_labels(m, strides);
  REQUIRE(labels.size() == 3);
  CHECK(labels[0].sizes() == torch::IntArrayRef({2, 2}));
  CHECK(labels[1].sizes() == torch::IntArrayRef({4, 4}));
  CHECK(labels[2].sizes() == torch::IntArrayRef({8, 8}));
  // Stride 4: the ring of the 2x2 block at (2..3, 2..3) is every cell.
  CHECK(labels[2].sum().item<int64_t>() == 4);
  // Stride 16: the whole ring falls in the top-left cell.
  CHECK(labels[0][0][0].item<int>() == 1);
  CHECK(labels[0].sum().item<int64_t>() == 1);
}

TEST_CASE("flip twice is the identity and flip mirrors the masks") {
  auto samples = generate_synthetic(3, 2, 64);
  for (const auto& s : samples) {
    auto f = flip_sample(s);
    CHECK(torch::equal(f.masks, s.masks.flip({2})));
    auto ff = flip_sample(f);
    CHECK(torch::equal(ff.image, s.image));
    CHECK(torch::equal(ff.masks, s.masks));
    CHECK(torch::equal(ff.edges, s.edges));
  }
}

TEST_CASE("resize keeps relative mask area within 5%") {
  auto samples = generate_synthetic(4, 4, 96);
  for (const auto& s : samples) {
    auto r = resize_sample(s, 144, 144);
    CHECK(r.height() == 144);
    CHECK(r.width() == 144);
    for (int64_t i = 0; i < s.num_instances(); ++i) {
      const double before = s.masks[i].sum().item<double>() / (96.0 * 96.0);
      const double after = r.masks[i].sum().item<double>() / (144.0 * 144.0);
      CHECK(std::abs(after - before) <= 0.05 * before);
    }
  }
}

TEST_CASE("resize scale caps the long side") {
  CHECK(resize_scale(480, 640, 800, 1333) == doctest::Approx(800.0 / 480.0));
  const double s = resize_scale(480, 4000, 800, 1333);
  CHECK(s == doctest::Approx(1333.0 / 4000.0));
  CHECK(std::lround(4000 * s) <= 1333);
}

TEST_CASE("augmentation respects the size bounds and is reproducible") {
  auto s = generate_synthetic(5, 1, 96)[0];
  AugmentOptions o;
  o.min_short_side = 64;
  o.max_short_side = 128;
  o.max_long_side = 128;
  for (int trial = 0; trial < 10; ++trial) {
    std::mt19937_64 a(trial), b(trial);
    auto x = augment(s, o, a);
    auto y = augment(s, o, b);
    CHECK(torch::equal(x.image, y.image));
    CHECK(torch::equal(x.masks, y.masks));
    CHECK(std::min(x.height(), x.width()) >= 64);
    CHECK(std::max(x.height(), x.width()) <= 128);
    CHECK(x.masks.size(1) == x.height());
    for (int64_t i = 0; i < x.num_instances(); ++i) CHECK(x.masks[i].sum().item<int64_t>() > 0);
  }
}

TEST_CASE("synthetic scenes are deterministic and well formed") {
  auto a = generate_synthetic(42, 6, 96);
  auto b = generate_synthetic(42, 6, 96);
  REQUIRE(a.size() == 6);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(torch::equal(a[i].image, b[i].image));
    CHECK(torch::equal(a[i].masks, b[i].masks));
    CHECK(a[i].image.sizes() == torch::IntArrayRef({96, 96, 3}));
    CHECK(a[i].num_instances() >= 1);
    CHECK(a[i].num_instances() <= 4);
    for (int64_t k = 0; k < a[i].num_instances(); ++k) {
      CHECK(a[i].masks[k].sum().item<int64_t>() >= 16);
      for (int64_t l = k + 1; l < a[i].num_instances(); ++l) CHECK(iou(a[i].masks[k], a[i].masks[l]) < 0.3);
    }
  }
  // Sample i depends only on (seed, i, size).
  auto prefix = generate_synthetic(42, 3, 96);
  CHECK(torch::equal(prefix[2].image, a[2].image));
  auto other = generate_synthetic(43, 1, 96);
  CHECK_FALSE(torch::equal(other[0].image, a[0].image));
  CHECK(generate_synthetic(1, 0, 96).empty());
}

TEST_CASE("edges lie inside the instance masks") {
  for (const auto& s : generate_synthetic(7, 5, 96)) {
    auto any = s.masks.amax(0);
    CHECK((s.edges.to(torch::kBool) & ~any.to(torch::kBool)).sum().item<int64_t>() == 0);
    CHECK(s.edges.sum().item<int64_t>() > 0);
  }
}

TEST_CASE("shuffled order and stream digest") {
  auto o1 = shuffled_order(50, 9), o2 = shuffled_order(50, 9), o3 = shuffled_order(50, 10);
  CHECK(o1 == o2);
  CHECK(o1 != o3);
  auto sorted = o1;
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  InMemorySource src(generate_synthetic(11, 5, 64));
  CHECK(stream_digest(load_stream(src, 1)) == stream_digest(load_stream(src, 1)));
  CHECK(stream_digest(load_stream(src, 1)) != stream_digest(load_stream(src, 2)));
}

TEST_CASE("COCO export and load round trip") {
  auto dir = temp_dir("coco");
  auto samples = generate_synthetic(12, 3, 64);
  write_coco_dataset(samples, dir);
  auto ds = CocoDataset::load(dir / "annotations.json", dir / "images");
  REQUIRE(ds.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    auto s = ds.get(i);
    CHECK(torch::equal(s.image, samples[i].image));
    CHECK(torch::equal(s.masks, samples[i].masks));
    CHECK(torch::equal(s.edges, samples[i].edges));
  }
  // Missing images are skipped, malformed files throw.
  std::filesystem::remove(dir / "images" / ds.record(0).file_name);
  CHECK(CocoDataset::load(dir / "annotations.json", dir / "images").size() == 2);
  {
    std::ofstream bad(dir / "bad.json");
    bad << "{\"images\": [";
  }
  CHECK_THROWS(CocoDataset::load(dir / "bad.json", dir / "images"));
  std::filesystem::remove_all(dir);
}
