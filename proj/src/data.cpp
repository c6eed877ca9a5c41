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
#include "camoseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "camoseg/mask_codec.hpp"

namespace camoseg {

namespace F = torch::nn::functional;
namespace fs = std::filesystem;

torch::Tensor read_rgb(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
}

void write_rgb(const fs::path& path, const torch::Tensor& rgb) {
  auto img = rgb.to(torch::kUInt8).contiguous();
  TORCH_CHECK(img.dim() == 3 && img.size(2) == 3, "write_rgb expects (H, W, 3)");
  cv::Mat view(static_cast<int>(img.size(0)), static_cast<int>(img.size(1)), CV_8UC3, img.data_ptr());
  cv::Mat bgr;
  cv::cvtColor(view, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw std::runtime_error("cannot write image " + path.string());
}

namespace {

torch::Tensor erode_cross(const torch::Tensor& masks) {
  const int64_t h = masks.size(1);
  const int64_t w = masks.size(2);
  auto x = masks.to(torch::kFloat32).unsqueeze(1);
  auto p = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  using torch::indexing::Slice;
  auto center = p.index({Slice(), Slice(), Slice(1, h + 1), Slice(1, w + 1)});
  auto up = p.index({Slice(), Slice(), Slice(0, h), Slice(1, w + 1)});
  auto down = p.index({Slice(), Slice(), Slice(2, h + 2), Slice(1, w + 1)});
  auto left = p.index({Slice(), Slice(), Slice(1, h + 1), Slice(0, w)});
  auto right = p.index({Slice(), Slice(), Slice(1, h + 1), Slice(2, w + 2)});
  auto eroded = torch::min(torch::min(torch::min(center, up), torch::min(down, left)), right);
  return eroded.squeeze(1) > 0.5;
}

}  // namespace

torch::Tensor edge_map(const torch::Tensor& masks) {
  TORCH_CHECK(masks.dim() == 3, "edge_map expects (N, H, W) masks");
  if (masks.size(0) == 0) return torch::zeros({masks.size(1), masks.size(2)}, torch::kUInt8);
  auto m = masks != 0;
  auto edges = m.logical_and(erode_cross(masks).logical_not());
  return edges.any(0).to(torch::kUInt8);
}

std::vector<torch::Tensor> downsample_edges(const torch::Tensor& edges,
                                            std::span<const int64_t> strides) {
  std::vector<torch::Tensor> out;
  auto e = edges.to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
  for (int64_t s : strides) {
    TORCH_CHECK(s >= 1, "edge stride must be >= 1");
    if (s == 1) {
      out.push_back(edges.to(torch::kUInt8));
      continue;
    }
    auto pooled = F::max_pool2d(e, F::MaxPool2dFuncOptions(s).stride(s).ceil_mode(true));
    out.push_back(pooled.squeeze(0).squeeze(0).to(torch::kUInt8));
  }
  return out;
}

std::vector<torch::Tensor> derive_edge_labels(const torch::Tensor& masks,
                                              std::span<const int64_t> strides) {
  return downsample_edges(edge_map(masks), strides);
}

Sample with_edges(Sample sample) {
  sample.edges = edge_map(sample.masks);
  return sample;
}

double resize_scale(int64_t height, int64_t width, int64_t short_side, int64_t max_long_side) {
  const double s = static_cast<double>(std::min(height, width));
  const double l = static_cast<double>(std::max(height, width));
  double scale = static_cast<double>(short_side) / s;
  if (max_long_side > 0 && l * scale > static_cast<double>(max_long_side)) {
    scale = static_cast<double>(max_long_side) / l;
  }
  return scale;
}

Sample resize_sample(const Sample& sample, int64_t height, int64_t width) {
  Sample out = sample;
  if (height == sample.height() && width == sample.width()) return with_edges(std::move(out));
  auto opts = F::InterpolateFuncOptions()
                  .size(std::vector<int64_t>{height, width})
                  .mode(torch::kBilinear)
                  .align_corners(false);
  auto img = sample.image.to(torch::kFloat32).permute({2, 0, 1}).unsqueeze(0);
  out.image = F::interpolate(img, opts).squeeze(0).permute({1, 2, 0}).round().clamp(0, 255).to(torch::kUInt8).contiguous();
  if (sample.num_instances() > 0) {
    auto m = F::interpolate(sample.masks.to(torch::kFloat32).unsqueeze(1), opts).squeeze(1) >= 0.5;
    auto keep = torch::nonzero(m.flatten(1).any(1)).reshape(-1);
    out.masks = m.index_select(0, keep).to(torch::kUInt8);
    std::vector<int64_t> ids;
    auto keep_acc = keep.accessor<int64_t, 1>();
    for (int64_t i = 0; i < keep.size(0); ++i) ids.push_back(sample.instance_ids.at(keep_acc[i]));
    out.instance_ids = std::move(ids);
  } else {
    out.masks = torch::zeros({0, height, width}, torch::kUInt8);
  }
  return with_edges(std::move(out));
}

Sample flip_sample(const Sample& sample) {
  Sample out = sample;
  out.image = sample.image.flip({1}).contiguous();
  out.masks = sample.masks.flip({2}).contiguous();
  if (sample.edges.defined()) out.edges = sample.edges.flip({1}).contiguous();
  return out;
}

Sample augment(const Sample& sample, const AugmentOptions& options, std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> short_dist(options.min_short_side, options.max_short_side);
  const double scale =
      resize_scale(sample.height(), sample.width(), short_dist(rng), options.max_long_side);
  const auto h = std::max<int64_t>(1, std::llround(static_cast<double>(sample.height()) * scale));
  const auto w = std::max<int64_t>(1, std::llround(static_cast<double>(sample.width()) * scale));
  Sample out = resize_sample(sample, h, w);
  std::bernoulli_distribution flip(options.flip_prob);
  if (flip(rng)) out = flip_sample(out);
  return out;
}

namespace {

uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Multi-octave value noise in roughly [-1, 1], (size, size).
torch::Tensor value_noise(std::mt19937_64& rng, int64_t size) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  auto field = torch::zeros({1, 1, size, size});
  double amplitude = 1.0;
  double total = 0.0;
  for (int64_t cells : {4, 8, 16}) {
    auto grid = torch::empty({1, 1, cells + 1, cells + 1});
    auto* g = grid.data_ptr<float>();
    for (int64_t i = 0; i < grid.numel(); ++i) g[i] = u(rng);
    field += amplitude * F::interpolate(grid, F::InterpolateFuncOptions()
                                                  .size(std::vector<int64_t>{size, size})
                                                  .mode(torch::kBilinear)
                                                  .align_corners(true));
    total += amplitude;
    amplitude *= 0.5;
  }
  return (field / total).view({size, size});
}

// (size, size, 3) float texture around `base` (0..255 units).
torch::Tensor texture(std::mt19937_64& rng, int64_t size, const std::array<float, 3>& base,
                      double amplitude) {
  auto shared = value_noise(rng, size);
  std::vector<torch::Tensor> channels;
  for (int c = 0; c < 3; ++c) {
    auto own = value_noise(rng, size);
    channels.push_back(base[c] + amplitude * 255.0 * (shared + 0.25 * own));
  }
  return torch::stack(channels, 2);
}

torch::Tensor blob_mask(std::mt19937_64& rng, int64_t size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = static_cast<double>(size);
  const double radius = s * (0.10 + 0.12 * u(rng));
  const double aspect = 0.6 + 0.4 * u(rng);
  const double rotation = u(rng) * std::numbers::pi;
  const double cx = radius + u(rng) * (s - 2.0 * radius);
  const double cy = radius + u(rng) * (s - 2.0 * radius);
  const double a2 = 0.12 * u(rng), p2 = u(rng) * 2.0 * std::numbers::pi;
  const double a3 = 0.08 * u(rng), p3 = u(rng) * 2.0 * std::numbers::pi;
  auto coords = torch::arange(size, torch::kFloat64) + 0.5;
  auto grid = torch::meshgrid({coords, coords}, "ij");
  auto dy = grid[0] - cy;
  auto dx = grid[1] - cx;
  auto u_axis = dx * std::cos(rotation) + dy * std::sin(rotation);
  auto v_axis = (-dx * std::sin(rotation) + dy * std::cos(rotation)) / aspect;
  auto rho = torch::sqrt(u_axis.square() + v_axis.square());
  auto phi = torch::atan2(v_axis, u_axis);
  auto boundary = radius * (1.0 + a2 * torch::cos(2.0 * phi + p2) + a3 * torch::cos(3.0 * phi + p3));
  return (rho <= boundary).to(torch::kUInt8);
}

double iou(const torch::Tensor& a, const torch::Tensor& b) {
  auto inter = (a & b).sum().item<double>();
  auto uni = (a | b).sum().item<double>();
  return uni > 0 ? inter / uni : 0.0;
}

Sample synthesize_one(uint64_t seed, int64_t index, int64_t size, const SyntheticOptions& opt) {
  std::mt19937_64 rng(mix64(seed) ^ mix64(static_cast<uint64_t>(index) + 0x632BE59BD9B4E019ULL));
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::array<float, 3> base{};
  for (auto& c : base) c = 60.0f + 130.0f * u(rng);
  auto image = texture(rng, size, base, opt.texture_amplitude);

  std::uniform_int_distribution<int64_t> count_dist(opt.min_instances, opt.max_instances);
  const int64_t wanted = count_dist(rng);
  std::vector<torch::Tensor> shapes;
  constexpr int kMaxTries = 100;
  for (int tries = 0; tries < kMaxTries && static_cast<int64_t>(shapes.size()) < wanted; ++tries) {
    auto candidate = blob_mask(rng, size);
    bool ok = candidate.sum().item<int64_t>() >= opt.min_area;
    for (const auto& s : shapes) ok = ok && iou(s, candidate) < opt.max_pair_iou;
    if (!ok) continue;
    // Later blobs occlude earlier ones; every visible part must stay large enough.
    auto trial = shapes;
    trial.push_back(candidate);
    for (size_t i = 0; i < trial.size() && ok; ++i) {
      auto visible = trial[i].clone();
      for (size_t j = i + 1; j < trial.size(); ++j) visible &= trial[j].logical_not().to(torch::kUInt8);
      ok = visible.sum().item<int64_t>() >= opt.min_area;
    }
    if (ok) shapes = std::move(trial);
  }

  std::vector<torch::Tensor> visible;
  for (size_t i = 0; i < shapes.size(); ++i) {
    auto v = shapes[i].clone();
    for (size_t j = i + 1; j < shapes.size(); ++j) v &= shapes[j].logical_not().to(torch::kUInt8);
    visible.push_back(v);
  }
  for (size_t i = 0; i < shapes.size(); ++i) {
    const float sign = u(rng) < 0.5f ? -1.0f : 1.0f;
    std::array<float, 3> shifted{};
    for (int c = 0; c < 3; ++c) {
      const float jitter = 0.5f + u(rng);
      shifted[c] = base[c] + sign * jitter * static_cast<float>(opt.contrast * 255.0);
    }
    auto fill = texture(rng, size, shifted, opt.texture_amplitude);
    auto m = shapes[i].to(torch::kBool).unsqueeze(2);
    image = torch::where(m, fill, image);
  }

  Sample sample;
  sample.image = image.round().clamp(0, 255).to(torch::kUInt8).contiguous();
  sample.masks = visible.empty() ? torch::zeros({0, size, size}, torch::kUInt8) : torch::stack(visible);
  for (size_t i = 0; i < visible.size(); ++i) sample.instance_ids.push_back(static_cast<int64_t>(i) + 1);
  std::ostringstream name;
  name << "synthetic_" << std::setw(6) << std::setfill('0') << index << ".png";
  sample.file_name = name.str();
  sample.image_id = index + 1;
  sample.original_height = size;
  sample.original_width = size;
  return with_edges(std::move(sample));
}

}  // namespace

std::vector<Sample> generate_synthetic(uint64_t seed, int64_t count, int64_t size,
                                       const SyntheticOptions& options) {
  if (size < 64) throw std::invalid_argument("synthetic image size must be >= 64");
  if (count < 0) throw std::invalid_argument("synthetic sample count must be >= 0");
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) out.push_back(synthesize_one(seed, i, size, options));
  return out;
}

CocoDataset CocoDataset::load(const fs::path& annotation_file, const fs::path& image_root) {
  std::ifstream in(annotation_file);
  if (!in) throw std::runtime_error("cannot open annotation file " + annotation_file.string());
  nlohmann::json doc = nlohmann::json::parse(in);  // throws on malformed input
  if (!doc.is_object() || !doc.contains("images") || !doc["images"].is_array()) {
    throw std::runtime_error(annotation_file.string() + ": missing 'images' array");
  }
  std::map<int64_t, std::vector<const nlohmann::json*>> by_image;
  if (doc.contains("annotations")) {
    for (const auto& ann : doc["annotations"]) by_image[ann.at("image_id").get<int64_t>()].push_back(&ann);
  }
  CocoDataset ds;
  ds.root_ = image_root;
  for (const auto& img : doc["images"]) {
    CocoImageRecord rec;
    rec.id = img.at("id").get<int64_t>();
    rec.file_name = img.at("file_name").get<std::string>();
    rec.height = img.value("height", int64_t{0});
    rec.width = img.value("width", int64_t{0});
    if (!fs::exists(image_root / rec.file_name)) {
      std::cerr << "warning: image " << (image_root / rec.file_name).string()
                << " not found, skipping\n";
      continue;
    }
    for (const auto* ann : by_image[rec.id]) {
      rec.segmentations.push_back(ann->at("segmentation"));
      rec.annotation_ids.push_back(ann->value("id", int64_t{0}));
    }
    ds.records_.push_back(std::move(rec));
  }
  std::sort(ds.records_.begin(), ds.records_.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  return ds;
}

Sample CocoDataset::get(size_t index) const {
  const auto& rec = records_.at(index);
  Sample s;
  s.image = read_rgb(root_ / rec.file_name);
  s.file_name = rec.file_name;
  s.image_id = rec.id;
  s.original_height = s.height();
  s.original_width = s.width();
  std::vector<torch::Tensor> masks;
  for (size_t i = 0; i < rec.segmentations.size(); ++i) {
    auto m = decode_segmentation(rec.segmentations[i], s.height(), s.width());
    if (m.size(0) != s.height() || m.size(1) != s.width()) {
      std::cerr << "warning: annotation " << rec.annotation_ids[i] << " size mismatch, skipping\n";
      continue;
    }
    if (m.sum().item<int64_t>() == 0) {
      std::cerr << "warning: annotation " << rec.annotation_ids[i] << " has zero area, dropped\n";
      continue;
    }
    masks.push_back(m);
    s.instance_ids.push_back(rec.annotation_ids[i]);
  }
  s.masks = masks.empty() ? torch::zeros({0, s.height(), s.width()}, torch::kUInt8) : torch::stack(masks);
  return with_edges(std::move(s));
}

std::vector<size_t> shuffled_order(size_t n, uint64_t seed) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  // Fisher-Yates with explicit draws so the order does not depend on the
  // standard library's shuffle.
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::vector<Sample> load_stream(const SampleSource& source, uint64_t seed) {
  std::vector<Sample> out;
  for (size_t i : shuffled_order(source.size(), seed)) out.push_back(source.get(i));
  return out;
}

std::string stream_digest(const std::vector<Sample>& samples) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& s : samples) {
    auto img = s.image.contiguous();
    feed(img.data_ptr(), static_cast<size_t>(img.numel()));
    auto m = s.masks.to(torch::kUInt8).contiguous();
    feed(m.data_ptr(), static_cast<size_t>(m.numel()));
    feed(&s.image_id, sizeof(s.image_id));
    for (auto id : s.instance_ids) feed(&id, sizeof(id));
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

void write_coco_dataset(const std::vector<Sample>& samples, const fs::path& dir) {
  fs::create_directories(dir / "images");
  nlohmann::json images = nlohmann::json::array();
  nlohmann::json annotations = nlohmann::json::array();
  int64_t ann_id = 1;
  for (const auto& s : samples) {
    write_rgb(dir / "images" / s.file_name, s.image);
    images.push_back({{"id", s.image_id},
                      {"file_name", s.file_name},
                      {"height", s.height()},
                      {"width", s.width()}});
    for (int64_t i = 0; i < s.num_instances(); ++i) {
      auto m = s.masks[i];
      auto pts = torch::nonzero(m);
      auto ys = pts.select(1, 0);
      auto xs = pts.select(1, 1);
      const int64_t x0 = xs.min().item<int64_t>(), y0 = ys.min().item<int64_t>();
      const int64_t x1 = xs.max().item<int64_t>(), y1 = ys.max().item<int64_t>();
      annotations.push_back({{"id", ann_id++},
                             {"image_id", s.image_id},
                             {"category_id", 1},
                             {"iscrowd", 0},
                             {"area", m.sum().item<int64_t>()},
                             {"bbox", {x0, y0, x1 - x0 + 1, y1 - y0 + 1}},
                             {"segmentation", rle_to_json(rle_encode(m))}});
    }
  }
  nlohmann::json doc = {{"images", images},
                        {"annotations", annotations},
                        {"categories", {{{"id", 1}, {"name", "camouflage"}}}}};
  std::ofstream out(dir / "annotations.json");
  out << doc.dump(1) << "\n";
}

}  // namespace camoseg
