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
#include "camoseg/engine.hpp"
#include "camoseg_version.h"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "camoseg/mask_codec.hpp"

namespace camoseg {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;
using nlohmann::json;

std::string version_string() { return std::string(CAMOSEG_VERSION) + " (" + CAMOSEG_GIT_REV + ")"; }

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Normalization normalization(const RunConfig& config) {
  Normalization n;
  for (int c = 0; c < 3; ++c) {
    n.mean[c] = static_cast<float>(config.data.pixel_mean[c]);
    n.std[c] = static_cast<float>(config.data.pixel_std[c]);
  }
  return n;
}

std::shared_ptr<SampleSource> training_source(const RunConfig& config) {
  const auto& d = config.data;
  if (!d.train_annotations.empty()) {
    return std::make_shared<CocoDataset>(CocoDataset::load(d.train_annotations, d.train_images));
  }
  return std::make_shared<InMemorySource>(generate_synthetic(d.synthetic_seed, d.synthetic_count, d.synthetic_size));
}

std::shared_ptr<SampleSource> validation_source(const RunConfig& config) {
  const auto& d = config.data;
  if (!d.val_annotations.empty()) {
    return std::make_shared<CocoDataset>(CocoDataset::load(d.val_annotations, d.val_images));
  }
  return training_source(config);
}

void write_manifest(const RunConfig& config, const fs::path& dir, const std::string& command) {
  fs::create_directories(dir);
  json manifest = {{"command", command},
                   {"config_hash", config_hash(config)},
                   {"seed", config.seed},
                   {"version", version_string()},
                   {"torch_threads", torch::get_num_threads()},
                   {"created", utc_timestamp()},
                   {"config", to_json(config)}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
  save_config(config, dir / "config.json");
}

namespace {

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

AugmentOptions augment_options(const RunConfig& config) {
  AugmentOptions a;
  a.min_short_side = config.data.min_short_side;
  a.max_short_side = config.data.max_short_side;
  a.max_long_side = config.data.max_long_side;
  a.flip_prob = config.data.flip_prob;
  return a;
}

void atomic_save(const std::function<void(const fs::path&)>& writer, const fs::path& path) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  writer(tmp);
  fs::rename(tmp, path);
}

std::string checkpoint_name(int64_t iteration) {
  std::ostringstream ss;
  ss << "model_" << std::setw(7) << std::setfill('0') << iteration << ".pt";
  return ss.str();
}

}  // namespace

Trainer::Trainer(RunConfig config, std::shared_ptr<SampleSource> data)
    : config_(std::move(config)), data_(std::move(data)) {
  TORCH_CHECK(data_ && data_->size() > 0, "training data is empty");
  torch::manual_seed(config_.seed);
  model_ = CamoSegModel(config_.model);
  const auto& o = config_.optim;
  optimizer_ = std::make_unique<torch::optim::SGD>(
      model_->parameters(), torch::optim::SGDOptions(o.base_lr).momentum(o.momentum).weight_decay(o.weight_decay));
  output_dir_ = resolve_output_dir(config_);
}

double Trainer::current_lr() const { return learning_rate_at(config_.optim, iteration_); }

std::vector<Sample> Trainer::next_batch() {
  const auto n = static_cast<int64_t>(data_->size());
  const int64_t b = config_.optim.batch_size;
  const auto opts = augment_options(config_);
  std::vector<Sample> samples;
  for (int64_t j = 0; j < b; ++j) {
    const int64_t k = iteration_ * b + j;
    const int64_t epoch = k / n;
    const auto order = shuffled_order(static_cast<size_t>(n), mix64(config_.seed) ^ mix64(static_cast<uint64_t>(epoch)));
    std::mt19937_64 rng(mix64(config_.seed + 0x5151) ^ mix64(static_cast<uint64_t>(k)));
    samples.push_back(augment(data_->get(order[static_cast<size_t>(k % n)]), opts, rng));
  }
  return samples;
}

LossReport Trainer::step() {
  model_->train();
  const double lr = current_lr();
  for (auto& group : optimizer_->param_groups()) {
    static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
  }
  const auto strides = model_->edge_strides();
  auto batch = collate(next_batch(), normalization(config_), config_.model.grid_sizes,
                       assignment_options(config_), strides);
  auto output = model_->forward(batch.images);
  LossReport report;
  try {
    report = compute_losses(*model_, output, batch, config_.loss);
  } catch (const c10::Error& e) {
    const std::string what = e.what_without_backtrace();
    if (what.find("not finite") != std::string::npos) throw NonFiniteLoss(what);
    throw;
  }
  optimizer_->zero_grad();
  report.total.backward();
  const double max_norm =
      config_.optim.clip_grad_norm > 0 ? config_.optim.clip_grad_norm : std::numeric_limits<double>::infinity();
  const double norm = torch::nn::utils::clip_grad_norm_(model_->parameters(), max_norm);
  if (!std::isfinite(norm)) throw NonFiniteLoss("gradient norm is not finite");
  optimizer_->step();
  ++iteration_;
  return report;
}

void Trainer::save_checkpoint(const fs::path& path) {
  atomic_save(
      [&](const fs::path& tmp) {
        torch::serialize::OutputArchive archive;
        model_->save(archive);
        torch::serialize::OutputArchive optim;
        optimizer_->save(optim);
        archive.write("optimizer", optim);
        archive.write("iteration", torch::tensor(iteration_, torch::kInt64));
        archive.save_to(tmp.string());
      },
      path);
}

void Trainer::resume(const fs::path& checkpoint) {
  torch::serialize::InputArchive archive;
  archive.load_from(checkpoint.string());
  model_->load(archive);
  torch::serialize::InputArchive optim;
  if (archive.try_read("optimizer", optim)) optimizer_->load(optim);
  torch::Tensor iter;
  if (archive.try_read("iteration", iter)) iteration_ = iter.item<int64_t>();
}

TrainResult Trainer::run(std::optional<int64_t> max_iters,
                         const std::function<bool(int64_t, const LossReport&)>& callback) {
  write_manifest(config_, output_dir_, "train");
  std::ofstream log(output_dir_ / "train_log.jsonl", std::ios::app);
  const int64_t stop = max_iters ? std::min(config_.optim.total_iters, iteration_ + *max_iters)
                                 : config_.optim.total_iters;
  TrainResult result;
  const auto start = std::chrono::steady_clock::now();
  auto checkpoint = [&] {
    const fs::path path = output_dir_ / "checkpoints" / checkpoint_name(iteration_);
    save_checkpoint(path);
    std::ofstream(output_dir_ / "last_checkpoint") << path.string() << "\n";
    result.last_checkpoint = path;
  };
  while (iteration_ < stop) {
    LossReport report;
    try {
      report = step();
    } catch (const NonFiniteLoss& e) {
      result.aborted = true;
      result.message = std::string("aborted at iteration ") + std::to_string(iteration_) + ": " + e.what();
      log << json{{"iter", iteration_}, {"event", "abort"}, {"reason", e.what()}}.dump() << "\n";
      std::cerr << result.message << "\n";
      break;
    }
    result.last_loss = report.total.item<double>();
    if (iteration_ % config_.log_every == 0 || iteration_ == stop) {
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      json entry = {{"iter", iteration_},
                    {"lr", learning_rate_at(config_.optim, iteration_ - 1)},
                    {"loss", result.last_loss},
                    {"loss_edge", report.components.edge.item<double>()},
                    {"loss_location", report.components.location.item<double>()},
                    {"loss_mask", report.components.mask.item<double>()},
                    {"positives", report.num_positives},
                    {"elapsed_s", elapsed}};
      log << entry.dump() << "\n";
      log.flush();
      std::cout << "iter " << iteration_ << " loss " << std::fixed << std::setprecision(4) << result.last_loss
                << " (edge " << report.components.edge.item<double>() << ", loc "
                << report.components.location.item<double>() << ", mask "
                << report.components.mask.item<double>() << ") lr " << std::setprecision(6)
                << learning_rate_at(config_.optim, iteration_ - 1) << std::defaultfloat << "\n";
    }
    if (iteration_ % config_.checkpoint_every == 0) checkpoint();
    if (callback && !callback(iteration_, report)) break;
  }
  if (!result.aborted && (result.last_checkpoint.empty() || result.last_checkpoint.filename() != checkpoint_name(iteration_))) {
    checkpoint();
  }
  if (result.aborted && result.last_checkpoint.empty()) {
    const fs::path marker = output_dir_ / "last_checkpoint";
    if (fs::exists(marker)) {
      std::string p;
      std::ifstream(marker) >> p;
      result.last_checkpoint = p;
    }
  }
  result.iterations = iteration_;
  return result;
}

void load_model_weights(CamoSegModelImpl& model, const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint.string());
  torch::serialize::InputArchive archive;
  archive.load_from(checkpoint.string());
  model.load(archive);
}

Predictor::Predictor(RunConfig config, CamoSegModel model) : config_(std::move(config)), model_(std::move(model)) {}

Predictor::Predictor(RunConfig config, const fs::path& checkpoint)
    : config_(std::move(config)), model_(nullptr) {
  model_ = CamoSegModel(config_.model);
  load_model_weights(*model_, checkpoint);
}

InstanceSet Predictor::predict(const torch::Tensor& rgb) {
  model_->eval();
  torch::NoGradGuard no_grad;
  const int64_t h = rgb.size(0);
  const int64_t w = rgb.size(1);
  const double scale = resize_scale(h, w, config_.data.test_short_side, config_.data.max_long_side);
  const auto th = std::max<int64_t>(1, std::llround(h * scale));
  const auto tw = std::max<int64_t>(1, std::llround(w * scale));
  torch::Tensor input = rgb;
  if (th != h || tw != w) {
    auto x = rgb.permute({2, 0, 1}).unsqueeze(0).to(torch::kFloat32);
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{th, tw})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    input = x.squeeze(0).permute({1, 2, 0}).round().clamp(0, 255).to(torch::kUInt8).contiguous();
  }
  auto set = model_->predict(input, normalization(config_), config_.head);
  if ((th != h || tw != w) && set.size() > 0) {
    auto m = F::interpolate(set.masks.unsqueeze(1).to(torch::kFloat32),
                            F::InterpolateFuncOptions()
                                .size(std::vector<int64_t>{h, w})
                                .mode(torch::kBilinear)
                                .align_corners(false));
    set.masks = (m.squeeze(1) >= 0.5).to(torch::kUInt8);
  } else if (set.size() == 0) {
    set.masks = torch::zeros({0, h, w}, torch::kUInt8);
  }
  return set;
}

ImagePrediction to_image_prediction(const Sample& sample, const InstanceSet& set) {
  ImagePrediction p;
  p.image_id = sample.image_id;
  p.file_name = sample.file_name;
  p.height = sample.height();
  p.width = sample.width();
  p.masks = set.masks;
  auto scores = set.scores.to(torch::kFloat64).contiguous();
  p.scores.assign(scores.data_ptr<double>(), scores.data_ptr<double>() + scores.numel());
  return p;
}

json image_prediction_json(const ImagePrediction& p) {
  json instances = json::array();
  for (size_t i = 0; i < p.scores.size(); ++i) {
    instances.push_back({{"score", p.scores[i]}, {"segmentation", rle_to_json(rle_encode(p.masks[i]))}});
  }
  return {{"file_name", p.file_name},
          {"image_id", p.image_id},
          {"height", p.height},
          {"width", p.width},
          {"instances", instances}};
}

json coco_results_json(const std::vector<ImagePrediction>& predictions) {
  json out = json::array();
  for (const auto& p : predictions) {
    for (size_t i = 0; i < p.scores.size(); ++i) {
      out.push_back({{"image_id", p.image_id},
                     {"category_id", 1},
                     {"segmentation", rle_to_json(rle_encode(p.masks[i]))},
                     {"score", p.scores[i]}});
    }
  }
  return out;
}

std::map<int64_t, ImagePrediction> parse_coco_results(
    const json& results, const std::map<int64_t, std::pair<int64_t, int64_t>>& sizes) {
  if (!results.is_array()) throw std::invalid_argument("predictions: expected a JSON array of results");
  std::map<int64_t, std::vector<torch::Tensor>> masks;
  std::map<int64_t, ImagePrediction> out;
  for (size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const std::string where = "predictions[" + std::to_string(i) + "]";
    if (!r.is_object()) throw std::invalid_argument(where + ": expected an object");
    for (const char* field : {"image_id", "segmentation", "score"}) {
      if (!r.contains(field)) throw std::invalid_argument(where + ": missing field '" + field + "'");
    }
    if (!r["image_id"].is_number_integer()) throw std::invalid_argument(where + ".image_id: expected an integer");
    if (!r["score"].is_number()) throw std::invalid_argument(where + ".score: expected a number");
    const auto id = r["image_id"].get<int64_t>();
    auto it = sizes.find(id);
    if (it == sizes.end()) {
      throw std::invalid_argument(where + ".image_id: " + std::to_string(id) + " is not in the dataset");
    }
    const auto [h, w] = it->second;
    torch::Tensor m;
    try {
      m = decode_segmentation(r["segmentation"], h, w);
    } catch (const std::exception& e) {
      throw std::invalid_argument(where + ".segmentation: " + e.what());
    }
    if (m.size(0) != h || m.size(1) != w) {
      throw std::invalid_argument(where + ".segmentation: size " + std::to_string(m.size(0)) + "x" +
                                  std::to_string(m.size(1)) + " does not match image " + std::to_string(h) + "x" +
                                  std::to_string(w));
    }
    auto& p = out[id];
    p.image_id = id;
    p.height = h;
    p.width = w;
    p.scores.push_back(r["score"].get<double>());
    masks[id].push_back(m);
  }
  for (auto& [id, p] : out) p.masks = torch::stack(masks[id]);
  return out;
}

std::vector<ImagePrediction> predict_source(Predictor& predictor, const SampleSource& source) {
  std::vector<ImagePrediction> out;
  for (size_t i = 0; i < source.size(); ++i) {
    const auto sample = source.get(i);
    out.push_back(to_image_prediction(sample, predictor.predict(sample.image)));
  }
  return out;
}

ApMetrics evaluate_predictions(const SampleSource& source, const std::map<int64_t, ImagePrediction>& predictions) {
  MaskApEvaluator evaluator;
  for (size_t i = 0; i < source.size(); ++i) {
    const auto sample = source.get(i);
    auto it = predictions.find(sample.image_id);
    if (it == predictions.end() || it->second.scores.empty()) {
      evaluator.add_image(sample.masks, torch::zeros({0, sample.height(), sample.width()}, torch::kUInt8), {});
      continue;
    }
    evaluator.add_image(sample.masks, it->second.masks, it->second.scores);
  }
  return evaluator.summarize();
}

ApMetrics evaluate_predictions(const SampleSource& source, const std::vector<ImagePrediction>& predictions) {
  std::map<int64_t, ImagePrediction> by_id;
  for (const auto& p : predictions) by_id[p.image_id] = p;
  return evaluate_predictions(source, by_id);
}

json metrics_json(const ApMetrics& m, const json& metadata) {
  json meta = metadata;
  meta["num_images"] = m.num_images;
  meta["num_gt"] = m.num_gt;
  meta["num_predictions"] = m.num_predictions;
  return {{"AP", m.ap}, {"AP50", m.ap50}, {"AP75", m.ap75}, {"metadata", meta}};
}

std::string metrics_table(const ApMetrics& m) {
  std::ostringstream ss;
  auto cell = [](double v) {
    std::ostringstream c;
    if (v < 0) {
      c << "n/a";
    } else {
      c << std::fixed << std::setprecision(1) << 100.0 * v;
    }
    return c.str();
  };
  ss << "| AP    | AP50  | AP75  |\n";
  ss << "|-------|-------|-------|\n";
  ss << "| " << std::setw(5) << cell(m.ap) << " | " << std::setw(5) << cell(m.ap50) << " | " << std::setw(5)
     << cell(m.ap75) << " |\n";
  ss << m.num_images << " images, " << m.num_gt << " instances, " << m.num_predictions << " predictions\n";
  return ss.str();
}

torch::Tensor draw_overlay(const torch::Tensor& rgb, const torch::Tensor& masks, const std::vector<double>& scores) {
  auto img = rgb.contiguous().clone();
  cv::Mat canvas(static_cast<int>(img.size(0)), static_cast<int>(img.size(1)), CV_8UC3, img.data_ptr<uint8_t>());
  static const cv::Scalar palette[] = {{230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
                                       {245, 130, 48}, {145, 30, 180},  {70, 240, 240}, {240, 50, 230}};
  for (int64_t i = 0; i < masks.size(0); ++i) {
    auto m = masks[i].to(torch::kUInt8).contiguous();
    cv::Mat mask(static_cast<int>(m.size(0)), static_cast<int>(m.size(1)), CV_8UC1, m.data_ptr<uint8_t>());
    std::vector<std::vector<cv::Point>> contours;
    cv::findContours(mask.clone(), contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_NONE);
    const auto& color = palette[i % 8];
    cv::drawContours(canvas, contours, -1, color, 1);
    if (!contours.empty() && static_cast<size_t>(i) < scores.size()) {
      cv::Point top = contours[0][0];
      for (const auto& c : contours) {
        for (const auto& p : c) {
          if (p.y < top.y) top = p;
        }
      }
      std::ostringstream label;
      label << std::fixed << std::setprecision(2) << scores[i];
      cv::putText(canvas, label.str(), {top.x, std::max(top.y - 2, 8)}, cv::FONT_HERSHEY_SIMPLEX, 0.3, color, 1);
    }
  }
  return img;
}

}  // namespace camoseg
