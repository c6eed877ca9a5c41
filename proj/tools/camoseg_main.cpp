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

// camoseg command line: train, eval, infer, synth, viz, config.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "camoseg/config.hpp"
#include "camoseg/data.hpp"
#include "camoseg/engine.hpp"
#include "camoseg/mask_codec.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace camoseg;

namespace {

struct ConfigArgs {
  std::string config_file;
  std::string preset;
  std::vector<std::string> overrides;
  std::string output_dir;
  std::optional<double> score_threshold;
  std::optional<double> nms_sigma;
  bool no_nms = false;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args, bool head_flags) {
  cmd->add_option("-c,--config", args.config_file, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("-p,--preset", args.preset, "Base preset when no config file is given (paper, desk)");
  cmd->add_option("-s,--set", args.overrides, "Override a config field, e.g. optim.base_lr=0.01");
  cmd->add_option("-o,--output-dir", args.output_dir, "Output directory (relative paths use $CAMOSEG_OUTPUT_ROOT)");
  if (head_flags) {
    cmd->add_option("--score-threshold", args.score_threshold, "Location confidence threshold");
    cmd->add_option("--nms-sigma", args.nms_sigma, "Matrix NMS gaussian sigma");
    cmd->add_flag("--no-nms", args.no_nms, "Skip Matrix NMS");
  }
}

RunConfig resolve_config(const ConfigArgs& args, bool check_paths) {
  json j;
  if (!args.config_file.empty()) {
    std::ifstream in(args.config_file);
    j = json::parse(in);
    if (!args.preset.empty()) j["preset"] = args.preset;
  } else {
    j = to_json(preset(args.preset.empty() ? "paper" : args.preset));
  }
  for (const auto& o : args.overrides) apply_override(j, o);
  if (!args.output_dir.empty()) j["output_dir"] = args.output_dir;
  if (args.score_threshold) j["head"]["score_threshold"] = *args.score_threshold;
  if (args.nms_sigma) j["head"]["nms_sigma"] = *args.nms_sigma;
  if (args.no_nms) j["head"]["matrix_nms"] = false;
  RunConfig config = config_from_json(j);
  validate(config, check_paths);
  return config;
}

std::vector<fs::path> collect_images(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        auto ext = e.path().extension().string();
        for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.emplace_back(in);
    }
  }
  return out;
}

fs::path default_checkpoint(const RunConfig& config) {
  const fs::path marker = resolve_output_dir(config) / "last_checkpoint";
  if (!fs::exists(marker)) return {};
  std::string p;
  std::ifstream(marker) >> p;
  return p;
}

int run_train(const ConfigArgs& args, const std::string& resume, std::optional<int64_t> max_iters) {
  RunConfig config = resolve_config(args, true);
  Trainer trainer(config, training_source(config));
  fs::path from = resume == "auto" ? default_checkpoint(config) : fs::path(resume);
  if (!from.empty()) {
    trainer.resume(from);
    std::cout << "resumed from " << from.string() << " at iteration " << trainer.iteration() << "\n";
  }
  std::cout << "training " << config.preset << " preset into " << trainer.output_dir().string() << "\n";
  auto result = trainer.run(max_iters);
  if (result.aborted) {
    std::cerr << result.message << "\nlast good checkpoint: "
              << (result.last_checkpoint.empty() ? "<none>" : result.last_checkpoint.string()) << "\n";
    return 3;
  }
  std::cout << "finished at iteration " << result.iterations << ", checkpoint " << result.last_checkpoint.string()
            << "\n";
  return 0;
}

int run_infer(const ConfigArgs& args, std::string checkpoint, const std::vector<std::string>& inputs, bool overlays) {
  RunConfig config = resolve_config(args, false);
  if (checkpoint.empty()) checkpoint = default_checkpoint(config).string();
  if (checkpoint.empty() || !fs::exists(checkpoint)) {
    std::cerr << "error: checkpoint not found (pass --checkpoint)\n";
    return 2;
  }
  Predictor predictor(config, fs::path(checkpoint));
  const fs::path out_dir = resolve_output_dir(config) / "inference";
  fs::create_directories(out_dir);
  const auto images = collect_images(inputs);
  if (images.empty()) {
    std::cerr << "error: no input images\n";
    return 2;
  }
  int ok = 0;
  for (const auto& path : images) {
    torch::Tensor rgb;
    try {
      rgb = read_rgb(path);
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << path.string() << ": " << e.what() << "\n";
      continue;
    }
    auto set = predictor.predict(rgb);
    Sample s;
    s.image = rgb;
    s.file_name = path.filename().string();
    auto pred = to_image_prediction(s, set);
    std::ofstream(out_dir / (path.stem().string() + ".json")) << image_prediction_json(pred).dump(2) << "\n";
    if (overlays) write_rgb(out_dir / (path.stem().string() + "_overlay.png"), draw_overlay(rgb, pred.masks, pred.scores));
    std::cout << path.filename().string() << ": " << pred.scores.size() << " instances\n";
    ++ok;
  }
  if (ok == 0) {
    std::cerr << "error: no image could be read\n";
    return 1;
  }
  return 0;
}

int run_eval(const ConfigArgs& args, std::string checkpoint, const std::string& predictions_file,
             const std::string& annotations, const std::string& images, const std::string& metrics_out) {
  RunConfig config = resolve_config(args, true);
  std::shared_ptr<SampleSource> source;
  std::string dataset_name;
  if (!annotations.empty()) {
    source = std::make_shared<CocoDataset>(CocoDataset::load(annotations, images));
    dataset_name = annotations;
  } else {
    source = validation_source(config);
    dataset_name = !config.data.val_annotations.empty() ? config.data.val_annotations
                   : !config.data.train_annotations.empty() ? config.data.train_annotations
                                                            : "synthetic";
  }
  const fs::path out_dir = resolve_output_dir(config);
  fs::create_directories(out_dir);
  json metadata = {{"dataset", dataset_name}, {"version", version_string()}, {"timestamp", utc_timestamp()}};
  ApMetrics metrics;
  if (!predictions_file.empty()) {
    std::map<int64_t, std::pair<int64_t, int64_t>> sizes;
    for (size_t i = 0; i < source->size(); ++i) {
      auto s = source->get(i);
      sizes[s.image_id] = {s.height(), s.width()};
    }
    std::ifstream in(predictions_file);
    if (!in) throw std::runtime_error("cannot open predictions file " + predictions_file);
    const auto parsed = parse_coco_results(json::parse(in), sizes);
    metrics = evaluate_predictions(*source, parsed);
    metadata["predictions"] = predictions_file;
  } else {
    if (checkpoint.empty()) checkpoint = default_checkpoint(config).string();
    if (checkpoint.empty() || !fs::exists(checkpoint)) {
      std::cerr << "error: pass --checkpoint or --predictions\n";
      return 2;
    }
    Predictor predictor(config, fs::path(checkpoint));
    const auto preds = predict_source(predictor, *source);
    std::ofstream(out_dir / "predictions.json") << coco_results_json(preds).dump() << "\n";
    metrics = evaluate_predictions(*source, preds);
    metadata["checkpoint"] = checkpoint;
    metadata["config_hash"] = config_hash(config);
  }
  const fs::path metrics_path = metrics_out.empty() ? out_dir / "metrics.json" : fs::path(metrics_out);
  if (metrics_path.has_parent_path()) fs::create_directories(metrics_path.parent_path());
  std::ofstream(metrics_path) << metrics_json(metrics, metadata).dump(2) << "\n";
  std::cout << metrics_table(metrics) << "metrics written to " << metrics_path.string() << "\n";
  return 0;
}

int run_synth(const std::string& out, int64_t count, int64_t size, uint64_t seed) {
  auto samples = generate_synthetic(seed, count, size);
  write_coco_dataset(samples, out);
  std::cout << "wrote " << samples.size() << " images to " << out << "\n";
  return 0;
}

int run_viz(const std::string& annotations, const std::string& images, const std::string& predictions_file,
            const std::string& out, bool edges) {
  auto dataset = CocoDataset::load(annotations, images);
  std::map<int64_t, ImagePrediction> preds;
  if (!predictions_file.empty()) {
    std::map<int64_t, std::pair<int64_t, int64_t>> sizes;
    for (const auto& r : dataset.records()) sizes[r.id] = {r.height, r.width};
    std::ifstream in(predictions_file);
    if (!in) throw std::runtime_error("cannot open predictions file " + predictions_file);
    preds = parse_coco_results(json::parse(in), sizes);
  }
  fs::create_directories(out);
  for (size_t i = 0; i < dataset.size(); ++i) {
    auto s = dataset.get(i);
    const auto stem = fs::path(s.file_name).stem().string();
    torch::Tensor overlay;
    if (!predictions_file.empty()) {
      auto it = preds.find(s.image_id);
      overlay = it == preds.end() ? s.image : draw_overlay(s.image, it->second.masks, it->second.scores);
    } else {
      overlay = draw_overlay(s.image, s.masks, std::vector<double>(static_cast<size_t>(s.num_instances()), 1.0));
    }
    write_rgb(fs::path(out) / (stem + "_overlay.png"), overlay);
    if (edges) {
      auto e = (s.edges * 255).to(torch::kUInt8).unsqueeze(-1).expand({-1, -1, 3}).contiguous();
      write_rgb(fs::path(out) / (stem + "_edges.png"), e);
    }
  }
  std::cout << "wrote " << dataset.size() << " visualizations to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"camoseg: camouflaged instance segmentation"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  ConfigArgs train_args, infer_args, eval_args, config_args;
  std::string resume;
  std::optional<int64_t> max_iters;
  auto* train = app.add_subcommand("train", "Train a model");
  add_config_options(train, train_args, false);
  train->add_option("--resume", resume, "Checkpoint to resume from, or 'auto' for the run's last checkpoint");
  train->add_option("--max-iters", max_iters, "Stop after this many iterations in this invocation");

  std::string infer_ckpt;
  std::vector<std::string> infer_inputs;
  bool overlays = false;
  auto* infer = app.add_subcommand("infer", "Predict instances for images");
  add_config_options(infer, infer_args, true);
  infer->add_option("--checkpoint", infer_ckpt, "Model checkpoint");
  infer->add_option("inputs", infer_inputs, "Image files or directories")->required();
  infer->add_flag("--overlays", overlays, "Also write overlay PNGs");

  std::string eval_ckpt, eval_preds, eval_ann, eval_images, eval_out;
  auto* eval = app.add_subcommand("eval", "Compute mask AP");
  add_config_options(eval, eval_args, true);
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint (runs inference first)");
  eval->add_option("--predictions", eval_preds, "COCO results JSON to score instead of running a model");
  eval->add_option("--annotations", eval_ann, "COCO annotation file (default: config validation set)");
  eval->add_option("--images", eval_images, "Image directory for --annotations");
  eval->add_option("--metrics", eval_out, "Metrics JSON path (default: <output_dir>/metrics.json)");

  std::string synth_out;
  int64_t synth_count = 10, synth_size = 96;
  uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic COCO-format dataset");
  synth->add_option("-o,--out", synth_out, "Output directory")->required();
  synth->add_option("-n,--count", synth_count, "Number of images")->check(CLI::PositiveNumber);
  synth->add_option("--size", synth_size, "Image side length (>= 64)")->check(CLI::Range(64, 4096));
  synth->add_option("--seed", synth_seed, "Generator seed");

  std::string viz_ann, viz_images, viz_preds, viz_out;
  bool viz_edges = false;
  auto* viz = app.add_subcommand("viz", "Draw ground truth or predictions over images");
  viz->add_option("--annotations", viz_ann, "COCO annotation file")->required()->check(CLI::ExistingFile);
  viz->add_option("--images", viz_images, "Image directory")->required();
  viz->add_option("--predictions", viz_preds, "COCO results JSON (default: draw ground truth)");
  viz->add_option("-o,--out", viz_out, "Output directory")->required();
  viz->add_flag("--edges", viz_edges, "Also write edge label maps");

  auto* show = app.add_subcommand("config", "Print the resolved configuration");
  add_config_options(show, config_args, true);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return run_train(train_args, resume, max_iters);
    if (*infer) return run_infer(infer_args, infer_ckpt, infer_inputs, overlays);
    if (*eval) return run_eval(eval_args, eval_ckpt, eval_preds, eval_ann, eval_images, eval_out);
    if (*synth) return run_synth(synth_out, synth_count, synth_size, synth_seed);
    if (*viz) return run_viz(viz_ann, viz_images, viz_preds, viz_out, viz_edges);
    if (*show) {
      std::cout << canonical_json(resolve_config(config_args, false));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
