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
#include "camoseg/config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace camoseg {

using nlohmann::json;

RunConfig paper_preset() {
  RunConfig c;
  c.preset = "paper";
  c.output_dir = "runs/paper";
  c.model.backbone = "resnet50";
  return c;
}

RunConfig desk_preset() {
  RunConfig c;
  c.preset = "desk";
  c.output_dir = "runs/desk";
  c.checkpoint_every = 250;
  c.log_every = 10;

  c.model.backbone = "small";
  c.model.embed_dim = 64;
  c.model.encoder_layers = 3;
  c.model.decoder_layers = 1;
  c.model.heads = 4;
  c.model.sample_points = 4;
  c.model.gn_groups = 32;
  c.model.grid_sizes = {6, 4, 2};

  c.loss.scale_ranges = {{0.0, 48.0}, {0.0, 96.0}, {24.0, std::numeric_limits<double>::infinity()}};

  c.optim.base_lr = 0.01;
  c.optim.milestones = {1500, 1800};
  c.optim.total_iters = 2000;
  c.optim.warmup_iters = 100;
  c.optim.warmup_factor = 0.01;
  c.optim.batch_size = 4;
  c.optim.clip_grad_norm = 10.0;

  c.data.min_short_side = 64;
  c.data.max_short_side = 128;
  c.data.max_long_side = 128;
  c.data.test_short_side = 96;
  c.data.synthetic_count = 10;
  c.data.synthetic_size = 96;
  return c;
}

RunConfig preset(const std::string& name) {
  if (name == "paper") return paper_preset();
  if (name == "desk") return desk_preset();
  throw std::invalid_argument("unknown preset '" + name + "' (expected paper or desk)");
}

namespace {

json ranges_to_json(const std::vector<ScaleRange>& ranges) {
  json out = json::array();
  for (const auto& r : ranges) {
    json upper = std::isinf(r.upper) ? json(nullptr) : json(r.upper);
    out.push_back(json::array({r.lower, upper}));
  }
  return out;
}

std::vector<ScaleRange> ranges_from_json(const json& j) {
  std::vector<ScaleRange> out;
  for (const auto& item : j) {
    if (!item.is_array() || item.size() != 2) {
      throw std::invalid_argument("loss.scale_ranges: each entry must be [lower, upper|null]");
    }
    ScaleRange r;
    r.lower = item[0].get<double>();
    r.upper = item[1].is_null() ? std::numeric_limits<double>::infinity() : item[1].get<double>();
    out.push_back(r);
  }
  return out;
}

// Reads j[key] into `out` when present and records it as consumed.
class Reader {
 public:
  Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw std::invalid_argument("config section '" + section_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config field '" + path(key) + "': " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw std::invalid_argument("unknown config field '" + path(it.key()) + "'");
    }
  }

  std::string path(const std::string& key) const { return section_.empty() ? key : section_ + "." + key; }

 private:
  const json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["checkpoint_every"] = c.checkpoint_every;
  j["log_every"] = c.log_every;

  const auto& m = c.model;
  j["model"] = {{"backbone", m.backbone},         {"embed_dim", m.embed_dim},
                {"encoder_layers", m.encoder_layers}, {"decoder_layers", m.decoder_layers},
                {"heads", m.heads},               {"sample_points", m.sample_points},
                {"gn_groups", m.gn_groups},       {"ffn_residual", m.ffn_residual},
                {"encoder_levels", m.encoder_levels}, {"grid_sizes", m.grid_sizes},
                {"cff_inputs", m.cff_inputs},     {"edge_levels", m.edge_levels}};

  const auto& h = c.head;
  j["head"] = {{"score_threshold", h.score_threshold}, {"nms_sigma", h.nms_sigma},
               {"pre_nms_top_k", h.pre_nms_top_k},     {"max_instances", h.max_instances},
               {"score_floor", h.score_floor},         {"min_area", h.min_area},
               {"mask_threshold", h.mask_threshold}, {"matrix_nms", h.matrix_nms}};

  const auto& l = c.loss;
  j["loss"] = {{"lambda_edge", l.lambda_edge},   {"lambda_loc", l.lambda_loc},
               {"lambda_mask", l.lambda_mask},   {"focal_alpha", l.focal_alpha},
               {"focal_gamma", l.focal_gamma},   {"dice_smooth", l.dice_smooth},
               {"center_epsilon", l.center_epsilon}, {"scale_ranges", ranges_to_json(l.scale_ranges)}};

  const auto& o = c.optim;
  j["optim"] = {{"base_lr", o.base_lr},         {"momentum", o.momentum},
                {"weight_decay", o.weight_decay}, {"milestones", o.milestones},
                {"gamma", o.gamma},             {"total_iters", o.total_iters},
                {"warmup_iters", o.warmup_iters}, {"warmup_factor", o.warmup_factor},
                {"batch_size", o.batch_size},   {"clip_grad_norm", o.clip_grad_norm}};

  const auto& d = c.data;
  j["data"] = {{"train_annotations", d.train_annotations},
               {"train_images", d.train_images},
               {"val_annotations", d.val_annotations},
               {"val_images", d.val_images},
               {"min_short_side", d.min_short_side},
               {"max_short_side", d.max_short_side},
               {"max_long_side", d.max_long_side},
               {"test_short_side", d.test_short_side},
               {"flip_prob", d.flip_prob},
               {"pixel_mean", d.pixel_mean},
               {"pixel_std", d.pixel_std},
               {"synthetic", {{"count", d.synthetic_count}, {"size", d.synthetic_size}, {"seed", d.synthetic_seed}}}};
  return j;
}

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  std::string name = "paper";
  if (auto it = j.find("preset"); it != j.end()) {
    if (!it->is_string()) throw std::invalid_argument("config field 'preset' must be a string");
    name = it->get<std::string>();
  }
  RunConfig c = preset(name);

  Reader top(j, "");
  top.get("preset", c.preset);
  top.get("seed", c.seed);
  top.get("output_dir", c.output_dir);
  top.get("checkpoint_every", c.checkpoint_every);
  top.get("log_every", c.log_every);

  if (const json* s = top.child("model")) {
    Reader r(*s, "model");
    auto& m = c.model;
    r.get("backbone", m.backbone);
    r.get("embed_dim", m.embed_dim);
    r.get("encoder_layers", m.encoder_layers);
    r.get("decoder_layers", m.decoder_layers);
    r.get("heads", m.heads);
    r.get("sample_points", m.sample_points);
    r.get("gn_groups", m.gn_groups);
    r.get("ffn_residual", m.ffn_residual);
    r.get("encoder_levels", m.encoder_levels);
    r.get("grid_sizes", m.grid_sizes);
    r.get("cff_inputs", m.cff_inputs);
    r.get("edge_levels", m.edge_levels);
    r.finish();
  }
  if (const json* s = top.child("head")) {
    Reader r(*s, "head");
    auto& h = c.head;
    r.get("score_threshold", h.score_threshold);
    r.get("nms_sigma", h.nms_sigma);
    r.get("pre_nms_top_k", h.pre_nms_top_k);
    r.get("max_instances", h.max_instances);
    r.get("score_floor", h.score_floor);
    r.get("min_area", h.min_area);
    r.get("mask_threshold", h.mask_threshold);
    r.get("matrix_nms", h.matrix_nms);
    r.finish();
  }
  if (const json* s = top.child("loss")) {
    Reader r(*s, "loss");
    auto& l = c.loss;
    r.get("lambda_edge", l.lambda_edge);
    r.get("lambda_loc", l.lambda_loc);
    r.get("lambda_mask", l.lambda_mask);
    r.get("focal_alpha", l.focal_alpha);
    r.get("focal_gamma", l.focal_gamma);
    r.get("dice_smooth", l.dice_smooth);
    r.get("center_epsilon", l.center_epsilon);
    if (const json* ranges = r.child("scale_ranges")) l.scale_ranges = ranges_from_json(*ranges);
    r.finish();
  }
  if (const json* s = top.child("optim")) {
    Reader r(*s, "optim");
    auto& o = c.optim;
    r.get("base_lr", o.base_lr);
    r.get("momentum", o.momentum);
    r.get("weight_decay", o.weight_decay);
    r.get("milestones", o.milestones);
    r.get("gamma", o.gamma);
    r.get("total_iters", o.total_iters);
    r.get("warmup_iters", o.warmup_iters);
    r.get("warmup_factor", o.warmup_factor);
    r.get("batch_size", o.batch_size);
    r.get("clip_grad_norm", o.clip_grad_norm);
    r.finish();
  }
  if (const json* s = top.child("data")) {
    Reader r(*s, "data");
    auto& d = c.data;
    r.get("train_annotations", d.train_annotations);
    r.get("train_images", d.train_images);
    r.get("val_annotations", d.val_annotations);
    r.get("val_images", d.val_images);
    r.get("min_short_side", d.min_short_side);
    r.get("max_short_side", d.max_short_side);
    r.get("max_long_side", d.max_long_side);
    r.get("test_short_side", d.test_short_side);
    r.get("flip_prob", d.flip_prob);
    r.get("pixel_mean", d.pixel_mean);
    r.get("pixel_std", d.pixel_std);
    if (const json* syn = r.child("synthetic")) {
      Reader rs(*syn, "data.synthetic");
      rs.get("count", d.synthetic_count);
      rs.get("size", d.synthetic_size);
      rs.get("seed", d.synthetic_seed);
      rs.finish();
    }
    r.finish();
  }
  top.finish();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string canonical_json(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << canonical_json(config);
}

std::string config_hash(const RunConfig& config) {
  const std::string text = to_json(config).dump();
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override '" + assignment + "' must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  std::string pointer;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw std::invalid_argument("override key '" + key + "' has an empty component");
    pointer += "/" + part;
  }
  j[json::json_pointer(pointer)] = value;
}

void validate(const RunConfig& c, bool check_paths) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid config: " + msg); };
  const auto& m = c.model;
  if (m.backbone != "small" && m.backbone != "resnet50") fail("model.backbone must be small or resnet50");
  if (m.embed_dim <= 0 || m.heads <= 0 || m.embed_dim % m.heads != 0) {
    fail("model.embed_dim must be a positive multiple of model.heads");
  }
  if (m.encoder_layers < 1 || m.decoder_layers < 1) fail("model layer counts must be >= 1");
  if (m.sample_points < 1) fail("model.sample_points must be >= 1");
  if (m.gn_groups < 1) fail("model.gn_groups must be >= 1");
  if (m.encoder_levels.empty()) fail("model.encoder_levels is empty");
  for (size_t i = 0; i < m.encoder_levels.size(); ++i) {
    const int lv = m.encoder_levels[i];
    if (lv < 2 || lv > 5) fail("model.encoder_levels entries must be in [2, 5]");
    if (i > 0 && lv <= m.encoder_levels[i - 1]) fail("model.encoder_levels must be strictly increasing");
  }
  if (m.grid_sizes.empty() || m.grid_sizes.size() > m.encoder_levels.size()) {
    fail("model.grid_sizes needs 1.." + std::to_string(m.encoder_levels.size()) + " entries");
  }
  for (auto s : m.grid_sizes) {
    if (s <= 0) fail("model.grid_sizes entries must be positive");
  }
  if (m.cff_inputs.size() < 2) fail("model.cff_inputs needs at least two inputs");
  if (m.edge_levels < 0 || m.edge_levels >= static_cast<int64_t>(m.cff_inputs.size())) {
    fail("model.edge_levels must be in [0, len(cff_inputs) - 1]");
  }
  if (c.loss.scale_ranges.size() != m.grid_sizes.size()) {
    fail("loss.scale_ranges needs one range per grid size");
  }
  for (const auto& r : c.loss.scale_ranges) {
    if (!(r.lower >= 0.0) || !(r.upper > r.lower)) fail("loss.scale_ranges must satisfy 0 <= lower < upper");
  }
  if (c.loss.center_epsilon <= 0.0) fail("loss.center_epsilon must be positive");

  const auto& o = c.optim;
  if (o.total_iters <= 0) fail("optim.total_iters must be positive");
  if (o.base_lr <= 0.0) fail("optim.base_lr must be positive");
  if (o.batch_size <= 0) fail("optim.batch_size must be positive");
  if (o.warmup_iters < 0) fail("optim.warmup_iters must be >= 0");
  for (size_t i = 0; i < o.milestones.size(); ++i) {
    if (i > 0 && o.milestones[i] <= o.milestones[i - 1]) fail("optim.milestones must be strictly increasing");
    if (o.milestones[i] <= 0 || o.milestones[i] >= o.total_iters) {
      fail("optim.milestones must lie in (0, total_iters)");
    }
  }
  if (c.checkpoint_every <= 0 || c.log_every <= 0) fail("checkpoint_every and log_every must be positive");

  const auto& h = c.head;
  if (h.max_instances <= 0 || h.pre_nms_top_k <= 0) fail("head.max_instances and head.pre_nms_top_k must be positive");
  if (h.nms_sigma <= 0.0) fail("head.nms_sigma must be positive");

  const auto& d = c.data;
  if (d.min_short_side <= 0 || d.max_short_side < d.min_short_side) fail("data short-side range is empty");
  for (double s : d.pixel_std) {
    if (!(s > 0.0)) fail("data.pixel_std entries must be positive");
  }
  if (d.train_annotations.empty() && d.synthetic_count <= 0) {
    fail("either data.train_annotations or data.synthetic.count must be set");
  }
  if (d.synthetic_count > 0 && d.synthetic_size < 64) fail("data.synthetic.size must be >= 64");
  if (check_paths) {
    for (const auto* p : {&d.train_annotations, &d.train_images, &d.val_annotations, &d.val_images}) {
      if (!p->empty() && !std::filesystem::exists(*p)) fail("path does not exist: " + *p);
    }
  }
}

double learning_rate_at(const OptimConfig& o, int64_t iteration) {
  double lr = o.base_lr;
  for (auto m : o.milestones) {
    if (iteration >= m) lr *= o.gamma;
  }
  if (iteration < o.warmup_iters) {
    const double alpha = static_cast<double>(iteration) / static_cast<double>(o.warmup_iters);
    lr *= o.warmup_factor * (1.0 - alpha) + alpha;
  }
  return lr;
}

std::filesystem::path resolve_output_dir(const RunConfig& config) {
  std::filesystem::path out(config.output_dir);
  if (out.is_absolute()) return out;
  if (const char* root = std::getenv("CAMOSEG_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / out;
  return out;
}

HeadOptions head_options(const RunConfig& config) { return config.head; }

AssignmentOptions assignment_options(const RunConfig& config) {
  AssignmentOptions a;
  a.scale_ranges = config.loss.scale_ranges;
  a.center_epsilon = config.loss.center_epsilon;
  a.mask_stride = 4;
  return a;
}

LossWeights loss_weights(const RunConfig& config) {
  return {config.loss.lambda_edge, config.loss.lambda_loc, config.loss.lambda_mask};
}

}  // namespace camoseg
