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

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "camoseg/config.hpp"

using namespace camoseg;
using nlohmann::json;

TEST_CASE("paper preset values") {
  auto c = paper_preset();
  CHECK(c.model.backbone == "resnet50");
  CHECK(c.model.embed_dim == 256);
  CHECK(c.model.encoder_layers == 6);
  CHECK(c.model.decoder_layers == 3);
  CHECK(c.model.heads == 8);
  CHECK(c.model.sample_points == 4);
  CHECK(c.model.grid_sizes == std::vector<int64_t>{36, 24, 16});
  CHECK(c.model.encoder_levels == std::vector<int>{3, 4, 5});
  CHECK(c.model.cff_inputs == std::vector<std::string>{"C2", "T3", "T4", "T5"});
  CHECK(c.model.edge_levels == 3);
  CHECK(c.loss.lambda_edge == 1.0);
  CHECK(c.loss.lambda_loc == 1.0);
  CHECK(c.loss.lambda_mask == 3.0);
  CHECK(c.loss.focal_alpha == 0.25);
  CHECK(c.loss.focal_gamma == 2.0);
  CHECK(c.optim.base_lr == 2.5e-4);
  CHECK(c.optim.milestones == std::vector<int64_t>{60000, 80000});
  CHECK(c.optim.total_iters == 90000);
  CHECK(c.optim.batch_size == 2);
  CHECK(c.optim.weight_decay == 1e-4);
  CHECK(c.optim.momentum == 0.9);
  CHECK(c.data.min_short_side == 480);
  CHECK(c.data.max_short_side == 800);
  CHECK(c.data.max_long_side == 1333);
  CHECK(c.head.score_threshold == 0.5);
  CHECK(c.head.nms_sigma == 2.0);
  CHECK(c.head.max_instances == 100);
  CHECK(preset("paper").model.embed_dim == 256);
  CHECK(preset("desk").model.embed_dim == 64);
  CHECK_THROWS_AS(preset("laptop"), std::invalid_argument);
}

TEST_CASE("config round trips through canonical JSON") {
  for (const auto* name : {"paper", "desk"}) {
    auto c = preset(name);
    c.seed = 17;
    c.model.ffn_residual = true;
    c.head.matrix_nms = false;
    c.data.synthetic_seed = 5;
    const auto text = canonical_json(c);
    auto back = config_from_json(json::parse(text));
    CHECK(canonical_json(back) == text);
    CHECK(config_hash(back) == config_hash(c));
  }
  CHECK(config_hash(paper_preset()) != config_hash(desk_preset()));
  CHECK(config_hash(desk_preset()).size() == 16);
}

TEST_CASE("missing keys come from the named preset") {
  auto c = config_from_json(json{{"preset", "desk"}, {"optim", {{"base_lr", 0.02}}}});
  CHECK(c.optim.base_lr == 0.02);
  CHECK(c.optim.total_iters == 2000);
  CHECK(c.model.embed_dim == 64);
  auto p = config_from_json(json::object());
  CHECK(p.model.embed_dim == 256);
  // The infinite upper scale bound is written as null.
  auto j = to_json(desk_preset());
  CHECK(j["loss"]["scale_ranges"][2][1].is_null());
}

TEST_CASE("unknown keys are rejected with their path") {
  try {
    config_from_json(json{{"model", {{"embed_dims", 32}}}});
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("embed_dims") != std::string::npos);
  }
  CHECK_THROWS(config_from_json(json{{"bogus", 1}}));
  CHECK_THROWS(config_from_json(json{{"data", {{"synthetic", {{"cnt", 3}}}}}}));
  CHECK_THROWS(config_from_json(json{{"model", {{"embed_dim", "wide"}}}}));
}

TEST_CASE("dotted overrides") {
  json j = to_json(desk_preset());
  apply_override(j, "optim.base_lr=0.5");
  apply_override(j, "model.grid_sizes=[3,2,1]");
  apply_override(j, "output_dir=runs/x");
  apply_override(j, "head.matrix_nms=false");
  auto c = config_from_json(j);
  CHECK(c.optim.base_lr == 0.5);
  CHECK(c.model.grid_sizes == std::vector<int64_t>{3, 2, 1});
  CHECK(c.output_dir == "runs/x");
  CHECK_FALSE(c.head.matrix_nms);
  CHECK_THROWS(apply_override(j, "no_equals"));
  CHECK_THROWS(apply_override(j, "=3"));
  CHECK_THROWS(apply_override(j, "a..b=3"));
  json k = to_json(desk_preset());
  apply_override(k, "model.typo=1");
  CHECK_THROWS(config_from_json(k));
}

TEST_CASE("validation catches inconsistent settings") {
  auto ok = desk_preset();
  CHECK_NOTHROW(validate(ok));
  auto expect_error = [](RunConfig c, const std::string& fragment) {
    try {
      validate(c, false);
      FAIL("expected an error mentioning " << fragment);
    } catch (const std::invalid_argument& e) {
      CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
    }
  };
  auto c = ok;
  c.model.embed_dim = 66;
  expect_error(c, "embed_dim");
  c = ok;
  c.optim.milestones = {1800, 1500};
  expect_error(c, "milestones");
  c = ok;
  c.optim.milestones = {1500, 2000};
  expect_error(c, "milestones");
  c = ok;
  c.model.grid_sizes = {6, 4};
  expect_error(c, "scale_ranges");
  c = ok;
  c.model.backbone = "vgg";
  expect_error(c, "backbone");
  c = ok;
  c.model.edge_levels = 4;
  expect_error(c, "edge_levels");
  c = ok;
  c.data.synthetic_count = 0;
  expect_error(c, "train_annotations");
  c = ok;
  c.data.train_annotations = "/nonexistent/ann.json";
  CHECK_NOTHROW(validate(c, false));
  CHECK_THROWS_AS(validate(c, true), std::invalid_argument);
}

TEST_CASE("learning rate warm-up and steps") {
  auto o = paper_preset().optim;
  CHECK(learning_rate_at(o, 0) == doctest::Approx(2.5e-7));
  CHECK(learning_rate_at(o, 500) == doctest::Approx(2.5e-4 * (0.5 + 0.5e-3)));
  CHECK(learning_rate_at(o, 1000) == doctest::Approx(2.5e-4));
  CHECK(learning_rate_at(o, 59999) == doctest::Approx(2.5e-4));
  CHECK(learning_rate_at(o, 60000) == doctest::Approx(2.5e-5));
  CHECK(learning_rate_at(o, 80000) == doctest::Approx(2.5e-6));
  auto d = desk_preset().optim;
  CHECK(learning_rate_at(d, 0) == doctest::Approx(1e-4));
  CHECK(learning_rate_at(d, 100) == doctest::Approx(0.01));
  CHECK(learning_rate_at(d, 1500) == doctest::Approx(0.001));
  // Non-decreasing through warm-up.
  for (int64_t i = 1; i < o.warmup_iters; ++i) CHECK(learning_rate_at(o, i) >= learning_rate_at(o, i - 1));
}

TEST_CASE("output root environment variable") {
  auto c = desk_preset();
  c.output_dir = "runs/a";
  ::setenv("CAMOSEG_OUTPUT_ROOT", "/tmp/camoseg_root", 1);
  CHECK(resolve_output_dir(c) == std::filesystem::path("/tmp/camoseg_root/runs/a"));
  c.output_dir = "/abs/path";
  CHECK(resolve_output_dir(c) == std::filesystem::path("/abs/path"));
  ::unsetenv("CAMOSEG_OUTPUT_ROOT");
  c.output_dir = "runs/a";
  CHECK(resolve_output_dir(c) == std::filesystem::path("runs/a"));
}

TEST_CASE("config files load and save") {
  auto path = std::filesystem::temp_directory_path() / "camoseg_test_config.json";
  auto c = desk_preset();
  c.seed = 99;
  save_config(c, path);
  auto back = load_config(path);
  CHECK(back.seed == 99);
  CHECK(canonical_json(back) == canonical_json(c));
  {
    std::ofstream out(path);
    out << "{ not json";
  }
  CHECK_THROWS_AS(load_config(path), std::invalid_argument);
  std::filesystem::remove(path);
  CHECK_THROWS(load_config(path));
}
