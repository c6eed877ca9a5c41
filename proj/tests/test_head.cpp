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

#include <random>

#include "camoseg/head.hpp"
#include "oracles.hpp"

using namespace camoseg;

namespace {

std::vector<std::vector<uint8_t>> as_vectors(const torch::Tensor& masks) {
  std::vector<std::vector<uint8_t>> out;
  auto flat = masks.reshape({masks.size(0), -1}).contiguous();
  for (int64_t i = 0; i < flat.size(0); ++i) {
    auto row = flat[i];
    out.emplace_back(row.data_ptr<uint8_t>(), row.data_ptr<uint8_t>() + row.numel());
  }
  return out;
}

}  // namespace

TEST_CASE("mask synthesis matches the per-pixel dot product") {
  torch::manual_seed(0);
  auto omega = torch::randn({5, 8});
  auto beta = torch::randn({5, 1});
  auto feature = torch::randn({8, 6, 7});
  auto low = synthesize_masks(omega, beta, feature, false);
  auto ref = testing::reference_synthesize(omega, beta, feature);
  CHECK((low.to(torch::kFloat64) - ref).abs().max().item<double>() < 1e-5);
  auto up = synthesize_masks(omega, beta, feature);
  CHECK(up.sizes() == torch::IntArrayRef({5, 24, 28}));
}

TEST_CASE("mask synthesis edge cases") {
  auto feature = torch::full({4, 3, 3}, 2.0);
  auto omega = torch::tensor({{1.0f, 0.5f, 0.0f, -1.0f}});
  auto beta = torch::tensor({0.25f});
  // Constant field gives a constant logit map.
  auto m = synthesize_masks(omega, beta, feature);
  CHECK(torch::allclose(m, torch::full_like(m, 2.0 * 0.5 + 0.25)));
  // omega = beta = 0 gives zero logits.
  auto z = synthesize_masks(torch::zeros({2, 4}), torch::zeros({2}), torch::randn({4, 5, 5}));
  CHECK(z.abs().max().item<double>() == 0.0);
  // No instances.
  auto e = synthesize_masks(torch::zeros({0, 4}), torch::zeros({0}), feature);
  CHECK(e.sizes() == torch::IntArrayRef({0, 12, 12}));
  CHECK_THROWS(synthesize_masks(torch::zeros({1, 3}), torch::zeros({1}), feature));
}

TEST_CASE("mask synthesis is linear in (omega, beta)") {
  torch::manual_seed(1);
  auto f = torch::randn({6, 4, 4}, torch::kFloat64);
  auto w1 = torch::randn({3, 6}, torch::kFloat64), w2 = torch::randn({3, 6}, torch::kFloat64);
  auto b1 = torch::randn({3}, torch::kFloat64), b2 = torch::randn({3}, torch::kFloat64);
  auto lhs = synthesize_masks(2.0 * w1 - w2, 2.0 * b1 - b2, f);
  auto rhs = 2.0 * synthesize_masks(w1, b1, f) - synthesize_masks(w2, b2, f);
  CHECK((lhs - rhs).abs().max().item<double>() < 1e-12);
}

TEST_CASE("suppression keeps cells strictly above the threshold") {
  auto c = torch::tensor({0.1, 0.5, 0.51, 0.9, 0.5000001});
  auto kept = suppress(c, 0.5);
  REQUIRE(kept.numel() == 3);
  CHECK(kept[0].item<int64_t>() == 2);
  CHECK(kept[1].item<int64_t>() == 3);
  CHECK(kept[2].item<int64_t>() == 4);
  CHECK(suppress(torch::zeros({4}), 0.0).numel() == 0);
  CHECK(suppress(torch::ones({4}), 0.99).numel() == 4);
  // Raising the threshold never adds cells.
  torch::manual_seed(2);
  auto r = torch::rand({200});
  int64_t prev = 201;
  for (double t = 0.0; t <= 1.0; t += 0.05) {
    const int64_t n = suppress(r, t).numel();
    CHECK(n <= prev);
    prev = n;
  }
}

TEST_CASE("matrix NMS agrees with the reference decay") {
  std::mt19937_64 rng(3);
  torch::manual_seed(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t n = 1 + trial % 7;
    auto masks = testing::random_rect_masks(rng, n, 12, 12);
    auto scores = torch::rand({n}, torch::kFloat64);
    auto got = matrix_nms(masks, scores, 2.0);
    std::vector<double> sv(scores.data_ptr<double>(), scores.data_ptr<double>() + n);
    auto ref = testing::reference_matrix_nms(as_vectors(masks), sv, 2.0);
    for (int64_t i = 0; i < n; ++i) CHECK(got[i].item<double>() == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("matrix NMS special cases") {
  auto one = torch::zeros({1, 4, 4}, torch::kUInt8);
  one[0].slice(0, 0, 2).fill_(1);
  CHECK(matrix_nms(one, torch::tensor({0.7}), 2.0)[0].item<double>() == doctest::Approx(0.7));

  // Disjoint masks keep their scores.
  auto disjoint = torch::zeros({3, 6, 6}, torch::kUInt8);
  disjoint[0].slice(0, 0, 2).fill_(1);
  disjoint[1].slice(0, 2, 4).fill_(1);
  disjoint[2].slice(0, 4, 6).fill_(1);
  auto s = torch::tensor({0.3, 0.9, 0.6});
  CHECK(torch::allclose(matrix_nms(disjoint, s, 2.0), s));

  // Identical masks: the top one stays, the other decays by exp(-sigma).
  auto same = torch::ones({2, 5, 5}, torch::kUInt8);
  auto d = matrix_nms(same, torch::tensor({0.4, 0.8}), 2.0);
  CHECK(d[1].item<double>() == doctest::Approx(0.8));
  CHECK(d[0].item<double>() == doctest::Approx(0.4 * std::exp(-2.0)));

  CHECK(matrix_nms(torch::zeros({0, 3, 3}, torch::kUInt8), torch::zeros({0}), 2.0).numel() == 0);
}

TEST_CASE("matrix NMS never raises a score") {
  std::mt19937_64 rng(4);
  torch::manual_seed(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto masks = testing::random_rect_masks(rng, 8, 10, 10);
    auto scores = torch::rand({8}, torch::kFloat64);
    CHECK((matrix_nms(masks, scores, 2.0) <= scores + 1e-15).all().item<bool>());
  }
}

TEST_CASE("head shapes and prior confidence") {
  torch::manual_seed(5);
  DcinHead head(16);
  auto emb = torch::randn({2, 2128, 16});
  auto loc = head->predict_locations(emb);
  CHECK(loc.logits.sizes() == torch::IntArrayRef({2, 2128}));
  CHECK(loc.kernel_params.sizes() == torch::IntArrayRef({2, 2128, 16}));
  auto [omega, beta] = head->affine_params(loc.kernel_params);
  CHECK(omega.sizes() == torch::IntArrayRef({2, 2128, 16}));
  CHECK(beta.sizes() == torch::IntArrayRef({2, 2128, 1}));
  // With the location weights zeroed the confidence is the prior.
  {
    torch::NoGradGuard ng;
    head->location_fc->weight.zero_();
  }
  auto prior = head->predict_locations(emb).confidence;
  CHECK(torch::allclose(prior, torch::full_like(prior, 0.01), 0.0, 1e-6));
  {
    torch::NoGradGuard ng;
    head->location_fc->bias.zero_();
  }
  auto half = head->predict_locations(emb).confidence;
  CHECK(torch::allclose(half, torch::full_like(half, 0.5)));
}

TEST_CASE("inference with nothing above threshold is empty") {
  torch::manual_seed(6);
  DcinHead head(8);
  HeadOptions opts;
  auto set = head->infer(torch::full({12}, 0.2), torch::randn({12, 8}), torch::randn({8, 5, 6}), opts);
  CHECK(set.size() == 0);
  CHECK(set.masks.sizes() == torch::IntArrayRef({0, 20, 24}));
}

TEST_CASE("inference returns sorted, capped instances at 4x resolution") {
  torch::manual_seed(7);
  DcinHead head(8);
  {
    torch::NoGradGuard ng;
    // beta fixed at +5 so every mask is non-empty.
    head->beta_fc->weight.zero_();
    head->beta_fc->bias.fill_(5.0);
  }
  auto conf = torch::rand({30}) * 0.5 + 0.5;
  HeadOptions opts;
  opts.max_instances = 4;
  opts.matrix_nms = false;
  auto set = head->infer(conf, torch::randn({30, 8}), torch::randn({8, 4, 4}), opts);
  REQUIRE(set.size() == 4);
  CHECK(set.masks.sizes() == torch::IntArrayRef({4, 16, 16}));
  for (int64_t i = 0; i + 1 < 4; ++i) CHECK(set.scores[i].item<double>() >= set.scores[i + 1].item<double>());
  CHECK(set.scores[0].item<double>() == doctest::Approx(conf.max().item<double>()));
  // With NMS on, identical full masks decay all but the best.
  opts.matrix_nms = true;
  opts.max_instances = 100;
  auto nms = head->infer(conf, torch::randn({30, 8}) * 0.0, torch::randn({8, 4, 4}), opts);
  CHECK(nms.size() >= 1);
  CHECK(nms.scores[0].item<double>() == doctest::Approx(conf.max().item<double>()));
  if (nms.size() > 1) CHECK(nms.scores[1].item<double>() < 0.5);
}
