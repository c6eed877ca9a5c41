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

#include "camoseg/cff.hpp"
#include "oracles.hpp"

using namespace camoseg;

namespace {

std::vector<torch::Tensor> fusion_inputs(int64_t b, int64_t dim, int64_t h, int64_t w, int n = 4,
                                         torch::Dtype dtype = torch::kFloat32) {
  std::vector<torch::Tensor> in;
  for (int i = 0; i < n; ++i) in.push_back(torch::randn({b, dim, h >> i, w >> i}, dtype));
  return in;
}

}  // namespace

TEST_CASE("REA attention lies in (0, 1) and refined keeps the fused shape") {
  torch::manual_seed(0);
  ReverseEdgeAttention rea(16);
  auto guide = torch::randn({2, 32, 8, 10});
  auto fused = torch::randn({2, 16, 8, 10});
  auto out = rea->forward(guide, fused);
  CHECK(out.refined.sizes() == fused.sizes());
  CHECK(out.edge_logits.sizes() == torch::IntArrayRef({2, 1, 8, 10}));
  CHECK(out.attention.min().item<double>() > 0.0);
  CHECK(out.attention.max().item<double>() < 1.0);
  CHECK_THROWS(rea->forward(torch::randn({2, 32, 4, 10}), fused));
}

TEST_CASE("REA with a flat attention map halves the fused feature") {
  ReverseEdgeAttention rea(4);
  {
    torch::NoGradGuard ng;
    rea->attention_conv->weight.zero_();
    rea->attention_conv->bias.zero_();
  }
  auto fused = torch::randn({1, 4, 6, 6});
  auto out = rea->forward(torch::randn({1, 8, 6, 6}), fused);
  CHECK(torch::allclose(out.attention, torch::full_like(out.attention, 0.5)));
  CHECK(torch::allclose(out.refined, 0.5 * fused));
}

TEST_CASE("REA gradients match finite differences") {
  torch::manual_seed(1);
  ReverseEdgeAttention rea(3);
  rea->to(torch::kFloat64);
  auto guide = torch::randn({1, 4, 5, 5}, torch::kFloat64);
  auto fused = torch::randn({1, 3, 5, 5}, torch::kFloat64);
  auto wrt_fused = [&](const torch::Tensor& x) {
    auto o = rea->forward(guide, x);
    return o.refined.square().sum() + o.edge_logits.sum();
  };
  auto wrt_guide = [&](const torch::Tensor& x) { return rea->forward(x, fused).refined.sum(); };
  CHECK(testing::gradcheck_error(wrt_fused, fused) < 1e-5);
  // The channel max is piecewise; random inputs keep clear of ties.
  CHECK(testing::gradcheck_error(wrt_guide, guide) < 1e-5);
}

TEST_CASE("fusion output is at stride 4 with edge maps at strides 16, 8, 4") {
  torch::manual_seed(2);
  CoarseToFineFusion cff(32, 4, 3, 8);
  auto out = cff->forward(fusion_inputs(2, 32, 64, 96));
  CHECK(out.mask_feature.sizes() == torch::IntArrayRef({2, 32, 64, 96}));
  REQUIRE(out.edge_logits.size() == 3);
  CHECK(out.edge_logits[0].sizes() == torch::IntArrayRef({2, 1, 16, 24}));
  CHECK(out.edge_logits[1].sizes() == torch::IntArrayRef({2, 1, 32, 48}));
  CHECK(out.edge_logits[2].sizes() == torch::IntArrayRef({2, 1, 64, 96}));
  CHECK(torch::isfinite(out.mask_feature).all().item<bool>());
}

TEST_CASE("edge supervision count follows edge_levels") {
  torch::manual_seed(3);
  for (int64_t j = 0; j <= 3; ++j) {
    CoarseToFineFusion cff(16, 4, j, 4);
    auto out = cff->forward(fusion_inputs(1, 16, 32, 32));
    CHECK(static_cast<int64_t>(out.edge_logits.size()) == j);
    if (j > 0) CHECK(out.edge_logits.back().size(2) == 32);
  }
  CHECK_THROWS(CoarseToFineFusion(16, 4, 4, 4));
}

TEST_CASE("fusion channel budget: hidden D/2, output D") {
  CoarseToFineFusion cff(256);
  CHECK(cff->hidden_dim() == 128);
  for (const auto& m : *cff->stage_convs) {
    auto conv = m->as<torch::nn::Sequential>()->ptr(0)->as<torch::nn::Conv2d>();
    CHECK(conv->weight.size(0) == 128);
  }
  for (const auto& m : *cff->lateral_convs) {
    auto conv = m->as<torch::nn::Sequential>()->ptr(0)->as<torch::nn::Conv2d>();
    CHECK(conv->weight.size(0) == 128);
    CHECK(conv->weight.size(1) == 256);
  }
  auto out_conv = cff->output->ptr(0)->as<torch::nn::Conv2d>();
  CHECK(out_conv->weight.size(0) == 256);
  CHECK(out_conv->weight.size(1) == 128);
}

TEST_CASE("fusion rejects a broken stride chain or wrong channel count") {
  CoarseToFineFusion cff(16, 4, 3, 4);
  auto in = fusion_inputs(1, 16, 32, 32);
  in[2] = torch::randn({1, 16, 3, 4});
  CHECK_THROWS(cff->forward(in));
  auto in2 = fusion_inputs(1, 16, 32, 32);
  in2[0] = torch::randn({1, 8, 32, 32});
  CHECK_THROWS(cff->forward(in2));
  CHECK_THROWS(cff->forward(fusion_inputs(1, 16, 32, 32, 3)));
}

TEST_CASE("fusion gradient w.r.t. the coarsest input matches finite differences") {
  torch::manual_seed(4);
  CoarseToFineFusion cff(4, 3, 2, 2);
  cff->to(torch::kFloat64);
  auto in = fusion_inputs(1, 4, 16, 16, 3, torch::kFloat64);
  auto f = [&](const torch::Tensor& x) {
    auto v = in;
    v[2] = x;
    auto o = cff->forward(v);
    return o.mask_feature.square().sum() + o.edge_logits[0].sum() + o.edge_logits[1].sum();
  };
  CHECK(testing::gradcheck_error(f, in[2]) < 1e-4);
}
