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

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the code under test except through the
// function objects passed in.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include <torch/torch.h>

namespace camoseg::testing {

// Max relative error between autograd and central differences of the
// scalar f at x (float64). Relative to max(|analytic|_inf, 1e-3) so that
// near-zero gradients do not blow the ratio up.
inline double gradcheck_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x,
                              double eps = 1e-6) {
  x = x.detach().to(torch::kFloat64).clone().requires_grad_(true);
  auto y = f(x);
  auto analytic = torch::autograd::grad({y}, {x}, {}, false, false, true)[0];
  if (!analytic.defined()) analytic = torch::zeros_like(x);
  analytic = analytic.detach();
  auto flat = x.detach().clone().reshape(-1);
  auto numeric = torch::zeros_like(flat);
  torch::NoGradGuard ng;
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + eps;
    const double fp = f(flat.view(x.sizes())).item<double>();
    flat[i] = orig - eps;
    const double fm = f(flat.view(x.sizes())).item<double>();
    flat[i] = orig;
    numeric[i] = (fp - fm) / (2 * eps);
  }
  numeric = numeric.view(x.sizes());
  const double scale = std::max(analytic.abs().max().item<double>(), 1e-3);
  return (analytic - numeric).abs().max().item<double>() / scale;
}

// Direct transcription of the gaussian Matrix NMS decay: for each mask j,
//   decay_j = min_{i ranked above j} exp(-sigma * iou_ij^2) / exp(-sigma * c_i^2)
// where c_i = max_{k ranked above i} iou_ki; returns decayed scores in input
// order. Ranking is by descending score, ties by input index.
inline std::vector<double> reference_matrix_nms(const std::vector<std::vector<uint8_t>>& masks,
                                                const std::vector<double>& scores, double sigma) {
  const size_t n = scores.size();
  std::vector<size_t> rank(n);
  for (size_t i = 0; i < n; ++i) rank[i] = i;
  std::stable_sort(rank.begin(), rank.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  auto iou = [&](size_t a, size_t b) {
    double inter = 0, uni = 0;
    for (size_t p = 0; p < masks[a].size(); ++p) {
      inter += (masks[a][p] && masks[b][p]) ? 1 : 0;
      uni += (masks[a][p] || masks[b][p]) ? 1 : 0;
    }
    return uni > 0 ? inter / uni : 0.0;
  };
  std::vector<double> out(n);
  for (size_t jj = 0; jj < n; ++jj) {
    double decay = 1.0;
    for (size_t ii = 0; ii < jj; ++ii) {
      double comp = 0.0;
      for (size_t kk = 0; kk < ii; ++kk) comp = std::max(comp, iou(rank[kk], rank[ii]));
      const double v = iou(rank[ii], rank[jj]);
      decay = std::min(decay, std::exp(-sigma * v * v) / std::exp(-sigma * comp * comp));
    }
    out[rank[jj]] = scores[rank[jj]] * decay;
  }
  return out;
}

// Bilinear sample of a (H, W) map at normalized (x, y) in [0, 1] with
// pixel-center convention and zero padding outside the map.
inline double reference_bilinear(const torch::Tensor& map, double x, double y) {
  const int64_t h = map.size(0), w = map.size(1);
  const double px = x * w - 0.5, py = y * h - 0.5;
  const auto x0 = static_cast<int64_t>(std::floor(px)), y0 = static_cast<int64_t>(std::floor(py));
  const double fx = px - x0, fy = py - y0;
  auto at = [&](int64_t r, int64_t c) {
    if (r < 0 || r >= h || c < 0 || c >= w) return 0.0;
    return map[r][c].item<double>();
  };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) + fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

struct RefImage {
  // ious[p][g]
  std::vector<std::vector<double>> ious;
  std::vector<double> scores;
  int num_gt = 0;
};

// AP at one IoU threshold written from the definition: per image, walk
// predictions by descending score (ties by index, at most 100) and match
// each to the unmatched GT of highest IoU >= t (later GT wins ties);
// collect all detections, sort by score (ties keep image then rank
// order), build the PR curve, take the running max of precision from the
// right, and average it at recall levels 0, 0.01, ..., 1 (0 where the
// curve never reaches the level).
inline double reference_ap(const std::vector<RefImage>& images, double t) {
  struct Det {
    double score;
    bool tp;
  };
  std::vector<Det> dets;
  int total_gt = 0;
  for (const auto& img : images) {
    total_gt += img.num_gt;
    std::vector<size_t> order(img.scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return img.scores[a] > img.scores[b]; });
    if (order.size() > 100) order.resize(100);
    std::vector<bool> used(img.num_gt, false);
    for (size_t p : order) {
      int best = -1;
      double best_iou = std::min(t, 1.0 - 1e-10);
      for (int g = 0; g < img.num_gt; ++g) {
        if (used[g]) continue;
        if (img.ious[p][g] >= best_iou) {
          best_iou = img.ious[p][g];
          best = g;
        }
      }
      if (best >= 0) used[best] = true;
      dets.push_back({img.scores[p], best >= 0});
    }
  }
  if (total_gt == 0) return -1.0;
  std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.score > b.score; });
  std::vector<double> prec, rec;
  double tp = 0, fp = 0;
  for (const auto& d : dets) {
    (d.tp ? tp : fp) += 1;
    rec.push_back(tp / total_gt);
    prec.push_back(tp / (tp + fp));
  }
  for (int i = static_cast<int>(prec.size()) - 2; i >= 0; --i) prec[i] = std::max(prec[i], prec[i + 1]);
  double sum = 0;
  for (int k = 0; k <= 100; ++k) {
    // Recall levels exactly as COCO builds them (k * 0.01, last one 1.0).
    const double r = k == 100 ? 1.0 : k * 0.01;
    for (size_t i = 0; i < rec.size(); ++i) {
      if (rec[i] >= r) {
        sum += prec[i];
        break;
      }
    }
  }
  return sum / 101.0;
}

// Per-pixel dot-product mask synthesis: out[n][y][x] = sum_c w[n][c] F[c][y][x] + b[n].
inline torch::Tensor reference_synthesize(const torch::Tensor& w, const torch::Tensor& b, const torch::Tensor& f) {
  const int64_t n = w.size(0), d = f.size(0), h = f.size(1), wd = f.size(2);
  auto out = torch::zeros({n, h, wd}, torch::kFloat64);
  auto wa = w.to(torch::kFloat64).contiguous();
  auto ba = b.to(torch::kFloat64).reshape(-1).contiguous();
  auto fa = f.to(torch::kFloat64).contiguous();
  auto W = wa.accessor<double, 2>();
  auto B = ba.accessor<double, 1>();
  auto Fm = fa.accessor<double, 3>();
  auto O = out.accessor<double, 3>();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < wd; ++x) {
        double s = B[i];
        for (int64_t c = 0; c < d; ++c) s += W[i][c] * Fm[c][y][x];
        O[i][y][x] = s;
      }
    }
  }
  return out;
}

// Random binary masks (n, h, w) built from rectangles so that overlaps vary.
inline torch::Tensor random_rect_masks(std::mt19937_64& rng, int64_t n, int64_t h, int64_t w) {
  auto m = torch::zeros({n, h, w}, torch::kUInt8);
  for (int64_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<int64_t> ry(0, h - 1), rx(0, w - 1);
    int64_t y0 = ry(rng), y1 = ry(rng), x0 = rx(rng), x1 = rx(rng);
    if (y0 > y1) std::swap(y0, y1);
    if (x0 > x1) std::swap(x0, x1);
    m[i].slice(0, y0, y1 + 1).slice(1, x0, x1 + 1).fill_(1);
  }
  return m;
}

}  // namespace camoseg::testing
