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
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <memory>

#include "camoseg/config.hpp"
#include "camoseg/data.hpp"
#include "camoseg/engine.hpp"
#include "camoseg/eval.hpp"
#include "camoseg/head.hpp"
#include "camoseg/losses.hpp"
#include "camoseg/lst.hpp"
#include "camoseg/mask_codec.hpp"

namespace py = pybind11;
using namespace camoseg;

namespace {

// numpy <-> torch copies; the module never shares buffers with Python.
template <typename T>
torch::Tensor from_numpy(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  auto t = torch::empty(shape, torch::CppTypeToScalarType<T>::value);
  if (a.size() > 0) std::memcpy(t.template data_ptr<T>(), a.data(), sizeof(T) * static_cast<size_t>(a.size()));
  return t;
}

template <typename T>
py::array_t<T> to_numpy(const torch::Tensor& t) {
  auto c = t.to(torch::CppTypeToScalarType<T>::value).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  py::array_t<T> out(shape);
  if (c.numel() > 0) std::memcpy(out.mutable_data(), c.template data_ptr<T>(), sizeof(T) * static_cast<size_t>(c.numel()));
  return out;
}

py::dict sample_dict(const Sample& s) {
  py::dict d;
  d["image"] = to_numpy<uint8_t>(s.image);
  d["masks"] = to_numpy<uint8_t>(s.masks);
  d["edges"] = to_numpy<uint8_t>(s.edges);
  d["image_id"] = s.image_id;
  d["file_name"] = s.file_name;
  return d;
}

py::dict metrics_dict(const ApMetrics& m) {
  py::dict d;
  d["AP"] = m.ap;
  d["AP50"] = m.ap50;
  d["AP75"] = m.ap75;
  d["per_threshold"] = std::vector<double>(m.per_threshold.begin(), m.per_threshold.end());
  d["num_images"] = m.num_images;
  d["num_gt"] = m.num_gt;
  d["num_predictions"] = m.num_predictions;
  return d;
}

RunConfig parse_config(const std::string& text) { return config_from_json(nlohmann::json::parse(text)); }

}  // namespace

PYBIND11_MODULE(_camoseg, m) {
  m.doc() = "camoseg core bindings";
  m.attr("__version__") = version_string();

  m.def("preset_json", [](const std::string& name) { return canonical_json(preset(name)); }, py::arg("name"));
  m.def("canonicalize_config", [](const std::string& text) { return canonical_json(parse_config(text)); },
        py::arg("config_json"), "Parse, fill defaults and re-serialize a JSON config.");
  m.def("validate_config", [](const std::string& text, bool check_paths) { validate(parse_config(text), check_paths); },
        py::arg("config_json"), py::arg("check_paths") = true);
  m.def("config_hash", [](const std::string& text) { return config_hash(parse_config(text)); },
        py::arg("config_json"));
  m.def("learning_rate_at",
        [](const std::string& text, int64_t iteration) { return learning_rate_at(parse_config(text).optim, iteration); },
        py::arg("config_json"), py::arg("iteration"));

  m.def("query_count", [](const std::vector<int64_t>& grids) { return query_count(grids); }, py::arg("grid_sizes"));

  m.def(
      "generate_synthetic",
      [](uint64_t seed, int64_t count, int64_t size) {
        py::list out;
        for (const auto& s : generate_synthetic(seed, count, size)) out.append(sample_dict(s));
        return out;
      },
      py::arg("seed"), py::arg("count"), py::arg("size") = 96);

  m.def("edge_map", [](py::array_t<uint8_t, py::array::c_style | py::array::forcecast> masks) {
    return to_numpy<uint8_t>(edge_map(from_numpy<uint8_t>(masks)));
  }, py::arg("masks"));
  m.def(
      "derive_edge_labels",
      [](py::array_t<uint8_t, py::array::c_style | py::array::forcecast> masks, const std::vector<int64_t>& strides) {
        py::list out;
        for (const auto& e : derive_edge_labels(from_numpy<uint8_t>(masks), strides)) out.append(to_numpy<uint8_t>(e));
        return out;
      },
      py::arg("masks"), py::arg("strides"));

  m.def(
      "mask_iou",
      [](py::array_t<uint8_t, py::array::c_style | py::array::forcecast> a,
         py::array_t<uint8_t, py::array::c_style | py::array::forcecast> b) {
        return mask_iou(from_numpy<uint8_t>(a), from_numpy<uint8_t>(b));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "evaluate",
      [](const py::list& images) {
        MaskApEvaluator ev;
        for (const auto& item : images) {
          auto tup = item.cast<py::tuple>();
          if (tup.size() != 3) throw std::invalid_argument("each image must be (gt_masks, pred_masks, scores)");
          ev.add_image(from_numpy<uint8_t>(tup[0].cast<py::array_t<uint8_t, py::array::c_style | py::array::forcecast>>()),
                       from_numpy<uint8_t>(tup[1].cast<py::array_t<uint8_t, py::array::c_style | py::array::forcecast>>()),
                       tup[2].cast<std::vector<double>>());
        }
        return metrics_dict(ev.summarize());
      },
      py::arg("images"), "images: list of (gt_masks (G,H,W), pred_masks (P,H,W), scores).");

  m.def(
      "matrix_nms",
      [](py::array_t<uint8_t, py::array::c_style | py::array::forcecast> masks,
         py::array_t<double, py::array::c_style | py::array::forcecast> scores, double sigma) {
        return to_numpy<double>(matrix_nms(from_numpy<uint8_t>(masks), from_numpy<double>(scores), sigma));
      },
      py::arg("masks"), py::arg("scores"), py::arg("sigma") = 2.0);

  m.def(
      "focal_loss",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> logits,
         py::array_t<double, py::array::c_style | py::array::forcecast> targets, double alpha, double gamma) {
        return focal_loss(from_numpy<double>(logits), from_numpy<double>(targets), alpha, gamma).item<double>();
      },
      py::arg("logits"), py::arg("targets"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);
  m.def(
      "dice_loss",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> probs,
         py::array_t<double, py::array::c_style | py::array::forcecast> target, double smooth) {
        return dice_loss(from_numpy<double>(probs), from_numpy<double>(target), smooth).item<double>();
      },
      py::arg("probs"), py::arg("target"), py::arg("smooth") = 1.0);
  m.def(
      "total_loss",
      [](double edge, double location, double mask, double l_edge, double l_loc, double l_mask) {
        LossComponents c{torch::tensor(edge, torch::kFloat64), torch::tensor(location, torch::kFloat64),
                         torch::tensor(mask, torch::kFloat64)};
        return total_loss(c, {l_edge, l_loc, l_mask}).item<double>();
      },
      py::arg("edge"), py::arg("location"), py::arg("mask"), py::arg("lambda_edge") = 1.0,
      py::arg("lambda_loc") = 1.0, py::arg("lambda_mask") = 3.0);

  m.def(
      "rle_encode",
      [](py::array_t<uint8_t, py::array::c_style | py::array::forcecast> mask) {
        auto rle = rle_encode(from_numpy<uint8_t>(mask));
        py::dict d;
        d["size"] = std::vector<int64_t>{rle.height, rle.width};
        d["counts"] = rle_to_string(rle);
        return d;
      },
      py::arg("mask"));
  m.def(
      "rle_decode",
      [](const std::string& counts, int64_t height, int64_t width) {
        return to_numpy<uint8_t>(rle_decode(rle_from_string(counts, height, width)));
      },
      py::arg("counts"), py::arg("height"), py::arg("width"));

  py::class_<Predictor, std::shared_ptr<Predictor>>(m, "Predictor")
      .def(py::init([](const std::string& config_json, const std::string& checkpoint) {
             return std::make_shared<Predictor>(parse_config(config_json), std::filesystem::path(checkpoint));
           }),
           py::arg("config_json"), py::arg("checkpoint"))
      .def(
          "predict",
          [](Predictor& p, py::array_t<uint8_t, py::array::c_style | py::array::forcecast> image) {
            InstanceSet set;
            {
              py::gil_scoped_release release;
              set = p.predict(from_numpy<uint8_t>(image));
            }
            return py::make_tuple(to_numpy<uint8_t>(set.masks), to_numpy<double>(set.scores));
          },
          py::arg("image"), "image (H, W, 3) uint8 -> (masks (N, H, W) uint8, scores (N,)).");

  m.def(
      "train",
      [](const std::string& config_json, std::optional<int64_t> max_iters) {
        auto config = parse_config(config_json);
        validate(config, true);
        TrainResult result;
        {
          py::gil_scoped_release release;
          Trainer trainer(config, training_source(config));
          result = trainer.run(max_iters);
        }
        py::dict d;
        d["iterations"] = result.iterations;
        d["last_loss"] = result.last_loss;
        d["aborted"] = result.aborted;
        d["message"] = result.message;
        d["checkpoint"] = result.last_checkpoint.string();
        return d;
      },
      py::arg("config_json"), py::arg("max_iters") = py::none());
}
