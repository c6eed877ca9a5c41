# Copyright 2026 The camoseg Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Camouflaged instance segmentation: model, training and evaluation."""

import json

from . import _camoseg
from ._camoseg import (
    __version__,
    derive_edge_labels,
    dice_loss,
    edge_map,
    evaluate,
    focal_loss,
    generate_synthetic,
    mask_iou,
    matrix_nms,
    query_count,
    rle_decode,
    rle_encode,
    total_loss,
)


def preset(name):
    """Preset configuration as a dict ("paper" or "desk")."""
    return json.loads(_camoseg.preset_json(name))


def canonicalize(config):
    """Fills defaults and returns the canonical dict form of `config`."""
    return json.loads(_camoseg.canonicalize_config(json.dumps(config)))


def validate(config, check_paths=True):
    _camoseg.validate_config(json.dumps(config), check_paths)


def config_hash(config):
    return _camoseg.config_hash(json.dumps(config))


def learning_rate_at(config, iteration):
    return _camoseg.learning_rate_at(json.dumps(config), iteration)


def train(config, max_iters=None):
    """Trains per `config`; returns iterations, last loss and checkpoint path."""
    return _camoseg.train(json.dumps(config), max_iters)


class Predictor:
    """Loads a checkpoint and predicts (masks, scores) for RGB uint8 images."""

    def __init__(self, config, checkpoint):
        self._impl = _camoseg.Predictor(json.dumps(config), str(checkpoint))

    def predict(self, image):
        return self._impl.predict(image)


__all__ = [
    "Predictor",
    "canonicalize",
    "config_hash",
    "derive_edge_labels",
    "dice_loss",
    "edge_map",
    "evaluate",
    "focal_loss",
    "generate_synthetic",
    "learning_rate_at",
    "mask_iou",
    "matrix_nms",
    "preset",
    "query_count",
    "rle_decode",
    "rle_encode",
    "total_loss",
    "train",
    "validate",
]
