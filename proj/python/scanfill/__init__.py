"""Point cloud completion: dataset generation, training, completion and rendering.

Configuration is a flat dict of dotted keys, the same keys the command-line
tool accepts (``{"train.epochs": 5, "data.root": "data"}``). Point clouds are
``(N, 3)`` float64 arrays.
"""

import json

from . import _core
from ._core import (
    Camera,
    ConfigError,
    InvalidInput,
    IoError,
    NumericError,
    ShapeError,
    backproject,
    compare_dare,
    curvature_encoding,
    estimate_normals,
    evaluate,
    gradient_suite_names,
    knn,
    look_at,
    position_encoding,
    read_camera,
    read_pfm,
    read_ply,
    render_depth,
    run_gradient_suite,
    ucd,
    viewpoint_eye,
    write_camera,
    write_ply,
)

__all__ = [
    "Camera", "ConfigError", "InvalidInput", "IoError", "NumericError", "ShapeError",
    "backproject", "compare_dare", "complete", "config_defaults", "curvature_encoding",
    "estimate_normals", "evaluate", "evaluate_split", "gen_data", "gradient_suite_names",
    "knn", "look_at", "position_encoding", "read_camera", "read_pfm", "read_ply",
    "render_depth", "run_gradient_suite", "train", "ucd", "viewpoint_eye",
    "write_camera", "write_ply",
]


def _dump(config):
    return json.dumps(dict(config or {}))


def config_defaults():
    """Every configuration key with its default value."""
    return json.loads(_core.config_defaults())


def gen_data(config=None):
    """Writes the synthetic dataset under ``data.root``; returns a summary."""
    return _core.gen_data(_dump(config))


def train(category, config=None, on_epoch=None):
    """Trains one category. Returns ``(final checkpoint path, epoch records)``."""
    return _core.train(_dump(config), category, on_epoch)


def complete(checkpoint, partial, config=None, viewpoint=None):
    """Completes one ``(n_in, 3)`` partial cloud with a trained generator."""
    return _core.complete(_dump(config), checkpoint, partial, viewpoint)


def evaluate_split(checkpoint, category, split="test", config=None):
    """Per-sample metrics of a split against its ground truth."""
    return _core.evaluate_split(_dump(config), checkpoint, category, split)
