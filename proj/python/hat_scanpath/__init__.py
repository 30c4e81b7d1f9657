"""Scanpath prediction: synthetic data, model, training and metrics."""

import json

from . import _hat
from ._hat import (
    HatError,
    Model,
    auc,
    focal_loss,
    gt_heatmap,
    info_gain,
    load_records,
    nss,
    nw_align,
    run_cli,
    sequence_score,
    termination_loss,
)

__all__ = [
    "HatError",
    "Model",
    "auc",
    "focal_loss",
    "gradcheck",
    "gt_heatmap",
    "info_gain",
    "load_records",
    "make_model",
    "nss",
    "nw_align",
    "run_cli",
    "sequence_score",
    "synth",
    "termination_loss",
]


def synth(out_dir, **params):
    """Writes a synthetic dataset and returns the manifest path."""
    return _hat.synth(str(out_dir), json.dumps(params))


def make_model(**config):
    return Model(json.dumps(config))


def gradcheck(bits=32, seed=0):
    return json.loads(_hat.gradcheck_suite(bits, seed))
