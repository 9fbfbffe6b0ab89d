"""Python access to the OSCAR simulator core."""

import json

from ._core import (
    ConfigError,
    OscarError,
    alpha_bar,
    canonical_config,
    cfg_epsilon,
    classifier_guided_epsilon,
    fedavg_upload_millions,
    oscar_upload_params,
    reduction_ratio,
    render_image,
    run_stage,
)
from . import _core


def manifest(out_dir):
    """Artifacts of a run directory as a list of {path, bytes, sha256}."""
    return json.loads(_core.manifest(str(out_dir)))["artifacts"]


def run(config, out_dir, stage="all", seed=None, log=None):
    run_stage(str(config), stage, str(out_dir), seed, log)
    return manifest(out_dir)


__all__ = [
    "ConfigError",
    "OscarError",
    "alpha_bar",
    "canonical_config",
    "cfg_epsilon",
    "classifier_guided_epsilon",
    "fedavg_upload_millions",
    "manifest",
    "oscar_upload_params",
    "reduction_ratio",
    "render_image",
    "run",
    "run_stage",
]
