"""Cooperative small continual learners.

Thin wrapper over the compiled `_coscl` module. Run results come back as the
parsed contents of summary.json.
"""

import json
import os
from pathlib import Path

from ._coscl import (  # noqa: F401
    Config,
    ConfigError,
    ContractError,
    DimensionError,
    Error,
    IoError,
    Model,
    ParseError,
    SchemaError,
    TaskError,
    acc_metrics,
    ec_loss,
    emit_plotdata,
    hdiv_probe,
    load_checkpoint,
    load_stream,
)
from . import _coscl

OUTPUT_ROOT_ENV = "COSCL_OUTPUT_ROOT"


def _config(config):
    if isinstance(config, Config):
        return config
    return Config.load(str(config))


def _rooted(cfg):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not Path(cfg.output_dir).is_absolute():
        cfg.output_dir = str(Path(root) / cfg.output_dir)
    return cfg


def run(config, workers=1, write_outputs=True):
    """Train every seed of `config` (a Config or a path) and return the summary."""
    cfg = _rooted(_config(config))
    return json.loads(_coscl._run(cfg, workers, write_outputs))


def sweep(config, axis, grid, workers=1):
    """One run per grid value along `axis`; infeasible points carry a note."""
    cfg = _rooted(_config(config))
    points = _coscl._sweep(cfg, axis, [float(v) for v in grid], workers)
    for p in points:
        if p["summary"] is not None:
            p["summary"] = json.loads(p["summary"])
    return points
