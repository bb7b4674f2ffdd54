"""Flat ``section.key: value`` configuration shared by every CLI subcommand.

The file is a YAML mapping whose keys are dotted names, for example::

    sampling.r: 0.15
    weights.reslt: 5.0
    metrics.iou_mode: range

Every key is optional.  Unknown keys and wrongly typed values are schema
errors that name the offending key.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import yaml

# key -> (default, type, description)
SCHEMA: dict[str, tuple[Any, type, str]] = {
    "run.jobs": (1, int, "worker threads for per-sample processing"),

    "synthetic.seed": (0, int, "generator seed"),
    "synthetic.n_samples": (8, int, "number of samples"),
    "synthetic.dims": (2, int, "2 or 3"),
    "synthetic.style": ("grid", str, "grid (road-like) or tree (vessel-like)"),
    "synthetic.size": (64, int, "pixels per axis"),
    "synthetic.cells": (4, int, "lattice cells per axis"),
    "synthetic.jitter": (0.15, float, "node offset as a fraction of a cell"),
    "synthetic.domain": ("target", str, "source or target"),

    "preprocess.patch_size": (64, int, "patch side in pixels"),
    "preprocess.stride": (64, int, "grid stride in pixels"),
    "preprocess.prune_angle": (160.0, float, "interior angle above which degree-2 nodes are removed"),
    "preprocess.prune": (True, bool, "remove redundant degree-2 nodes"),

    "projection.shape": ("32x32x32", str, "target volume HxWxD"),
    "projection.seed": (0, int, "rotation seed"),

    "sampling.sampler": ("regularized", str, "regularized or fixed_m"),
    "sampling.r": (0.15, float, "target active/background ratio"),
    "sampling.m": (20, int, "edge budget of the fixed-m sampler"),
    "sampling.seed": (0, int, "sampling seed"),
    "sampling.normalize": (False, bool, "average the relation loss instead of summing"),

    "weights.reg": (5.0, float, "L1 box regression weight"),
    "weights.giou": (2.0, float, "gIoU loss weight"),
    "weights.cls": (3.0, float, "classification weight"),
    "weights.reslt": (5.0, float, "relation loss weight"),
    "weights.da": (1.0, float, "domain-adversarial weight"),

    "metrics.node_box_half": (0.03125, float, "half-width of synthetic node boxes"),
    "metrics.edge_min_extent": (0.0625, float, "minimum edge box width"),
    "metrics.iou_mode": ("range", str, "range (0.50:0.05:0.95) or pair (0.5 and 0.95)"),
    "metrics.smd_points": (100, int, "points sampled per graph for SMD"),
    "metrics.smd_seed": (0, int, "SMD sampling seed"),
    "metrics.topo_seed_interval": (0.25, float, "TOPO seed spacing along ground-truth edges"),
    "metrics.topo_match_radius": (0.025, float, "TOPO point match radius"),
    "metrics.topo_hole_spacing": (0.05, float, "TOPO point spacing"),
    "metrics.topo_crawl_radius": (0.3, float, "TOPO subgraph radius"),

    "train.seed": (0, int, "model and shuffling seed"),
    "train.data_seed": (0, int, "synthetic data seed"),
    "train.n_source": (200, int, "projected source samples"),
    "train.n_target": (200, int, "target training samples"),
    "train.n_test": (100, int, "held-out target samples"),
    "train.pretrain_epochs": (2, int, "joint pretraining epochs (0 disables)"),
    "train.finetune_epochs": (3, int, "target finetuning epochs"),
    "train.batch_size": (8, int, "samples per optimizer step"),
    "train.lr": (0.01, float, "finetuning learning rate"),
    "train.pretrain_lr": (0.01, float, "pretraining learning rate"),
    "train.da": (True, bool, "domain adversaries during pretraining"),
    "train.r": (0.8, float, "relation sampling ratio used by the toy trainer"),
    "train.normalize_reslt": (True, bool, "average the toy relation loss instead of summing"),
    "train.alpha_max": (1.0, float, "maximum reversal coefficient"),
    "train.gamma": (10.0, float, "alpha schedule steepness"),
    "train.decode_threshold": (0.5, float, "node and relation decode threshold"),

    "ablate.seeds": ("0,1,2,3,4", str, "comma-separated seeds"),
    "ablate.grid": ("paper", str, "paper, r_sweep, or a comma list of grid entry names"),
}


class ConfigError(ValueError):
    """Schema violation; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


CHOICES = {
    "synthetic.style": ("grid", "tree"),
    "synthetic.domain": ("source", "target"),
    "synthetic.dims": (2, 3),
    "sampling.sampler": ("regularized", "fixed_m"),
    "metrics.iou_mode": ("range", "pair"),
}


def _coerce(key: str, value: Any) -> Any:
    default, typ, _ = SCHEMA[key]
    if typ is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(key, f"expected a boolean, got {value!r}")
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        try:
            return int(value)
        except ValueError:
            raise ConfigError(key, f"expected an integer, got {value!r}") from None
    if typ is float:
        if isinstance(value, bool):
            raise ConfigError(key, f"expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected a number, got {value!r}") from None
    if isinstance(value, (dict, list)):
        raise ConfigError(key, f"expected a string, got {value!r}")
    return str(value)


def _check(key: str, value: Any) -> None:
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(key, f"must be one of {list(CHOICES[key])}, got {value!r}")
    if key in ("sampling.r", "train.r") and not 0 < value <= 1:
        raise ConfigError(key, "must lie in (0, 1]")
    if key.startswith("weights.") and value < 0:
        raise ConfigError(key, "weights must be non-negative")
    if key in ("run.jobs", "train.batch_size", "metrics.smd_points", "preprocess.patch_size",
               "preprocess.stride", "synthetic.size", "synthetic.cells") and value < 1:
        raise ConfigError(key, "must be at least 1")
    if key in ("metrics.node_box_half", "metrics.edge_min_extent", "metrics.topo_seed_interval",
               "metrics.topo_match_radius", "metrics.topo_hole_spacing",
               "metrics.topo_crawl_radius") and value <= 0:
        raise ConfigError(key, "must be positive")


class Config:
    """Resolved configuration: defaults, then file values, then flag overrides."""

    def __init__(self, values: dict[str, Any] | None = None):
        self.values = {k: spec[0] for k, spec in SCHEMA.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value: Any) -> None:
        if key not in SCHEMA:
            raise ConfigError(key, "unknown configuration key")
        value = _coerce(key, value)
        _check(key, value)
        self.values[key] = value

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def section(self, name: str) -> dict[str, Any]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def to_dict(self) -> dict[str, Any]:
        return dict(sorted(self.values.items()))

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def parse_config_text(text: str) -> Config:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("<file>", "top level must be a mapping of dotted keys")
    return Config({str(k): v for k, v in raw.items()})


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    return parse_config_text(Path(path).read_text())


def describe_schema() -> str:
    lines = []
    for key, (default, typ, doc) in SCHEMA.items():
        lines.append(f"{key}: {default!r} ({typ.__name__}) {doc}")
    return "\n".join(lines)
