"""Run configuration: defaults, file loading, overrides, validation.

Each subcommand has a nested default tree. A run config is the defaults,
deep-merged with an optional JSON config file and then with ``--set``
overrides. Unknown keys are rejected so typos fail loudly instead of being
silently ignored.
"""

from __future__ import annotations

import copy
import json

from .errors import ConfigError, IoError

MODEL_DEFAULTS = {
    "seed": 0,
    "n_joints": 12,
    "n_shape": 4,
    "n_vertices": 80,
    "n_parts": 4,
    "representation": "angle_axis",
}

CAMERA_DEFAULTS = {"size": 256, "focal": 300.0}

WEIGHT_DEFAULTS = {"KA": 1.0, "BA": 0.001, "prior": 0.01, "shape": 1.0,
                   "depth": 1.0}

DEFAULTS = {
    "synth": {
        "seed": 0,
        "out_dir": None,            # required
        "n_poses": 200,
        "n_frames": 4,
        "model": MODEL_DEFAULTS,
        "camera": CAMERA_DEFAULTS,
        "corpus": {"latent_dim": 4, "angle_scale": 0.5, "noise": 0.02},
        "evidence": {"depth": 2.5, "shape_scale": 0.0, "tilt": 0.1,
                     "noise_px": 0.0, "mask_radius": 2, "recoverable": True},
    },
    "train-prior": {
        "seed": 0,
        "kind": "flow",             # flow | gmm
        "corpus": None,             # required path
        "out": None,                # required path
        "flow": {"architecture": "low-capacity", "steps": 2000,
                 "batch_size": 64, "learning_rate": 1e-4, "hidden": 128,
                 "holdout_fraction": 0.1, "decay_rate": 0.99,
                 "decay_every": 10000},
        "gmm": {"n_modes": 8, "max_iter": 200, "tol": 1e-8},
    },
    "fit": {
        "seed": 0,
        "model": None,              # required path
        "camera": CAMERA_DEFAULTS,
        "keypoints": None,          # required path or list of paths
        "masks": None,              # optional path or list of paths
        "prior": "nf-latent",       # nf-latent | nf-ambient | gmm | none
        "flow": None,               # checkpoint path
        "gmm": None,                # checkpoint path
        "weights": WEIGHT_DEFAULTS,
        "smooth_weight": None,
        "mask_stride": 2,
        "max_iter": 400,
        "ground_truth": None,       # optional path, adds metrics
        "out": None,                # required path
    },
    "eval": {
        "seed": 0,
        "model": None,              # required path
        "result": None,             # required path
        "ground_truth": None,       # required path
        "out": None,                # required path (CSV)
    },
    "sample": {
        "seed": 0,
        "checkpoint": None,         # required path
        "n": 16,
        "out": None,                # required path (CSV)
    },
    "interp": {
        "seed": 0,
        "checkpoint": None,         # required path
        "corpus": None,             # required path (pose CSV)
        "start_row": 0,
        "end_row": 1,
        "steps": 8,
        "out": None,                # required path (CSV)
    },
}

REQUIRED = {
    "synth": ("out_dir",),
    "train-prior": ("corpus", "out"),
    "fit": ("model", "keypoints", "out"),
    "eval": ("model", "result", "ground_truth", "out"),
    "sample": ("checkpoint", "out"),
    "interp": ("checkpoint", "corpus", "out"),
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        full = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {full!r}")
        if isinstance(base[key], dict) and base[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"{full!r} must be a mapping")
            out[key] = _merge(base[key], value, full)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def _apply_set(cfg, assignment):
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, _, raw = assignment.partition("=")
    parts = key.strip().split(".")
    node = cfg
    for i, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key {'.'.join(parts[:i+1])!r}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node:
        raise ConfigError(f"unknown config key {key.strip()!r}")
    if isinstance(node[leaf], dict) and node[leaf]:
        raise ConfigError(f"{key.strip()!r} is a section, not a value")
    node[leaf] = _parse_value(raw)


def resolve_config(subcommand, config_path=None, overrides=None, sets=(),
                   seed=None):
    """Defaults <- config file <- overrides dict <- --set pairs <- --seed."""
    if subcommand not in DEFAULTS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    cfg = copy.deepcopy(DEFAULTS[subcommand])
    if config_path is not None:
        try:
            with open(config_path) as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise IoError(f"cannot read config file: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        # A config file may carry its own subcommand tag (as embedded in
        # artifacts); it must match.
        tagged = file_cfg.pop("subcommand", None)
        if tagged is not None and tagged != subcommand:
            raise ConfigError(f"config is for subcommand {tagged!r}")
        cfg = _merge(cfg, file_cfg)
    if overrides:
        if not isinstance(overrides, dict):
            raise ConfigError("config overrides must be a mapping")
        overrides = dict(overrides)
        tagged = overrides.pop("subcommand", None)
        if tagged is not None and tagged != subcommand:
            raise ConfigError(f"config is for subcommand {tagged!r}")
        cfg = _merge(cfg, overrides)
    for assignment in sets:
        _apply_set(cfg, assignment)
    if seed is not None:
        cfg["seed"] = int(seed)
    for key in REQUIRED[subcommand]:
        if cfg.get(key) in (None, ""):
            raise ConfigError(f"missing required config key {key!r}")
    return cfg


def embedded_config(subcommand, cfg):
    """Canonical JSON string stored inside artifacts for re-runs."""
    tagged = {"subcommand": subcommand}
    tagged.update(cfg)
    return json.dumps(tagged, sort_keys=True)
