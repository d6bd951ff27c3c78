"""Experiment configuration: YAML in, schema-validated nested dict out.

Unknown keys are hard errors (additionalProperties: false in the published
schema) so a typo fails the run instead of silently using a default.
Perturbation budgets accept fraction strings like "8/255".
"""

from __future__ import annotations

import copy
import json
from importlib import resources

import jsonschema
import yaml

from .errors import ConfigError

DEFAULTS = {
    "dataset": {
        "kind": "synthetic_shapes_16x16",
        "classes": 3,
        "per_class": 150,
        "radius": 0.5,
        "std": 0.05,
        "pixel_noise": 0.0,
        "images_path": None,
        "labels_path": None,
    },
    "model": {
        "latent_dim": 8,
        "codec_hidden": 64,
        "denoiser_hidden": 128,
        "denoiser_depth": 3,
        "cond_dim": 8,
        "time_dim": 16,
        "timesteps": 100,
        "schedule": "quadratic",
        "beta_start": 1e-4,
        "beta_end": 0.2,
        "classifier_hidden": 16,
        "classifier_depth": 1,
    },
    "train": {
        "codec_steps": 3000,
        "codec_lr": 2e-3,
        "diffusion_steps": 4000,
        "diffusion_lr": 1e-3,
        "batch_size": 128,
        "uncond_prob": 0.15,
        "cond_noise": 0.25,
        "ema_decay": 0.995,
        "classifier_steps": 800,
        "classifier_lr": 2e-3,
    },
    "attack": {
        "name": "advdm",
        "epsilon": "8/255",
        "alpha": "1/255",
        "n_steps": 40,
        "mode": "latent",
        "conditional": True,
    },
    "defense": {
        "kind": "none",
        "quality": 75,
        "tv_weight": 0.05,
        "tv_iters": 50,
        "factor": 2.0,
        "t_star": None,
    },
    "scenario": "text2img_inversion",
    "inversion": {
        "steps": 2500,
        "lr": 0.05,
        "batch_size": 4,
        "init_noise": 0.25,
    },
    "group": {
        "size": 40,
    },
    "generation": {
        "count": 300,
        "strength": 0.5,
    },
    "metrics": {
        "knn_k": 3,
    },
    "seeds": [0, 1, 2],
    "output_dir": "runs/latest",
}


def load_schema() -> dict:
    text = resources.files("advdm").joinpath("config_schema.json").read_text()
    return json.loads(text)


def parse_budget(value) -> float:
    """Accept a number or a fraction string such as '8/255'."""
    if isinstance(value, (int, float)):
        out = float(value)
    elif isinstance(value, str):
        parts = value.split("/")
        if len(parts) != 2:
            raise ConfigError(f"bad budget string {value!r}; want 'a/b'")
        try:
            out = float(parts[0]) / float(parts[1])
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad budget string {value!r}: {exc}") from exc
    else:
        raise ConfigError(f"budget must be a number or 'a/b' string, got {value!r}")
    if out < 0.0:
        raise ConfigError("budget must be >= 0")
    return out


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate_config(cfg: dict) -> dict:
    """Validate against the published schema; returns the config with
    defaults merged in and budget strings resolved to floats."""
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a mapping")
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from exc
    merged = _merge(DEFAULTS, cfg)
    merged["attack"]["epsilon"] = parse_budget(merged["attack"]["epsilon"])
    merged["attack"]["alpha"] = parse_budget(merged["attack"]["alpha"])
    if merged["dataset"]["kind"] == "idx_images":
        ds = merged["dataset"]
        if not ds["images_path"] or not ds["labels_path"]:
            raise ConfigError("idx_images needs images_path and labels_path")
    return merged


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: unparseable YAML ({exc})") from exc
    return validate_config(raw if raw is not None else {})


def default_config() -> dict:
    return validate_config({})
