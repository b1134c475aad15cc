"""Experiment configuration: YAML files validated against a JSON schema."""

from __future__ import annotations

import copy
from pathlib import Path

import jsonschema
import yaml

_NUM = {"type": "number"}

EXPERIMENT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "styledistill experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["prompt", "denoiser"],
    "properties": {
        "mode": {"enum": ["canvas2d", "voxel3d"]},
        "prompt": {"type": "string", "minLength": 1},
        "denoiser": {"type": "string", "minLength": 1},
        "loss": {"enum": ["sds", "ssd", "snf-ssd", "vsd-ssd"]},
        "baseline": {"enum": ["none", "style-in-prompt", "neural-style-loss", "textual-inversion"]},
        "schedule": {
            "type": "object", "additionalProperties": False,
            "properties": {"kind": {"enum": ["constant", "sqrt", "quad"]},
                           "lambda_max": {"type": "number", "minimum": 0, "maximum": 1}},
        },
        "beta": {"type": ["number", "null"], "minimum": 0},
        "iterations": {"type": ["integer", "null"], "minimum": 1},
        "lr": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "t_range": {"type": "array", "items": {**_NUM, "minimum": 0, "maximum": 1},
                    "minItems": 2, "maxItems": 2},
        "t_threshold_frac": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "negative_prompt": {"type": "string"},
        "render_every": {"type": "integer", "minimum": 0},
        "eval_views": {"type": "integer", "minimum": 1},
        "style": {
            "type": ["object", "null"], "additionalProperties": False,
            "required": ["image"],
            "properties": {
                "image": {"type": "string", "minLength": 1},
                "caption": {"type": "string"},
                "caption_provider": {"enum": ["manual", "external"]},
                "captioner": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"endpoint": {"type": "string"}, "timeout": _NUM,
                                   "retries": {"type": "integer", "minimum": 0}},
                },
                "origin": {"enum": ["generated", "inverted"]},
                "description": {"type": "string"},
                "weight": {"type": "number", "minimum": 0},
                "ti_steps": {"type": "integer", "minimum": 0},
                "swap_layers": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            },
        },
        "feature_extractor": {"type": ["string", "null"]},
    },
}

DEFAULTS = {
    "mode": "canvas2d",
    "loss": "snf-ssd",
    "baseline": "none",
    "schedule": {"kind": "sqrt", "lambda_max": 0.6},
    "beta": None,
    "iterations": None,
    "lr": None,
    "seed": 0,
    "t_range": [0.02, 0.98],
    "t_threshold_frac": 0.2,
    "negative_prompt": "unrealistic, blurry, low quality",
    "render_every": 0,
    "eval_views": 4,
    "style": None,
    "feature_extractor": None,
}

STYLE_DEFAULTS = {"caption": "", "caption_provider": "manual", "origin": "generated",
                  "description": "", "weight": 1e-3, "ti_steps": 200}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists schema diagnostics."""

    def __init__(self, message: str, errors=()):
        self.errors = list(errors)
        detail = "".join(f"\n  - {e}" for e in self.errors)
        super().__init__(message + detail)


def validate(cfg: dict) -> dict:
    """Check ``cfg`` against the schema and return it with defaults filled in."""
    validator = jsonschema.Draft202012Validator(EXPERIMENT_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("configuration does not match the schema", msgs)
    out = copy.deepcopy(DEFAULTS)
    for k, v in cfg.items():
        if k == "schedule":
            out["schedule"] = {**DEFAULTS["schedule"], **v}
        elif k == "style" and v is not None:
            out["style"] = {**STYLE_DEFAULTS, **v}
        else:
            out[k] = copy.deepcopy(v)
    lo, hi = out["t_range"]
    if not lo < hi:
        raise ConfigError("configuration is inconsistent", [f"t_range: {lo} must be < {hi}"])
    if out["baseline"] != "none" and out["style"] is None:
        raise ConfigError("configuration is inconsistent",
                          [f"baseline {out['baseline']!r} needs a style section"])
    return out


def load_config(path) -> dict:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}", [str(exc)]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return validate(raw)


def dump_config(cfg: dict, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(cfg, sort_keys=True))
    return path
