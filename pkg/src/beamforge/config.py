"""Run configuration: a JSON document validated against a closed schema."""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path

import jsonschema

from .errors import ConfigError

DATA_ROOT_ENV = "BEAMFORGE_DATA_ROOT"

_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}
_OPT_STR = {"type": ["string", "null"]}


def _obj(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


SCHEMA = _obj({
    "dataset": _obj({
        "type": {"enum": ["anechoic", "reverb"]},
        "counts": _obj({"train": {"type": "integer", "minimum": 0},
                        "val": {"type": "integer", "minimum": 0},
                        "test": {"type": "integer", "minimum": 0}}),
        "seed": _INT,
        "length": {"type": "integer", "minimum": 1024},
        "moving": {"type": ["boolean", "null"]},
        "speech_corpus": _OPT_STR,
        "noise_corpus": _OPT_STR,
        "num_mics": _POS_INT,
        "max_order": {"type": ["integer", "null"], "minimum": 0},
        "wav_format": {"enum": ["float32", "pcm16"]},
    }),
    "stft": _obj({
        "frame_len": _POS_INT,
        "hop": _POS_INT,
        "window": {"enum": ["sqrt-hann"]},
        "drop_dc": {"type": "boolean"},
    }),
    "model": _obj({
        "kind": {"enum": ["unet_bf", "wnet_attention", "wnet_concat"]},
        "width_scale": {"type": "number", "exclusiveMinimum": 0},
        "seed": _INT,
    }),
    "train": _obj({
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "beta1": _NUM,
        "beta2": _NUM,
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "epochs": _POS_INT,
        "iterations_per_epoch": _POS_INT,
        "batch_size": _POS_INT,
        "crop_frames": _POS_INT,
        "example_len": _POS_INT,
        "val_scenes": _POS_INT,
        "val_every": {"type": "integer", "minimum": 0},
    }),
    "eval": _obj({
        "methods": {"type": "array", "items": {"type": "string"}},
        "snr_list": {"type": ["array", "null"], "items": _NUM},
        "split": {"enum": ["train", "val", "test"]},
    }),
})

DEFAULTS = {
    "dataset": {
        "type": "anechoic",
        "counts": {"train": 0, "val": 0, "test": 10},
        "seed": 0,
        "length": 64000,
        "moving": None,
        "speech_corpus": None,
        "noise_corpus": None,
        "num_mics": 6,
        "max_order": None,
        "wav_format": "float32",
    },
    "stft": {"frame_len": 1024, "hop": 256, "window": "sqrt-hann", "drop_dc": True},
    "model": {"kind": "wnet_concat", "width_scale": 1.0, "seed": 0},
    "train": {
        "lr": 0.002, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
        "epochs": 1, "iterations_per_epoch": 100, "batch_size": 4,
        "crop_frames": 256, "example_len": 80000, "val_scenes": 4, "val_every": 0,
    },
    "eval": {"methods": ["noisy", "ibm", "mvdr", "gev"], "snr_list": [0, 5, 10], "split": "test"},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the file at ``path``, then ``overrides``; validated at each layer."""
    doc: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        validate(doc)
    resolved = _merge(DEFAULTS, doc)
    if overrides:
        resolved = _merge(resolved, overrides)
    validate(resolved)
    _resolve_corpora(resolved["dataset"])
    return resolved


def _resolve_corpora(ds: dict) -> None:
    root = os.environ.get(DATA_ROOT_ENV)
    if not root:
        return
    for key, sub in (("speech_corpus", "speech"), ("noise_corpus", "noise")):
        if ds[key] is None and (Path(root) / sub).is_dir():
            ds[key] = str(Path(root) / sub)


def dump_config(doc: dict, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
