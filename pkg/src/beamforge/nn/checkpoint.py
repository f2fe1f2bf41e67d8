"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"BFCK"  u32 version  u32 meta_len  meta (UTF-8 JSON)
    u32 record_count
    record*: u16 name_len  name  u8 dtype_code  u8 ndim  u32 dims[ndim]  float32 payload

Record names carry a section prefix: ``param/``, ``buffer/``, ``adam_m/`` or
``adam_v/``. The JSON metadata holds the model kind, M, width_scale, STFT
settings, the step counter and any caller-supplied extras.
"""
from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from ..dsp import StftConfig
from ..errors import DataError
from .model import Model, ModelKind, ParamStore, model_blocks

MAGIC = b"BFCK"
VERSION = 1
DTYPE_F32 = 0
SECTIONS = ("param", "buffer", "adam_m", "adam_v")


def _section(store: ParamStore, name: str) -> dict[str, np.ndarray]:
    return {"param": store.params, "buffer": store.buffers,
            "adam_m": store.adam_m, "adam_v": store.adam_v}[name]


def checkpoint_bytes(model: Model, extra: dict | None = None) -> bytes:
    meta = {
        "kind": model.kind.value,
        "num_mics": model.num_mics,
        "width_scale": model.width_scale,
        "stft": {"frame_len": model.stft_config.frame_len, "hop": model.stft_config.hop,
                 "window": model.stft_config.window, "drop_dc": model.stft_config.drop_dc},
        "step": model.store.step,
        "num_params": model.num_params(),
        "extra": extra or {},
    }
    meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(meta_b)))
    buf.write(meta_b)
    records = [(f"{sec}/{name}", arr) for sec in SECTIONS
               for name, arr in sorted(_section(model.store, sec).items())]
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(path: str | os.PathLike, model: Model, extra: dict | None = None) -> None:
    """Write atomically: a crash mid-write never leaves a truncated checkpoint."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(checkpoint_bytes(model, extra))
    os.replace(tmp, path)


def read_metadata(path: str | os.PathLike) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh)


def _read_header(fh) -> dict:
    if fh.read(4) != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    head = fh.read(8)
    if len(head) != 8:
        raise DataError("truncated checkpoint header")
    version, meta_len = struct.unpack("<II", head)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    try:
        return json.loads(fh.read(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError("corrupt checkpoint metadata") from exc


def load_checkpoint(path: str | os.PathLike, dtype=np.float32) -> tuple[Model, dict]:
    """Rebuild a model from ``path``; returns ``(model, metadata)``."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataError(f"cannot open checkpoint {path}: {exc}") from exc
    with fh:
        meta = _read_header(fh)
        try:
            arrays = _read_records(fh)
        except struct.error as exc:
            raise DataError("truncated checkpoint") from exc
    kind = ModelKind(meta["kind"])
    blocks = model_blocks(kind, int(meta["num_mics"]), float(meta["width_scale"]))
    store = ParamStore(step=int(meta["step"]))
    for key, arr in arrays.items():
        sec, name = key.split("/", 1)
        if sec not in SECTIONS:
            raise DataError(f"unknown checkpoint section {sec!r}")
        _section(store, sec)[name] = arr.astype(dtype)
    expected = {}
    for prefix, spec in blocks.items():
        expected.update(spec.param_shapes(prefix))
    got = {n: a.shape for n, a in store.params.items()}
    if got != expected:
        raise DataError("checkpoint parameters do not match the declared architecture")
    for name, arr in store.params.items():
        store.adam_m.setdefault(name, np.zeros_like(arr))
        store.adam_v.setdefault(name, np.zeros_like(arr))
    stft_cfg = StftConfig(**meta["stft"])
    model = Model(kind, int(meta["num_mics"]), float(meta["width_scale"]), blocks, store, stft_cfg)
    return model, meta


def _read_records(fh) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", fh.read(4))
    out = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", fh.read(2))
        name = fh.read(n).decode("utf-8")
        code, ndim = struct.unpack("<BB", fh.read(2))
        if code != DTYPE_F32:
            raise DataError(f"unsupported dtype code {code} for {name}")
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        payload = fh.read(4 * size)
        if len(payload) != 4 * size:
            raise DataError(f"truncated payload for {name}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return out
