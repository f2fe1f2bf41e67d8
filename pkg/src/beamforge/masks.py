"""Time-frequency mask files.

Layout: ``u32`` header length (little-endian), a UTF-8 JSON header
``{"shape": [...], "layout": ..., "dtype": "<f4"}``, then the float32
little-endian payload in C order. ``layout`` is ``"TF"`` for a single speech
mask (the noise mask is its complement) or ``"KTF"`` for a stacked
speech/noise pair.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import DataError

LAYOUTS = {"TF": 2, "KTF": 3}


def save_mask(path: str | os.PathLike, speech: np.ndarray, noise: np.ndarray | None = None) -> None:
    speech = np.asarray(speech, dtype=np.float64)
    if speech.ndim != 2:
        raise DataError(f"mask must be (T, F), got {speech.shape}")
    if noise is None:
        data, layout = speech, "TF"
    else:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != speech.shape:
            raise DataError("speech and noise masks differ in shape")
        data, layout = np.stack([speech, noise]), "KTF"
    header = json.dumps({"shape": list(data.shape), "layout": layout, "dtype": "<f4"},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def load_mask(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(speech_mask, noise_mask)``, each ``(T, F)`` float64."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    if len(raw) < 4:
        raise DataError(f"{path}: truncated mask file")
    (hlen,) = struct.unpack("<I", raw[:4])
    try:
        header = json.loads(raw[4:4 + hlen].decode("utf-8"))
        shape = tuple(int(s) for s in header["shape"])
        layout = header.get("layout", "TF")
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad mask header") from exc
    if header.get("dtype", "<f4") != "<f4" or LAYOUTS.get(layout) != len(shape):
        raise DataError(f"{path}: unsupported mask layout {layout} / shape {shape}")
    payload = raw[4 + hlen:]
    if len(payload) != 4 * int(np.prod(shape)):
        raise DataError(f"{path}: payload size does not match shape {shape}")
    data = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite mask values")
    if layout == "TF":
        return data, 1.0 - data
    if shape[0] != 2:
        raise DataError(f"{path}: KTF layout needs exactly two masks")
    return data[0], data[1]
