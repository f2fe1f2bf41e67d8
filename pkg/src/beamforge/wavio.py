"""WAV reading and writing (PCM 16-bit or IEEE float32)."""
from __future__ import annotations

import os

import numpy as np
from scipy.io import wavfile

from .dsp import MultichannelWave
from .errors import DataError

CANONICAL_RATE = 16000


def read_wav(path: str | os.PathLike, expected_rate: int | None = CANONICAL_RATE) -> MultichannelWave:
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read WAV {path}: {exc}") from exc
    if expected_rate is not None and rate != expected_rate:
        raise DataError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    x = x.T if x.ndim == 2 else x[None, :]
    return MultichannelWave(np.ascontiguousarray(x), int(rate))


def write_wav(path: str | os.PathLike, wave: MultichannelWave, fmt: str = "float32") -> None:
    x = wave.samples.T
    if wave.num_channels == 1:
        x = x[:, 0]
    if fmt == "float32":
        data = x.astype(np.float32)
    elif fmt == "pcm16":
        data = np.round(np.clip(x, -1.0, 32767 / 32768) * 32768.0).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(path, wave.sample_rate, data)
