"""Time-frequency analysis/synthesis and the real-valued network encodings.

Shape conventions follow the network side of the package: spectrograms are
``(T, F, M)`` (frames, bins, channels) and waveforms are ``(M, L)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError

__all__ = [
    "MultichannelWave",
    "StftConfig",
    "ComplexSpectrogram",
    "stft",
    "istft",
    "pack_features",
    "unpack_features",
    "pack_filters",
    "unpack_filters",
    "apply_filters_tv",
]


@dataclass(frozen=True)
class MultichannelWave:
    """Time-domain samples of an ``M``-channel recording, shape ``(M, L)``."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise DataError(f"samples must be (channels, length), got shape {x.shape}")
        if self.sample_rate <= 0:
            raise DataError("sample_rate must be positive")
        if not np.all(np.isfinite(x)):
            raise DataError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", x)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    def channel(self, m: int) -> np.ndarray:
        return self.samples[m]


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 1024
    hop: int = 256
    window: str = "sqrt-hann"
    drop_dc: bool = True

    def __post_init__(self):
        n = self.frame_len
        if n < 2 or n & (n - 1):
            raise DataError(f"frame_len must be a power of two, got {n}")
        if self.hop <= 0 or n % self.hop:
            raise DataError(f"hop {self.hop} must divide frame_len {n}")
        if self.window != "sqrt-hann":
            raise DataError(f"unsupported window {self.window!r}")

    @property
    def num_bins(self) -> int:
        return self.frame_len // 2 + (0 if self.drop_dc else 1)

    def window_array(self) -> np.ndarray:
        # periodic Hann; its square sums to a constant at hop = frame_len/4
        n = np.arange(self.frame_len)
        return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.frame_len))

    def num_frames(self, length: int) -> int:
        """Frames covering a signal padded by ``frame_len/2`` zeros on each side."""
        return -(-(length + self.frame_len) // self.hop)


@dataclass(frozen=True)
class ComplexSpectrogram:
    """Complex STFT coefficients, ``data`` shaped ``(T, F, M)``."""

    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3:
            raise DataError(f"spectrogram must be (T, F, M), got shape {d.shape}")
        object.__setattr__(self, "data", d.astype(np.complex128, copy=False))

    @property
    def shape(self):
        return self.data.shape


def stft(wave: MultichannelWave, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    cfg = cfg or StftConfig()
    x = wave.samples
    n, hop = cfg.frame_len, cfg.hop
    length = x.shape[1]
    if length < n:
        raise DataError(f"wave of {length} samples is shorter than one frame ({n})")
    t = cfg.num_frames(length)
    total = (t - 1) * hop + n
    pad_left = n // 2
    xp = np.zeros((x.shape[0], total))
    xp[:, pad_left:pad_left + length] = x
    frames = sliding_window_view(xp, n, axis=-1)[:, ::hop, :]
    spec = np.fft.rfft(frames * cfg.window_array(), axis=-1)
    if cfg.drop_dc:
        spec = spec[..., 1:]
    return ComplexSpectrogram(np.ascontiguousarray(spec.transpose(1, 2, 0)), cfg)


def istft(spec: ComplexSpectrogram, cfg: StftConfig | None = None,
          out_len: int | None = None, sample_rate: int = 16000) -> MultichannelWave:
    """Weighted overlap-add inverse of :func:`stft`.

    ``out_len`` defaults to the longest length the frames can reconstruct.
    """
    cfg = cfg or spec.config
    data = spec.data
    t, f, m = data.shape
    if f != cfg.num_bins:
        raise DataError(f"spectrogram has {f} bins, config expects {cfg.num_bins}")
    n, hop = cfg.frame_len, cfg.hop
    total = (t - 1) * hop + n
    max_len = total - n // 2
    if out_len is None:
        out_len = max_len
    if out_len > max_len:
        raise DataError(f"out_len {out_len} exceeds reconstructible length {max_len}")

    full = data.transpose(2, 0, 1)
    if cfg.drop_dc:
        full = np.concatenate([np.zeros((m, t, 1), dtype=full.dtype), full], axis=-1)
    win = cfg.window_array()
    frames = np.fft.irfft(full, n=n, axis=-1) * win

    out = np.zeros((m, total))
    norm = np.zeros(total)
    for k in range(t):
        out[:, k * hop:k * hop + n] += frames[:, k]
        norm[k * hop:k * hop + n] += win * win
    nz = norm > 1e-10
    out[:, nz] /= norm[nz]
    start = n // 2
    return MultichannelWave(out[:, start:start + out_len], sample_rate)


def pack_features(spec: ComplexSpectrogram | np.ndarray) -> np.ndarray:
    """Encode ``(T, F, M)`` complex coefficients as ``(T, F, 2M)`` magnitude|phase."""
    x = spec.data if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    if x.ndim != 3 or x.shape[-1] < 1:
        raise DataError(f"expected (T, F, M) with M >= 1, got shape {x.shape}")
    mag = np.abs(x)
    phase = np.angle(x)
    # (-pi, pi] with angle(0) := 0
    phase = np.where(phase <= -np.pi, np.pi, phase)
    phase = np.where(mag == 0, 0.0, phase)
    return np.concatenate([mag, phase], axis=-1)


def unpack_features(features: np.ndarray) -> np.ndarray:
    features = np.asarray(features)
    m = _half_channels(features)
    return features[..., :m] * np.exp(1j * features[..., m:])


def pack_filters(wstar: np.ndarray) -> np.ndarray:
    """Encode a conjugated filter field ``W*`` as real|imaginary channel halves."""
    wstar = np.asarray(wstar)
    return np.concatenate([wstar.real, wstar.imag], axis=-1)


def unpack_filters(w: np.ndarray) -> np.ndarray:
    """Decode a ``(..., 2M)`` filter tensor into the complex field ``W*_m``."""
    w = np.asarray(w)
    m = _half_channels(w)
    return w[..., :m] + 1j * w[..., m:]


def apply_filters_tv(wstar: np.ndarray, spec: ComplexSpectrogram | np.ndarray) -> np.ndarray:
    """Time-varying filter-and-sum: ``sum_m W*_m(t,f) X_m(t,f)``, shape ``(T, F, 1)``."""
    x = spec.data if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    wstar = np.asarray(wstar)
    if wstar.shape != x.shape:
        raise DataError(f"filter shape {wstar.shape} does not match spectrogram {x.shape}")
    return np.sum(wstar * x, axis=-1, keepdims=True)


def _half_channels(a: np.ndarray) -> int:
    c = a.shape[-1]
    if c % 2:
        raise DataError(f"channel count must be even, got {c}")
    return c // 2
