"""Enhancement methods addressed by name.

    noisy            reference microphone (channel 0), unprocessed
    passthrough:chK  microphone K, unprocessed
    ibm              ideal binary mask on channel 0
    mvdr, gev        mask-driven beamformers; masks from ``--mask`` or the IBM oracle
    model:<path>     a trained checkpoint
"""
from __future__ import annotations

import functools
import os
from typing import Callable

import numpy as np

from .beamformers import beamform_with_masks, ibm_mask, mask_enhance
from .dsp import ComplexSpectrogram, MultichannelWave, StftConfig, istft, stft
from .errors import ConfigError, DataError
from .masks import load_mask
from .metrics import EvalItem

Method = Callable[[EvalItem], np.ndarray]
CLASSIC = ("noisy", "ibm", "mvdr", "gev")


def _oracle_masks(item: EvalItem, cfg: StftConfig):
    if item.reference is None:
        raise ConfigError("oracle masks need a clean reference (--reference) or a --mask file")
    fs = item.sample_rate
    s = stft(MultichannelWave(item.reference, fs), cfg).data
    n = stft(MultichannelWave(item.noise_ref, fs), cfg).data
    speech = ibm_mask(s, n)
    return speech, 1.0 - speech


def _synth(spec: np.ndarray, cfg: StftConfig, item: EvalItem) -> np.ndarray:
    length = item.mixture.shape[1]
    return istft(ComplexSpectrogram(spec, cfg), cfg, length, item.sample_rate).samples[0]


def _passthrough(channel: int) -> Method:
    def run(item: EvalItem) -> np.ndarray:
        if not 0 <= channel < item.mixture.shape[0]:
            raise DataError(f"channel {channel} out of range for {item.mixture.shape[0]} channels")
        return item.mixture[channel].copy()
    return run


def _ibm(cfg: StftConfig, mask_path) -> Method:
    def run(item: EvalItem) -> np.ndarray:
        x = stft(MultichannelWave(item.mixture, item.sample_rate), cfg).data
        speech, _ = load_mask(mask_path) if mask_path else _oracle_masks(item, cfg)
        _check_mask(speech, x)
        return _synth(mask_enhance(speech, x[..., :1]), cfg, item)
    return run


def _beamformer(kind: str, cfg: StftConfig, mask_path) -> Method:
    def run(item: EvalItem) -> np.ndarray:
        x = stft(MultichannelWave(item.mixture, item.sample_rate), cfg).data
        speech, noise = load_mask(mask_path) if mask_path else _oracle_masks(item, cfg)
        _check_mask(speech, x)
        return _synth(beamform_with_masks(x, speech, noise, kind), cfg, item)
    return run


def _check_mask(mask: np.ndarray, x: np.ndarray) -> None:
    if mask.shape != x.shape[:2]:
        raise DataError(f"mask shape {mask.shape} does not match the input's (T, F) = {x.shape[:2]}")


@functools.lru_cache(maxsize=8)
def _load_model(path: str):
    from .nn.checkpoint import load_checkpoint
    model, _ = load_checkpoint(path)
    return model


def _neural(path: str) -> Method:
    from .nn.model import enhance
    model = _load_model(os.path.abspath(path))

    def run(item: EvalItem) -> np.ndarray:
        out = enhance(model, MultichannelWave(item.mixture, item.sample_rate))
        return out.samples[0]
    return run


def make_method(name: str, mask_path: str | os.PathLike | None = None,
                cfg: StftConfig | None = None) -> Method:
    cfg = cfg or StftConfig()
    if name == "noisy":
        return _passthrough(0)
    if name.startswith("passthrough:ch"):
        try:
            return _passthrough(int(name[len("passthrough:ch"):]))
        except ValueError as exc:
            raise ConfigError(f"bad channel in method {name!r}") from exc
    if name == "ibm":
        return _ibm(cfg, mask_path)
    if name in ("mvdr", "gev"):
        return _beamformer(name, cfg, mask_path)
    if name.startswith("model:"):
        return _neural(name[len("model:"):])
    raise ConfigError(f"unknown method {name!r}")


def enhance_wave(name: str, mixture: MultichannelWave, reference: np.ndarray | None = None,
                 mask_path=None) -> MultichannelWave:
    """Apply method ``name`` to one recording; returns a mono wave of the same length."""
    item = EvalItem("input", mixture.samples, reference, {}, mixture.sample_rate)
    if reference is not None and len(reference) != mixture.length:
        raise DataError("reference and mixture lengths differ")
    out = np.asarray(make_method(name, mask_path)(item), dtype=np.float64)
    return MultichannelWave(out[: mixture.length], mixture.sample_rate)
