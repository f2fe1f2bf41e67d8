"""Filter-estimation beamformers: U-Net BF and the two W-Net variants.

All three map a packed feature tensor ``(N, T, F, 2M)`` to a packed filter
tensor of the same shape. The W-Nets first estimate a one-channel reference
plane ``Y`` and combine it with the features before the filter U-Net, either
through a sigmoid gate (attention) or by stacking it as an extra channel
(concatenation).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..dsp import (ComplexSpectrogram, MultichannelWave, StftConfig, istft,
                   pack_features, stft)
from ..errors import DataError
from . import layers
from .unet import (DEPTH, UNET_BF_WIDTHS, WNET_WIDTHS, UNetSpec,
                   init_unet, unet_backward, unet_forward)

REF_PREFIX = "ref."
BF_PREFIX = "bf."


class ModelKind(str, enum.Enum):
    UNET_BF = "unet_bf"
    WNET_ATTENTION = "wnet_attention"
    WNET_CONCAT = "wnet_concat"


@dataclass
class ParamStore:
    """Trainable arrays, BN running statistics, Adam moments and the step counter."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "ParamStore":
        return ParamStore(
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            {k: v.copy() for k, v in self.adam_m.items()},
            {k: v.copy() for k, v in self.adam_v.items()},
            self.step,
        )


@dataclass
class Model:
    kind: ModelKind
    num_mics: int
    width_scale: float
    blocks: dict[str, UNetSpec]
    store: ParamStore
    stft_config: StftConfig = field(default_factory=StftConfig)

    @property
    def dtype(self):
        return next(iter(self.store.params.values())).dtype

    def num_params(self) -> int:
        return self.store.num_params()

    def num_bn_affine(self) -> int:
        return sum(p.size for n, p in self.store.params.items() if ".bn." in n)


def model_blocks(kind: ModelKind | str, num_mics: int, width_scale: float = 1.0) -> dict[str, UNetSpec]:
    kind = ModelKind(kind)
    if num_mics < 1:
        raise DataError("num_mics must be >= 1")
    if width_scale <= 0:
        raise DataError("width_scale must be positive")
    c = 2 * num_mics
    if kind is ModelKind.UNET_BF:
        return {BF_PREFIX: UNetSpec.scaled(c, c, UNET_BF_WIDTHS, width_scale)}
    second_in = c if kind is ModelKind.WNET_ATTENTION else c + 1
    return {
        REF_PREFIX: UNetSpec.scaled(c, 1, WNET_WIDTHS, width_scale),
        BF_PREFIX: UNetSpec.scaled(second_in, c, WNET_WIDTHS, width_scale),
    }


def build_model(kind: ModelKind | str, num_mics: int = 6, width_scale: float = 1.0,
                seed: int = 0, dtype=np.float32, stft_config: StftConfig | None = None) -> Model:
    kind = ModelKind(kind)
    blocks = model_blocks(kind, num_mics, width_scale)
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for prefix, spec in blocks.items():
        p, b = init_unet(spec, prefix, rng, dtype)
        store.params.update(p)
        store.buffers.update(b)
    for name, arr in store.params.items():
        store.adam_m[name] = np.zeros_like(arr)
        store.adam_v[name] = np.zeros_like(arr)
    return Model(kind, num_mics, float(width_scale), blocks, store, stft_config or StftConfig())


# ---------------------------------------------------------------------------
# Integration blocks
# ---------------------------------------------------------------------------


def integrate_attention(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``sigmoid(Y) * X`` with the single reference channel broadcast."""
    _check_pair(y, x)
    return layers.sigmoid(y) * x


def integrate_attention_backward(dz: np.ndarray, y: np.ndarray, x: np.ndarray):
    s = layers.sigmoid(y)
    dy = np.sum(dz * x, axis=-1, keepdims=True) * s * (1.0 - s)
    return dy, dz * s


def integrate_concat(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Stack ``[Y | X]`` along channels, reference first."""
    _check_pair(y, x)
    return np.concatenate([y, x], axis=-1)


def integrate_concat_backward(dz: np.ndarray):
    return dz[..., :1], dz[..., 1:]


def _check_pair(y, x):
    if y.shape[-1] != 1 or y.shape[:-1] != x.shape[:-1]:
        raise DataError(f"reference {y.shape} incompatible with features {x.shape}")


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def model_forward(model: Model, features: np.ndarray, training: bool = False,
                  update_stats: bool = True):
    """Filters for ``features``; returns ``(W, cache)``.

    Accepts ``(T, F, 2M)`` or a batch ``(N, T, F, 2M)``; the output has the
    same rank as the input.
    """
    x = np.asarray(features)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.shape[-1] != 2 * model.num_mics:
        raise DataError(f"expected {2 * model.num_mics} feature channels, got {x.shape[-1]}")
    x = x.astype(model.dtype, copy=False)
    p, b = model.store.params, model.store.buffers
    cache = {"x": x}
    if model.kind is ModelKind.UNET_BF:
        w, cache["bf"] = unet_forward(model.blocks[BF_PREFIX], BF_PREFIX, p, b, x, training, update_stats)
    else:
        y, cache["ref"] = unet_forward(model.blocks[REF_PREFIX], REF_PREFIX, p, b, x, training, update_stats)
        cache["y"] = y
        if model.kind is ModelKind.WNET_ATTENTION:
            z = integrate_attention(y, x)
        else:
            z = integrate_concat(y, x)
        w, cache["bf"] = unet_forward(model.blocks[BF_PREFIX], BF_PREFIX, p, b, z, training, update_stats)
    return (w[0] if squeeze else w), cache


def model_backward(model: Model, cache, dw: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given the gradient of the loss w.r.t. the filter tensor."""
    if cache is None:
        raise DataError("backward called without a recorded forward pass")
    dw = np.asarray(dw)
    if dw.ndim == 3:
        dw = dw[None]
    grads, dz = unet_backward(model.blocks[BF_PREFIX], BF_PREFIX, cache["bf"], dw)
    if model.kind is not ModelKind.UNET_BF:
        if model.kind is ModelKind.WNET_ATTENTION:
            dy, _ = integrate_attention_backward(dz, cache["y"], cache["x"])
        else:
            dy, _ = integrate_concat_backward(dz)
        g_ref, _ = unet_backward(model.blocks[REF_PREFIX], REF_PREFIX, cache["ref"], dy)
        grads.update(g_ref)
    return grads


def loss_mse_complex(s_hat: np.ndarray, s_ref: np.ndarray) -> float:
    """Mean squared complex error over all time-frequency bins."""
    s_hat = np.asarray(s_hat)
    s_ref = np.asarray(s_ref)
    if s_hat.shape != s_ref.shape:
        raise DataError(f"shape mismatch {s_hat.shape} vs {s_ref.shape}")
    return float(np.mean(np.abs(s_hat - s_ref) ** 2))


def filter_loss(w: np.ndarray, spec: np.ndarray, s_ref: np.ndarray):
    """Loss of the filter-and-sum output and its gradient w.r.t. the packed filters.

    ``w``: (N, T, F, 2M) real; ``spec``: (N, T, F, M) complex;
    ``s_ref``: (N, T, F) complex. The loss is averaged over the batch.
    """
    m = spec.shape[-1]
    wstar = w[..., :m] + 1j * w[..., m:]
    s_hat = np.sum(wstar * spec, axis=-1)
    err = s_hat - s_ref
    n, t, f = err.shape
    loss = float(np.mean(np.abs(err) ** 2))
    g = (2.0 / (n * t * f)) * err[..., None] * spec.conj()
    dw = np.concatenate([g.real, g.imag], axis=-1)
    return loss, dw.astype(w.dtype, copy=False)


def loss_and_grad(model: Model, features: np.ndarray, spec: np.ndarray, s_ref: np.ndarray,
                  training: bool = True, update_stats: bool = True):
    """Forward, loss and backward for a batch; returns ``(loss, grads)``."""
    features = np.asarray(features)
    spec = np.asarray(spec)
    s_ref = np.asarray(s_ref)
    if features.ndim == 3:
        features, spec, s_ref = features[None], spec[None], s_ref[None]
    if s_ref.ndim == spec.ndim:
        s_ref = s_ref[..., 0]
    w, cache = model_forward(model, features, training, update_stats)
    loss, dw = filter_loss(w, spec, s_ref)
    return loss, model_backward(model, cache, dw)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def pad_frames(a: np.ndarray, multiple: int = 2 ** DEPTH) -> np.ndarray:
    """Reflect-pad the leading (time) axis to a multiple of ``multiple``."""
    t = a.shape[0]
    extra = (-t) % multiple
    if extra == 0:
        return a
    widths = [(0, extra)] + [(0, 0)] * (a.ndim - 1)
    return np.pad(a, widths, mode="reflect" if t > 1 else "edge")


def enhance_spectrogram(model: Model, spec: np.ndarray) -> np.ndarray:
    """Filter-and-sum output ``(T, F, 1)`` for a ``(T, F, M)`` spectrogram."""
    spec = np.asarray(spec)
    if spec.shape[-1] != model.num_mics:
        raise DataError(f"model expects {model.num_mics} channels, got {spec.shape[-1]}")
    t = spec.shape[0]
    feats = pad_frames(pack_features(spec))
    w, _ = model_forward(model, feats, training=False)
    w = w[:t].astype(np.float64)
    m = model.num_mics
    wstar = w[..., :m] + 1j * w[..., m:]
    return np.sum(wstar * spec, axis=-1, keepdims=True)


def enhance(model: Model, mixture: MultichannelWave) -> MultichannelWave:
    """STFT, estimate filters, filter-and-sum, inverse STFT."""
    if mixture.num_channels != model.num_mics:
        raise DataError(f"model expects {model.num_mics} channels, got {mixture.num_channels}")
    cfg = model.stft_config
    spec = stft(mixture, cfg)
    out = enhance_spectrogram(model, spec.data)
    return istft(ComplexSpectrogram(out, cfg), cfg, mixture.length, mixture.sample_rate)
