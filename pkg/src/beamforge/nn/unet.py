"""Six-level U-Net over (T, F) time-frequency planes.

Encoder stage: conv3x3 -> BN -> ReLU -> avgpool 2x2.
Decoder stage: deconv2x2/2 -> BN -> ReLU, then the pooled encoder output at
the same resolution is concatenated on the channel axis before the next
deconvolution. The last deconvolution is linear (no BN, no ReLU).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from . import layers

DEPTH = 6
WNET_WIDTHS = (16, 32, 64, 128, 256, 512)
UNET_BF_WIDTHS = (22, 45, 90, 180, 360, 720)
BN_MOMENTUM = 0.99
BN_EPS = 1e-5


@dataclass(frozen=True)
class UNetSpec:
    in_ch: int
    out_ch: int
    encoder_widths: tuple[int, ...] = WNET_WIDTHS
    decoder_widths: tuple[int, ...] | None = None

    def __post_init__(self):
        enc = tuple(int(w) for w in self.encoder_widths)
        dec = self.decoder_widths
        if dec is None:
            dec = tuple(reversed(enc[:-1])) + (self.out_ch,)
        dec = tuple(int(w) for w in dec)
        if len(enc) != DEPTH or len(dec) != DEPTH:
            raise DataError(f"U-Net needs {DEPTH} encoder and {DEPTH} decoder widths")
        if dec[-1] != self.out_ch:
            raise DataError("last decoder width must equal out_ch")
        if self.in_ch < 1 or min(enc + dec) < 1:
            raise DataError("channel counts must be positive")
        object.__setattr__(self, "encoder_widths", enc)
        object.__setattr__(self, "decoder_widths", dec)

    @classmethod
    def scaled(cls, in_ch: int, out_ch: int, widths=WNET_WIDTHS, scale: float = 1.0) -> "UNetSpec":
        """Spec with every hidden width multiplied by ``scale`` and rounded up."""
        enc = tuple(max(1, math.ceil(w * scale)) for w in widths)
        return cls(in_ch, out_ch, enc, tuple(reversed(enc[:-1])) + (out_ch,))

    def decoder_inputs(self) -> list[int]:
        enc, dec = self.encoder_widths, self.decoder_widths
        ins = [enc[-1]]
        for k in range(DEPTH - 1):
            ins.append(dec[k] + enc[DEPTH - 2 - k])
        return ins

    def param_shapes(self, prefix: str = "") -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        c = self.in_ch
        for j, w in enumerate(self.encoder_widths):
            shapes[f"{prefix}enc{j}.w"] = (w, c, 3, 3)
            shapes[f"{prefix}enc{j}.bn.gamma"] = (w,)
            shapes[f"{prefix}enc{j}.bn.beta"] = (w,)
            c = w
        for k, (cin, w) in enumerate(zip(self.decoder_inputs(), self.decoder_widths)):
            shapes[f"{prefix}dec{k}.w"] = (cin, w, 2, 2)
            if k < DEPTH - 1:
                shapes[f"{prefix}dec{k}.bn.gamma"] = (w,)
                shapes[f"{prefix}dec{k}.bn.beta"] = (w,)
        return shapes

    def buffer_shapes(self, prefix: str = "") -> dict[str, tuple[int, ...]]:
        shapes = {}
        for name, shape in self.param_shapes(prefix).items():
            if name.endswith(".bn.gamma"):
                base = name[: -len("gamma")]
                shapes[base + "mean"] = shape
                shapes[base + "var"] = shape
        return shapes

    def num_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())


def init_unet(spec: UNetSpec, prefix: str, rng: np.random.Generator, dtype=np.float32):
    """He-uniform kernels, BN scale 1 / shift 0, running stats (0, 1)."""
    params, buffers = {}, {}
    for name, shape in spec.param_shapes(prefix).items():
        if name.endswith(".w"):
            fan_in = shape[1] * 9 if len(shape) == 4 and shape[2] == 3 else shape[0]
            bound = math.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    for name, shape in spec.buffer_shapes(prefix).items():
        buffers[name] = (np.zeros if name.endswith(".mean") else np.ones)(shape, dtype=dtype)
    return params, buffers


def unet_forward(spec: UNetSpec, prefix: str, params: dict, buffers: dict,
                 x: np.ndarray, training: bool, update_stats: bool = True):
    """Map ``(N, T, F, in_ch)`` to ``(N, T, F, out_ch)``; returns ``(y, cache)``."""
    n, t, f, c = x.shape
    div = 2 ** DEPTH
    if t % div or f % div:
        raise DataError(f"spatial dims ({t}, {f}) must be divisible by {div}")
    if c != spec.in_ch:
        raise DataError(f"expected {spec.in_ch} input channels, got {c}")

    def bn(h, name):
        return layers.batchnorm_forward(
            h, params[name + ".gamma"], params[name + ".beta"],
            buffers[name + ".mean"], buffers[name + ".var"],
            training, BN_MOMENTUM, BN_EPS, update_stats)

    caches = []
    skips = []
    h = x
    for j in range(DEPTH):
        p = f"{prefix}enc{j}"
        h, c_conv = layers.conv3x3_forward(h, params[p + ".w"])
        h, c_bn = bn(h, p + ".bn")
        h, c_relu = layers.relu_forward(h)
        h, c_pool = layers.avgpool2_forward(h)
        caches.append((c_conv, c_bn, c_relu, c_pool))
        skips.append(h)
    for k in range(DEPTH):
        p = f"{prefix}dec{k}"
        h, c_dec = layers.deconv2x2_forward(h, params[p + ".w"])
        if k < DEPTH - 1:
            h, c_bn = bn(h, p + ".bn")
            h, c_relu = layers.relu_forward(h)
            h = np.concatenate([h, skips[DEPTH - 2 - k]], axis=-1)
            caches.append((c_dec, c_bn, c_relu))
        else:
            caches.append((c_dec,))
    return h, caches


def unet_backward(spec: UNetSpec, prefix: str, caches, dy: np.ndarray):
    """Gradients for every parameter of the block, plus the input gradient."""
    grads = {}
    dec = spec.decoder_widths
    skip_grads = [None] * DEPTH
    g = dy
    for k in reversed(range(DEPTH)):
        p = f"{prefix}dec{k}"
        cache = caches[DEPTH + k]
        if k < DEPTH - 1:
            c_dec, c_bn, c_relu = cache
            w = dec[k]
            skip_grads[DEPTH - 2 - k] = g[..., w:]
            g = g[..., :w]
            g = layers.relu_backward(g, c_relu)
            g, grads[p + ".bn.gamma"], grads[p + ".bn.beta"] = layers.batchnorm_backward(g, c_bn)
        else:
            (c_dec,) = cache
        g, grads[p + ".w"] = layers.deconv2x2_backward(g, c_dec)
    for j in reversed(range(DEPTH)):
        p = f"{prefix}enc{j}"
        c_conv, c_bn, c_relu, c_pool = caches[j]
        if skip_grads[j] is not None:
            g = g + skip_grads[j]
        g = layers.avgpool2_backward(g, c_pool)
        g = layers.relu_backward(g, c_relu)
        g, grads[p + ".bn.gamma"], grads[p + ".bn.beta"] = layers.batchnorm_backward(g, c_bn)
        g, grads[p + ".w"] = layers.conv3x3_backward(g, c_conv)
    return grads, g
