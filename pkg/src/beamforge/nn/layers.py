"""Differentiable primitives on NHWC arrays.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col3x3(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    patches = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (N, H, W, C, 3, 3)
    return patches.reshape(n * h * w, c * 9)


def conv3x3_forward(x: np.ndarray, weight: np.ndarray):
    """3x3 convolution, stride 1, zero padding 1, no bias. ``weight``: (O, C, 3, 3)."""
    n, h, w, _ = x.shape
    o = weight.shape[0]
    cols = _im2col3x3(x)
    y = cols @ weight.reshape(o, -1).T
    return y.reshape(n, h, w, o), (cols, weight)


def conv3x3_backward(dy: np.ndarray, cache):
    cols, weight = cache
    o = weight.shape[0]
    dy2 = dy.reshape(-1, o)
    dw = (dy2.T @ cols).reshape(weight.shape)
    # transposed convolution == convolution with the flipped, channel-swapped kernel
    flipped = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dx, _ = conv3x3_forward(dy, np.ascontiguousarray(flipped))
    return dx, dw


def deconv2x2_forward(x: np.ndarray, weight: np.ndarray):
    """Transposed 2x2 convolution, stride 2, no bias. ``weight``: (C, O, 2, 2)."""
    n, h, w, c = x.shape
    o = weight.shape[1]
    z = x.reshape(-1, c) @ weight.reshape(c, o * 4)
    y = z.reshape(n, h, w, o, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h, 2 * w, o)
    return y, (x, weight)


def deconv2x2_backward(dy: np.ndarray, cache):
    x, weight = cache
    n, h, w, c = x.shape
    o = weight.shape[1]
    dz = dy.reshape(n, h, 2, w, 2, o).transpose(0, 1, 3, 5, 2, 4).reshape(-1, o * 4)
    dx = (dz @ weight.reshape(c, o * 4).T).reshape(x.shape)
    dw = (x.reshape(-1, c).T @ dz).reshape(weight.shape)
    return dx, dw


def avgpool2_forward(x: np.ndarray):
    n, h, w, c = x.shape
    y = x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))
    return y, x.shape


def avgpool2_backward(dy: np.ndarray, shape):
    n, h, w, c = shape
    g = np.broadcast_to((dy * 0.25)[:, :, None, :, None, :], (n, h // 2, 2, w // 2, 2, c))
    return g.reshape(shape)


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy: np.ndarray, mask):
    return dy * mask


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      running_mean: np.ndarray, running_var: np.ndarray,
                      training: bool, momentum: float = 0.99, eps: float = 1e-5,
                      update_stats: bool = True):
    """Per-channel batch normalization over (N, H, W).

    In training mode the batch statistics are used and, when ``update_stats``
    is set, folded into the running buffers in place.
    """
    if training:
        mean = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        if update_stats:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mean
            running_var *= momentum
            running_var += (1.0 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma, training)


def batchnorm_backward(dy: np.ndarray, cache):
    xhat, inv_std, gamma, training = cache
    dgamma = np.sum(dy * xhat, axis=(0, 1, 2))
    dbeta = np.sum(dy, axis=(0, 1, 2))
    dxhat = dy * gamma
    if not training:
        return dxhat * inv_std, dgamma, dbeta
    m = dy.shape[0] * dy.shape[1] * dy.shape[2]
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=(0, 1, 2))
                          - xhat * np.sum(dxhat * xhat, axis=(0, 1, 2)))
    return dx, dgamma, dbeta
