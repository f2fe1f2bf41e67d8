"""Adam with bias correction, operating in place on a ``ParamStore``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericalError


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError("lr and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")


def adam_step(store, grads: dict[str, np.ndarray], cfg: AdamConfig = AdamConfig()) -> None:
    """One Adam update of every parameter named in ``store.params``.

    Non-finite gradients reject the whole step: nothing is modified and
    ``NumericalError`` names the offending arrays.
    """
    missing = set(store.params) - set(grads)
    if missing:
        raise NumericalError(f"no gradient for {sorted(missing)[:3]}")
    bad = [name for name in store.params if not np.all(np.isfinite(grads[name]))]
    if bad:
        raise NumericalError(f"non-finite gradient in {bad[:3]}; step rejected")
    step = store.step + 1
    c1 = 1.0 - cfg.beta1 ** step
    c2 = 1.0 - cfg.beta2 ** step
    for name, p in store.params.items():
        g = grads[name].astype(p.dtype, copy=False)
        m = store.adam_m[name]
        v = store.adam_v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= (cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.dtype, copy=False)
    store.step = step
