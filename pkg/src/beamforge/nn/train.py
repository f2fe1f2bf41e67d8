"""Training loop with on-the-fly scene sampling, validation and checkpointing.

Every random draw is keyed by ``(seed, step)``, so a run resumed from its
last checkpoint replays exactly the batches an uninterrupted run would see.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..dataset import example_spectra, synthesize_scene
from ..dsp import pack_features
from ..errors import ConfigError, NumericalError
from ..sources import Corpus
from .checkpoint import load_checkpoint, save_checkpoint
from .model import Model, filter_loss, loss_and_grad, model_forward
from .optim import AdamConfig, adam_step
from .unet import DEPTH

logger = logging.getLogger(__name__)

BEST = "best.ckpt"
LAST = "last.ckpt"
CURVE = "curve.csv"
CURVE_FIELDS = ["step", "train_loss", "val_loss"]
_CROP_STREAM = 7


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 1
    iterations_per_epoch: int = 100
    batch_size: int = 4
    crop_frames: int = 256
    seed: int = 0
    dataset: str = "anechoic"
    example_len: int = 80000
    val_scenes: int = 4
    val_every: int = 0  # 0: once per epoch
    max_order: int | None = None

    def __post_init__(self):
        for name in ("epochs", "iterations_per_epoch", "batch_size", "crop_frames",
                     "example_len", "val_scenes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.val_every < 0:
            raise ConfigError("val_every must be >= 0")
        if self.crop_frames % 2 ** DEPTH:
            raise ConfigError(f"crop_frames must be divisible by {2 ** DEPTH}")
        AdamConfig(self.lr, self.beta1, self.beta2, self.eps)

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.lr, self.beta1, self.beta2, self.eps)

    @property
    def total_steps(self) -> int:
        return self.epochs * self.iterations_per_epoch

    @property
    def validation_interval(self) -> int:
        return self.val_every or self.iterations_per_epoch

    def to_dict(self) -> dict:
        return asdict(self)


Batch = tuple[np.ndarray, np.ndarray, np.ndarray]  # features, spectra, reference


def crop(x: np.ndarray, s: np.ndarray, frames: int, rng: np.random.Generator | None):
    """Cut ``frames`` consecutive frames; random offset if ``rng`` is given, else from 0."""
    t = x.shape[0]
    if t < frames:
        raise ConfigError(f"example has {t} frames, fewer than the crop of {frames}")
    off = 0 if rng is None else int(rng.integers(0, t - frames + 1))
    return x[off:off + frames], s[off:off + frames]


class SceneSampler:
    """Fresh scenes for every training example, fixed scenes for validation."""

    def __init__(self, cfg: TrainConfig, num_mics: int, speech_corpus: Corpus | None = None,
                 noise_corpus: Corpus | None = None, workers: int = 1):
        self.cfg = cfg
        self.num_mics = num_mics
        self.speech_corpus = speech_corpus
        self.noise_corpus = noise_corpus
        self.workers = max(1, int(workers))
        self._val: list[Batch] | None = None

    def _spectra(self, split: str, index: int):
        ex = synthesize_scene(self.cfg.seed, self.cfg.dataset, split, index, self.cfg.example_len,
                              speech_corpus=self.speech_corpus, noise_corpus=self.noise_corpus,
                              num_mics=self.num_mics, max_order=self.cfg.max_order)
        return example_spectra(ex)

    def _map(self, fn, args):
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(fn, args))
        return [fn(a) for a in args]

    def batch(self, step: int) -> Batch:
        b = self.cfg.batch_size
        indices = [(step - 1) * b + i for i in range(b)]
        spectra = self._map(lambda i: self._spectra("train", i), indices)
        rng = np.random.default_rng([self.cfg.seed, _CROP_STREAM, step])
        return _stack([crop(x, s, self.cfg.crop_frames, rng) for x, s in spectra])

    def validation(self) -> list[Batch]:
        if self._val is None:
            spectra = self._map(lambda i: self._spectra("val", i), range(self.cfg.val_scenes))
            self._val = [_stack([crop(x, s, self.cfg.crop_frames, None)]) for x, s in spectra]
        return self._val


def _stack(pairs) -> Batch:
    xs = np.stack([x for x, _ in pairs])
    ss = np.stack([s for _, s in pairs])
    feats = np.stack([pack_features(x) for x in xs])
    return feats, xs, ss


def validation_loss(model: Model, batches: list[Batch]) -> float:
    losses = []
    for feats, xs, ss in batches:
        w, _ = model_forward(model, feats, training=False)
        losses.append(filter_loss(w.astype(np.float64), xs, ss)[0])
    return float(np.mean(losses))


def train_step(model: Model, batch: Batch, adam: AdamConfig) -> float:
    feats, xs, ss = batch
    loss, grads = loss_and_grad(model, feats, xs, ss, training=True)
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite training loss at step {model.store.step + 1}")
    adam_step(model.store, grads, adam)
    return loss


@dataclass
class TrainResult:
    best_val: float
    best_step: int
    last_step: int
    curve: list[dict]


def train(model: Model, cfg: TrainConfig, out_dir: str | os.PathLike,
          batch_source: Callable[[int], Batch] | None = None,
          val_batches: list[Batch] | None = None, *,
          speech_corpus: Corpus | None = None, noise_corpus: Corpus | None = None,
          workers: int = 1, resume: bool = False, extra: dict | None = None) -> TrainResult:
    """Run ``cfg.total_steps`` updates, writing best/last checkpoints and the loss curve.

    ``batch_source(step)`` and ``val_batches`` default to the scene sampler.
    With ``resume`` the model and curve are restored from ``out_dir``.
    A non-finite loss aborts with ``NumericalError`` and leaves the last
    checkpoint untouched.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if batch_source is None or val_batches is None:
        sampler = SceneSampler(cfg, model.num_mics, speech_corpus, noise_corpus, workers)
        batch_source = batch_source or sampler.batch
        if val_batches is None:
            val_batches = sampler.validation()

    curve: list[dict] = []
    best_val, best_step = math.inf, 0
    if resume and (out / LAST).exists():
        loaded, meta = load_checkpoint(out / LAST, dtype=model.dtype)
        if loaded.kind != model.kind or loaded.num_mics != model.num_mics:
            raise ConfigError("checkpoint in output directory belongs to a different model")
        model.store = loaded.store
        best_val = float(meta["extra"].get("best_val", math.inf))
        best_step = int(meta["extra"].get("best_step", 0))
        curve = [r for r in read_curve(out / CURVE) if r["step"] <= model.store.step]
        logger.info("resuming at step %d", model.store.step)

    meta_extra = dict(extra or {})
    meta_extra["train"] = cfg.to_dict()
    interval = cfg.validation_interval
    while model.store.step < cfg.total_steps:
        step = model.store.step + 1
        loss = train_step(model, batch_source(step), cfg.adam)
        row = {"step": step, "train_loss": loss, "val_loss": None}
        if step % interval == 0 or step == cfg.total_steps:
            val = validation_loss(model, val_batches)
            if not math.isfinite(val):
                raise NumericalError(f"non-finite validation loss at step {step}")
            row["val_loss"] = val
            if val < best_val:
                best_val, best_step = val, step
                save_checkpoint(out / BEST, model, {**meta_extra, "best_val": best_val, "best_step": step})
            save_checkpoint(out / LAST, model, {**meta_extra, "best_val": best_val, "best_step": best_step})
            logger.info("step %d train %.6g val %.6g", step, loss, val)
        curve.append(row)
        if row["val_loss"] is not None:
            write_curve(out / CURVE, curve)
    write_curve(out / CURVE, curve)
    return TrainResult(best_val, best_step, model.store.step, curve)


def write_curve(path: str | os.PathLike, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({"step": r["step"], "train_loss": repr(float(r["train_loss"])),
                             "val_loss": "" if r["val_loss"] is None else repr(float(r["val_loss"]))})


def read_curve(path: str | os.PathLike) -> list[dict]:
    if not Path(path).exists():
        return []
    with open(path, newline="") as fh:
        return [{"step": int(r["step"]), "train_loss": float(r["train_loss"]),
                 "val_loss": float(r["val_loss"]) if r["val_loss"] else None}
                for r in csv.DictReader(fh)]
