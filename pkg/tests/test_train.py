"""Training loop bookkeeping, resumption and the scene sampler."""
import math

import numpy as np
import pytest

from beamforge.errors import ConfigError, NumericalError
from beamforge.nn.checkpoint import load_checkpoint, read_metadata
from beamforge.nn.model import build_model
from beamforge.nn.train import (BEST, CURVE, LAST, SceneSampler, TrainConfig, crop, read_curve,
                                train, write_curve)

SMALL = dict(batch_size=1, crop_frames=64, example_len=15360, val_scenes=1)


def _fixed_batch(rng, m=2, t=64, f=512):
    from beamforge.dsp import pack_features
    x = (rng.standard_normal((1, t, f, m)) + 1j * rng.standard_normal((1, t, f, m))) * 0.1
    s = x[..., 0] * 0.5
    return np.stack([pack_features(v) for v in x]), x, s


class TestConfig:
    def test_crop_must_match_pooling(self):
        with pytest.raises(ConfigError):
            TrainConfig(crop_frames=100)

    @pytest.mark.parametrize("kw", [{"batch_size": 0}, {"lr": -1.0}, {"val_every": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_intervals(self):
        cfg = TrainConfig(epochs=3, iterations_per_epoch=5)
        assert cfg.total_steps == 15 and cfg.validation_interval == 5
        assert TrainConfig(val_every=2).validation_interval == 2


class TestCrop:
    def test_offset_zero_without_rng(self, rng):
        x, s = rng.standard_normal((100, 3, 2)), rng.standard_normal((100, 3))
        cx, cs = crop(x, s, 64, None)
        np.testing.assert_array_equal(cx, x[:64])
        np.testing.assert_array_equal(cs, s[:64])

    def test_too_short(self, rng):
        with pytest.raises(ConfigError):
            crop(np.zeros((10, 2, 2)), np.zeros((10, 2)), 64, rng)


class TestSceneSampler:
    def test_batches_are_keyed_by_step(self):
        cfg = TrainConfig(**{**SMALL, "batch_size": 2})
        a = SceneSampler(cfg, 2).batch(3)
        b = SceneSampler(cfg, 2).batch(3)
        c = SceneSampler(cfg, 2).batch(4)
        assert a[0].shape == (2, 64, 512, 4) and a[1].shape == (2, 64, 512, 2) and a[2].shape == (2, 64, 512)
        assert all(np.array_equal(u, v) for u, v in zip(a, b))
        assert not np.array_equal(a[1], c[1])

    def test_validation_fixed(self):
        s = SceneSampler(TrainConfig(**{**SMALL, "val_scenes": 2}), 2)
        v = s.validation()
        assert len(v) == 2 and s.validation() is v


class TestTrain:
    def test_bookkeeping_and_best(self, rng, tmp_path):
        batch = _fixed_batch(rng)
        cfg = TrainConfig(epochs=2, iterations_per_epoch=4, val_every=2, lr=0.01, **SMALL)
        m = build_model("unet_bf", 2, 0.0625, seed=0)
        result = train(m, cfg, tmp_path, lambda step: batch, [batch])
        steps = [r["step"] for r in result.curve]
        assert steps == list(range(1, 9))
        vals = {r["step"]: r["val_loss"] for r in result.curve if r["val_loss"] is not None}
        assert sorted(vals) == [2, 4, 6, 8]
        assert result.best_step == min(vals, key=vals.get)
        assert result.best_val == vals[result.best_step]
        assert read_metadata(tmp_path / BEST)["step"] == result.best_step
        assert read_metadata(tmp_path / LAST)["step"] == 8
        assert read_curve(tmp_path / CURVE) == result.curve

    def test_resume_matches_uninterrupted(self, tmp_path):
        full = TrainConfig(epochs=2, iterations_per_epoch=2, **SMALL)
        half = TrainConfig(epochs=1, iterations_per_epoch=2, **SMALL)
        a = build_model("wnet_concat", 2, 0.0625, seed=5)
        train(a, full, tmp_path / "a")
        b = build_model("wnet_concat", 2, 0.0625, seed=5)
        train(b, half, tmp_path / "b")
        b = build_model("wnet_concat", 2, 0.0625, seed=5)
        train(b, full, tmp_path / "b", resume=True)
        assert (tmp_path / "a" / CURVE).read_bytes() == (tmp_path / "b" / CURVE).read_bytes()
        ma, _ = load_checkpoint(tmp_path / "a" / LAST)
        mb, _ = load_checkpoint(tmp_path / "b" / LAST)
        assert all(np.array_equal(ma.store.params[k], mb.store.params[k]) for k in ma.store.params)
        assert all(np.array_equal(ma.store.adam_v[k], mb.store.adam_v[k]) for k in ma.store.adam_v)

    def test_non_finite_aborts_and_keeps_last(self, rng, tmp_path):
        batch = _fixed_batch(rng)
        bad = tuple(np.full_like(a, np.nan) for a in batch)
        cfg = TrainConfig(epochs=1, iterations_per_epoch=6, val_every=2, **SMALL)
        m = build_model("unet_bf", 2, 0.0625)
        with pytest.raises(NumericalError):
            train(m, cfg, tmp_path, lambda step: bad if step == 5 else batch, [batch])
        assert read_metadata(tmp_path / LAST)["step"] == 4
        assert [r["step"] for r in read_curve(tmp_path / CURVE)] == [1, 2, 3, 4]

    def test_loss_decreases(self, rng, tmp_path):
        batch = _fixed_batch(rng)
        cfg = TrainConfig(epochs=1, iterations_per_epoch=200, **SMALL)
        m = build_model("unet_bf", 2, 0.0625, seed=2)
        curve = train(m, cfg, tmp_path, lambda step: batch, [batch]).curve
        assert curve[-1]["train_loss"] < curve[0]["train_loss"]

    def test_resume_rejects_other_model(self, rng, tmp_path):
        batch = _fixed_batch(rng)
        cfg = TrainConfig(epochs=1, iterations_per_epoch=1, **SMALL)
        train(build_model("unet_bf", 2, 0.0625), cfg, tmp_path, lambda s: batch, [batch])
        with pytest.raises(ConfigError):
            train(build_model("wnet_concat", 2, 0.0625), cfg, tmp_path, lambda s: batch, [batch], resume=True)


class TestCurve:
    def test_round_trip_exact(self, tmp_path):
        rows = [{"step": 1, "train_loss": 0.1 + 0.2, "val_loss": None},
                {"step": 2, "train_loss": 1 / 3, "val_loss": math.pi}]
        write_curve(tmp_path / "c.csv", rows)
        assert read_curve(tmp_path / "c.csv") == rows
