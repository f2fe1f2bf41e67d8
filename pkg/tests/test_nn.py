"""Network primitives, model composition, loss, Adam and checkpoints."""
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from beamforge.dsp import MultichannelWave, pack_features
from beamforge.errors import ConfigError, DataError, NumericalError
from beamforge.nn import layers
from beamforge.nn.checkpoint import MAGIC, load_checkpoint, read_metadata, save_checkpoint
from beamforge.nn.model import (build_model, enhance, enhance_spectrogram, filter_loss,
                                integrate_attention, integrate_attention_backward,
                                integrate_concat, integrate_concat_backward, loss_and_grad,
                                loss_mse_complex, model_backward, model_forward, pad_frames)
from beamforge.nn.optim import AdamConfig, adam_step
from gradcheck import composition_check, composition_inputs, dense_check

TOL = 1e-6


class TestPrimitives:
    def test_conv3x3(self, rng):
        x = rng.standard_normal((2, 4, 6, 3))
        w = rng.standard_normal((2, 3, 3, 3))
        r = rng.standard_normal((2, 4, 6, 2))
        dx, dw = layers.conv3x3_backward(r, layers.conv3x3_forward(x, w)[1])
        f = lambda: np.sum(layers.conv3x3_forward(x, w)[0] * r)
        assert dense_check(f, x, dx) < TOL
        assert dense_check(f, w, dw) < TOL

    def test_conv3x3_matches_direct_sum(self, rng):
        x = rng.standard_normal((1, 5, 5, 2))
        w = rng.standard_normal((3, 2, 3, 3))
        y = layers.conv3x3_forward(x, w)[0]
        xp = np.pad(x[0], ((1, 1), (1, 1), (0, 0)))
        direct = np.einsum("ijc,ocij->o", xp[1:4, 2:5], w)
        np.testing.assert_allclose(y[0, 1, 2], direct)

    def test_deconv2x2(self, rng):
        x = rng.standard_normal((2, 3, 2, 3))
        w = rng.standard_normal((3, 2, 2, 2))
        r = rng.standard_normal((2, 6, 4, 2))
        dx, dw = layers.deconv2x2_backward(r, layers.deconv2x2_forward(x, w)[1])
        f = lambda: np.sum(layers.deconv2x2_forward(x, w)[0] * r)
        assert dense_check(f, x, dx) < TOL
        assert dense_check(f, w, dw) < TOL

    def test_deconv2x2_places_kernel(self):
        x = np.zeros((1, 2, 2, 1))
        x[0, 1, 0, 0] = 1.0
        w = np.arange(4.0).reshape(1, 1, 2, 2)
        y = layers.deconv2x2_forward(x, w)[0][0, :, :, 0]
        np.testing.assert_array_equal(y[2:4, 0:2], w[0, 0])
        assert y.sum() == w.sum()

    def test_avgpool(self, rng):
        x = rng.standard_normal((2, 4, 6, 3))
        r = rng.standard_normal((2, 2, 3, 3))
        dx = layers.avgpool2_backward(r, x.shape)
        assert dense_check(lambda: np.sum(layers.avgpool2_forward(x)[0] * r), x, dx) < TOL

    def test_relu_away_from_kink(self, rng):
        x = rng.standard_normal((1, 4, 4, 2))
        x[np.abs(x) < 0.01] = 0.5
        r = rng.standard_normal(x.shape)
        dx = layers.relu_backward(r, layers.relu_forward(x)[1])
        assert dense_check(lambda: np.sum(layers.relu_forward(x)[0] * r), x, dx) < TOL

    @pytest.mark.parametrize("training", [True, False])
    def test_batchnorm(self, rng, training):
        x = rng.standard_normal((2, 3, 4, 3)) * 2 + 1
        g, b = rng.uniform(0.5, 2, 3), rng.standard_normal(3)
        mean, var = rng.standard_normal(3), rng.uniform(0.5, 2, 3)
        r = rng.standard_normal(x.shape)

        def f():
            return np.sum(layers.batchnorm_forward(x, g, b, mean, var, training, update_stats=False)[0] * r)

        cache = layers.batchnorm_forward(x, g, b, mean, var, training, update_stats=False)[1]
        dx, dg, db = layers.batchnorm_backward(r, cache)
        assert dense_check(f, x, dx) < TOL
        assert dense_check(f, g, dg) < TOL
        assert dense_check(f, b, db) < TOL

    def test_batchnorm_running_update(self, rng):
        x = rng.standard_normal((2, 2, 2, 1)) + 3
        mean, var = np.zeros(1), np.ones(1)
        layers.batchnorm_forward(x, np.ones(1), np.zeros(1), mean, var, True)
        np.testing.assert_allclose(mean, 0.01 * x.mean())
        np.testing.assert_allclose(var, 0.99 + 0.01 * x.var())

    def test_batchnorm_train_eval_agree_on_frozen_stats(self, rng):
        x = rng.standard_normal((2, 4, 4, 3)) * 3 - 1
        g, b = rng.uniform(0.5, 2, 3), rng.standard_normal(3)
        mean, var = x.mean(axis=(0, 1, 2)), x.var(axis=(0, 1, 2))
        train = layers.batchnorm_forward(x, g, b, mean.copy(), var.copy(), True, update_stats=False)[0]
        evaluated = layers.batchnorm_forward(x, g, b, mean, var, False)[0]
        assert np.max(np.abs(train - evaluated)) <= 1e-5

    def test_sigmoid_stable(self):
        s = layers.sigmoid(np.array([-1000.0, -30.0, 0.0, 30.0, 1000.0]))
        assert np.all(np.isfinite(s))
        np.testing.assert_allclose(s, [0.0, 1 / (1 + np.exp(30)), 0.5, 1 / (1 + np.exp(-30)), 1.0])


class TestIntegration:
    def test_attention_gradients(self, rng):
        y = rng.standard_normal((1, 2, 3, 1))
        x = rng.standard_normal((1, 2, 3, 4))
        r = rng.standard_normal(x.shape)
        dy, dx = integrate_attention_backward(r, y, x)
        f = lambda: np.sum(integrate_attention(y, x) * r)
        assert dense_check(f, y, dy) < TOL
        assert dense_check(f, x, dx) < TOL

    def test_attention_at_zero_gate(self, rng):
        x = rng.standard_normal((1, 2, 2, 4))
        y = np.zeros((1, 2, 2, 1))
        np.testing.assert_allclose(integrate_attention(y, x), 0.5 * x)
        dy, dx = integrate_attention_backward(np.ones_like(x), y, x)
        np.testing.assert_allclose(dy[..., 0], 0.25 * x.sum(axis=-1))
        np.testing.assert_allclose(dx, 0.5 * np.ones_like(x))

    def test_saturated_gate_passes_features(self, rng):
        x = rng.standard_normal((1, 2, 2, 4))
        np.testing.assert_array_equal(integrate_attention(np.full((1, 2, 2, 1), 800.0), x), x)
        assert not np.any(integrate_attention(np.full((1, 2, 2, 1), -800.0), x))

    def test_concat(self, rng):
        y = rng.standard_normal((1, 2, 2, 1))
        x = rng.standard_normal((1, 2, 2, 4))
        z = integrate_concat(y, x)
        np.testing.assert_array_equal(z[..., 0], y[..., 0])
        np.testing.assert_array_equal(z[..., 1:], x)
        dy, dx = integrate_concat_backward(z)
        np.testing.assert_array_equal(dy, y)
        np.testing.assert_array_equal(dx, x)

    def test_shape_check(self):
        with pytest.raises(DataError):
            integrate_attention(np.zeros((1, 2, 2, 2)), np.zeros((1, 2, 2, 4)))


class TestModelStructure:
    def test_full_width_counts(self):
        assert build_model("unet_bf").num_params() == 4_840_996
        assert build_model("wnet_concat").num_params() == 4_898_832
        assert build_model("wnet_attention").num_params() == 4_898_688

    def test_concat_adds_one_input_plane(self):
        a = build_model("wnet_attention", 2, 0.25)
        c = build_model("wnet_concat", 2, 0.25)
        assert c.store.params["bf.enc0.w"].shape[1] == a.store.params["bf.enc0.w"].shape[1] + 1
        assert c.num_params() - a.num_params() == 9 * c.store.params["bf.enc0.w"].shape[0]

    @pytest.mark.parametrize("kind", ["unet_bf", "wnet_attention", "wnet_concat"])
    def test_quarter_width_is_about_a_sixteenth(self, kind):
        ratio = build_model(kind).num_params() / build_model(kind, width_scale=0.25).num_params()
        assert 15 < ratio < 17

    def test_bn_affine_counted(self):
        m = build_model("unet_bf")
        assert m.num_bn_affine() == 4_228

    @pytest.mark.parametrize("kind", ["unet_bf", "wnet_attention", "wnet_concat"])
    def test_output_shape(self, kind, rng):
        m = build_model(kind, 3, 0.0625)
        x = rng.standard_normal((64, 128, 6)).astype(np.float32)
        w, _ = model_forward(m, x)
        assert w.shape == x.shape and w.dtype == np.float32
        assert model_forward(m, x[None])[0].shape == (1, 64, 128, 6)

    def test_channel_mismatch(self, rng):
        with pytest.raises(DataError):
            model_forward(build_model("unet_bf", 3, 0.0625), np.zeros((64, 64, 4)))

    def test_same_seed_same_weights(self):
        a = build_model("wnet_concat", 2, 0.0625, seed=3)
        b = build_model("wnet_concat", 2, 0.0625, seed=3)
        assert all(np.array_equal(a.store.params[k], b.store.params[k]) for k in a.store.params)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            build_model("lstm")
        with pytest.raises(DataError):
            build_model("unet_bf", width_scale=0)

    def test_eval_is_deterministic_and_stateless(self, rng):
        m = build_model("wnet_attention", 2, 0.0625)
        x = rng.standard_normal((64, 64, 4))
        before = {k: v.copy() for k, v in m.store.buffers.items()}
        a, _ = model_forward(m, x, training=False)
        b, _ = model_forward(m, x, training=False)
        np.testing.assert_array_equal(a, b)
        assert all(np.array_equal(before[k], m.store.buffers[k]) for k in before)


class TestLoss:
    def test_examples(self):
        z = np.zeros((2, 2), complex)
        assert loss_mse_complex(z, z) == 0.0
        assert loss_mse_complex(np.ones((2, 2), complex), z) == 1.0
        assert loss_mse_complex(np.full((2, 2), 3 + 4j), z) == 25.0

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            loss_mse_complex(np.zeros(3), np.zeros(4))

    def test_filter_loss_gradient(self, rng):
        spec = rng.standard_normal((2, 3, 4, 2)) + 1j * rng.standard_normal((2, 3, 4, 2))
        s_ref = rng.standard_normal((2, 3, 4)) + 1j * rng.standard_normal((2, 3, 4))
        w = rng.standard_normal((2, 3, 4, 4))
        loss, dw = filter_loss(w, spec, s_ref)
        s_hat = np.sum((w[..., :2] + 1j * w[..., 2:]) * spec, axis=-1)
        assert loss == pytest.approx(loss_mse_complex(s_hat, s_ref))
        assert dense_check(lambda: filter_loss(w, spec, s_ref)[0], w, dw) < TOL

    def test_zero_loss_gives_zero_gradients(self, rng):
        m = build_model("wnet_concat", 2, 0.0625, dtype=np.float64)
        spec = rng.standard_normal((1, 64, 64, 2)) + 1j * rng.standard_normal((1, 64, 64, 2))
        feats = pack_features(spec[0])[None]
        w, _ = model_forward(m, feats, training=True, update_stats=False)
        s_ref = np.sum((w[..., :2] + 1j * w[..., 2:]) * spec, axis=-1)
        loss, grads = loss_and_grad(m, feats, spec, s_ref, update_stats=False)
        assert loss == pytest.approx(0.0, abs=1e-25)
        assert all(np.max(np.abs(g)) < 1e-12 for g in grads.values())

    def test_backward_without_forward(self):
        with pytest.raises(DataError):
            model_backward(build_model("unet_bf", 2, 0.0625), None, np.zeros((64, 64, 4)))


class TestCompositionGradients:
    @pytest.mark.parametrize("kind", ["unet_bf", "wnet_attention", "wnet_concat"])
    def test_finite_differences(self, kind):
        rng = np.random.default_rng(11)
        m = build_model(kind, 2, 0.0625, seed=1, dtype=np.float64)
        worst, _ = composition_check(m, *composition_inputs(m, rng, n=2, t=64, f=64), rng, per_tensor=1)
        assert max(worst.values()) < 1e-4, max(worst.items(), key=lambda kv: kv[1])


class TestAdam:
    def _store(self, rng):
        return build_model("unet_bf", 1, 0.0625, dtype=np.float64).store

    def test_first_step_is_signed_lr(self, rng):
        store = self._store(rng)
        before = {k: v.copy() for k, v in store.params.items()}
        grads = {k: rng.standard_normal(v.shape) for k, v in store.params.items()}
        adam_step(store, grads, AdamConfig(lr=0.01))
        for k in before:
            np.testing.assert_allclose(store.params[k] - before[k], -0.01 * grads[k] / (np.abs(grads[k]) + 1e-8), rtol=1e-10)
        assert store.step == 1

    def test_zero_gradient_no_move(self, rng):
        store = self._store(rng)
        before = {k: v.copy() for k, v in store.params.items()}
        adam_step(store, {k: np.zeros_like(v) for k, v in store.params.items()})
        assert all(np.array_equal(before[k], store.params[k]) for k in before)

    def test_non_finite_rejected_atomically(self, rng):
        store = self._store(rng)
        before = store.copy()
        grads = {k: np.ones_like(v) for k, v in store.params.items()}
        grads[sorted(grads)[-1]][...] = np.nan
        with pytest.raises(NumericalError):
            adam_step(store, grads)
        assert store.step == 0
        assert all(np.array_equal(before.params[k], store.params[k]) for k in before.params)
        assert all(not np.any(store.adam_m[k]) for k in store.adam_m)

    def test_missing_gradient(self, rng):
        with pytest.raises(NumericalError):
            adam_step(self._store(rng), {})

    @pytest.mark.parametrize("kw", [{"lr": 0}, {"beta1": 1.0}, {"eps": -1}])
    def test_bad_config(self, kw):
        with pytest.raises(ConfigError):
            AdamConfig(**kw)

    @given(st.floats(1e-4, 1e-1), st.floats(-5, 5).filter(lambda g: abs(g) > 1e-3))
    def test_matches_scalar_recurrence(self, lr, g0):
        store = build_model("unet_bf", 1, 0.0625, dtype=np.float64).store
        name = "bf.enc0.bn.beta"
        p0 = float(store.params[name][0])
        m = v = 0.0
        p = p0
        for t, g in enumerate([g0, -0.5 * g0, 2 * g0], start=1):
            grads = {k: np.zeros_like(a) for k, a in store.params.items()}
            grads[name][0] = g
            adam_step(store, grads, AdamConfig(lr=lr))
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            p -= lr * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert store.params[name][0] == pytest.approx(p, rel=1e-12, abs=1e-15)


class TestCheckpoint:
    def _trained(self, rng):
        m = build_model("wnet_attention", 2, 0.0625, seed=4)
        spec = rng.standard_normal((1, 64, 64, 2)) + 1j * rng.standard_normal((1, 64, 64, 2))
        feats = pack_features(spec[0])[None]
        _, grads = loss_and_grad(m, feats, spec, spec[..., 0])
        adam_step(m.store, grads)
        return m

    def test_round_trip(self, rng, tmp_path):
        m = self._trained(rng)
        save_checkpoint(tmp_path / "m.ckpt", m, {"note": "x"})
        back, meta = load_checkpoint(tmp_path / "m.ckpt")
        assert meta["extra"] == {"note": "x"} and back.store.step == 1
        for sec in ("params", "buffers", "adam_m", "adam_v"):
            a, b = getattr(m.store, sec), getattr(back.store, sec)
            assert a.keys() == b.keys()
            assert all(np.array_equal(a[k], b[k]) for k in a)
        x = rng.standard_normal((64, 64, 4))
        np.testing.assert_array_equal(model_forward(m, x)[0], model_forward(back, x)[0])
        assert read_metadata(tmp_path / "m.ckpt")["num_params"] == m.num_params()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "m.ckpt").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "m.ckpt")

    def test_truncated(self, rng, tmp_path):
        save_checkpoint(tmp_path / "m.ckpt", build_model("unet_bf", 2, 0.0625))
        data = (tmp_path / "m.ckpt").read_bytes()
        (tmp_path / "t.ckpt").write_bytes(data[: len(data) - 100])
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "t.ckpt")

    def test_architecture_mismatch(self, tmp_path):
        save_checkpoint(tmp_path / "m.ckpt", build_model("unet_bf", 2, 0.0625))
        data = (tmp_path / "m.ckpt").read_bytes()
        (n,) = struct.unpack("<I", data[8:12])
        meta = data[12:12 + n].replace(b'"unet_bf"', b'"wnet_concat"')
        (tmp_path / "x.ckpt").write_bytes(MAGIC + data[4:8] + struct.pack("<I", len(meta)) + meta + data[12 + n:])
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "x.ckpt")

    def test_missing(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "none.ckpt")


class TestEnhance:
    def test_pad_frames(self, rng):
        a = rng.standard_normal((70, 3))
        p = pad_frames(a)
        assert p.shape == (128, 3)
        np.testing.assert_array_equal(p[:70], a)
        np.testing.assert_array_equal(p[70], a[68])
        np.testing.assert_array_equal(pad_frames(a[:64]), a[:64])
        assert pad_frames(a[:1]).shape == (64, 3)

    def test_zero_in_zero_out(self):
        m = build_model("wnet_concat", 2, 0.0625)
        out = enhance(m, MultichannelWave(np.zeros((2, 9000))))
        assert out.samples.shape == (1, 9000)
        assert not np.any(out.samples)

    def test_channel_mismatch(self):
        m = build_model("unet_bf", 2, 0.0625)
        with pytest.raises(DataError):
            enhance(m, MultichannelWave(np.zeros((3, 9000))))
        with pytest.raises(DataError):
            enhance_spectrogram(m, np.zeros((10, 512, 3), complex))

    def test_spectrogram_output_is_filter_and_sum(self, rng):
        m = build_model("unet_bf", 2, 0.0625)
        spec = rng.standard_normal((64, 512, 2)) + 1j * rng.standard_normal((64, 512, 2))
        out = enhance_spectrogram(m, spec)
        w = model_forward(m, pack_features(spec))[0].astype(np.float64)
        np.testing.assert_allclose(out[..., 0], np.sum((w[..., :2] + 1j * w[..., 2:]) * spec, axis=-1))
