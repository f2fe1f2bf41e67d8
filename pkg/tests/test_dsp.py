"""STFT / iSTFT and the real-valued tensor encodings."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from beamforge.dsp import (ComplexSpectrogram, MultichannelWave, StftConfig, apply_filters_tv,
                           istft, pack_features, pack_filters, stft, unpack_features,
                           unpack_filters)
from beamforge.errors import DataError


def naive_stft(x, n=1024, hop=256):
    """Frame-by-frame DFT with an explicit sqrt-periodic-Hann window."""
    win = np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n))
    t = math.ceil((len(x) + n) / hop)
    xp = np.zeros((t - 1) * hop + n)
    xp[n // 2:n // 2 + len(x)] = x
    k = np.arange(1, n // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * np.arange(n)[None, :] / n)
    return np.stack([basis @ (xp[i * hop:i * hop + n] * win) for i in range(t)])


class TestMultichannelWave:
    def test_promotes_mono(self):
        w = MultichannelWave(np.zeros(100))
        assert w.samples.shape == (1, 100)
        assert w.sample_rate == 16000

    def test_rejects_non_finite(self):
        x = np.zeros((2, 10))
        x[1, 3] = np.nan
        with pytest.raises(DataError):
            MultichannelWave(x)

    def test_rejects_bad_rate(self):
        with pytest.raises(DataError):
            MultichannelWave(np.zeros(10), sample_rate=0)


class TestStftConfig:
    def test_defaults(self):
        cfg = StftConfig()
        assert cfg.num_bins == 512
        assert cfg.num_frames(16000) == math.ceil((16000 + 1024) / 256)

    @pytest.mark.parametrize("kw", [{"frame_len": 1000}, {"hop": 300}, {"window": "hamming"}])
    def test_invalid(self, kw):
        with pytest.raises(DataError):
            StftConfig(**kw)


class TestStft:
    def test_matches_naive_dft(self, rng):
        x = rng.standard_normal(5000)
        spec = stft(MultichannelWave(x)).data[..., 0]
        np.testing.assert_allclose(spec, naive_stft(x), rtol=0, atol=1e-9)

    def test_bin_ten_sinusoid(self):
        n = np.arange(16000)
        x = np.cos(2 * np.pi * 10 * n / 1024)
        mag = np.abs(stft(MultichannelWave(x)).data[..., 0])
        interior = mag[8:-8]
        assert np.all(np.argmax(interior, axis=1) == 9)

    def test_shape_for_one_second(self):
        spec = stft(MultichannelWave(np.ones((3, 16000))))
        assert spec.data.shape == (67, 512, 3)

    def test_zero_in_zero_out(self):
        assert not np.any(stft(MultichannelWave(np.zeros(4096))).data)

    def test_too_short(self):
        with pytest.raises(DataError):
            stft(MultichannelWave(np.zeros(1023)))


class TestIstft:
    @pytest.mark.parametrize("length", [1024, 5000, 16000])
    def test_round_trip_full_band(self, rng, length):
        cfg = StftConfig(drop_dc=False)
        x = rng.standard_normal((2, length))
        y = istft(stft(MultichannelWave(x), cfg), cfg, out_len=length).samples
        assert np.max(np.abs(y - x)) / np.max(np.abs(x)) < 1e-10

    def test_dropped_dc_is_the_only_loss(self, rng):
        full = StftConfig(drop_dc=False)
        x = rng.standard_normal(8000)
        spec = stft(MultichannelWave(x), full).data
        dc_only = np.zeros_like(spec)
        dc_only[:, 0] = spec[:, 0]
        lost = istft(ComplexSpectrogram(dc_only, full), full, out_len=len(x)).samples[0]
        y = istft(stft(MultichannelWave(x)), out_len=len(x)).samples[0]
        np.testing.assert_allclose(y, x - lost, atol=1e-10)

    def test_linearity(self, rng):
        spec = stft(MultichannelWave(rng.standard_normal(4096)))
        a = istft(spec).samples
        b = istft(ComplexSpectrogram(2 * spec.data, spec.config)).samples
        np.testing.assert_allclose(b, 2 * a, atol=1e-12)

    def test_zero(self):
        spec = ComplexSpectrogram(np.zeros((20, 512, 1), complex))
        assert not np.any(istft(spec).samples)

    def test_bin_mismatch(self):
        with pytest.raises(DataError):
            istft(ComplexSpectrogram(np.zeros((20, 256, 1), complex)), StftConfig())

    def test_out_len_too_long(self):
        spec = ComplexSpectrogram(np.zeros((20, 512, 1), complex))
        with pytest.raises(DataError):
            istft(spec, out_len=10 ** 6)


class TestFeaturePacking:
    def test_three_four_i(self):
        f = pack_features(np.full((1, 1, 1), 3 + 4j))
        assert f[0, 0, 0] == pytest.approx(5.0)
        assert f[0, 0, 1] == pytest.approx(math.atan2(4, 3))

    def test_zero_phase_convention(self):
        f = pack_features(np.array([[[0j, -0.0 - 0.0j]]]))
        assert np.all(f == 0)

    def test_minus_one_is_pi(self):
        f = pack_features(np.array([[[-1 + 0j, -1 - 0.0j]]]))
        np.testing.assert_array_equal(f[0, 0, 2:], [np.pi, np.pi])

    @given(hnp.arrays(np.complex128, (3, 4, 2),
                      elements=st.complex_numbers(max_magnitude=1e6, allow_nan=False)))
    def test_inverse_and_ranges(self, x):
        f = pack_features(x)
        assert np.all(f[..., :2] >= 0)
        assert np.all(f[..., 2:] > -np.pi) and np.all(f[..., 2:] <= np.pi)
        assert np.all(np.abs(unpack_features(f) - x) <= 1e-9 * (1 + np.abs(x)))


class TestFilterPacking:
    @given(hnp.arrays(np.complex128, (2, 3, 4),
                      elements=st.complex_numbers(max_magnitude=1e3, allow_nan=False)))
    def test_round_trip(self, w):
        np.testing.assert_array_equal(unpack_filters(pack_filters(w)), w)

    def test_layout(self):
        w = np.zeros((1, 1, 4))
        w[..., 1] = 2.0
        w[..., 3] = -1.0
        np.testing.assert_array_equal(unpack_filters(w)[0, 0], [0, 2 - 1j])

    def test_odd_channels(self):
        with pytest.raises(DataError):
            unpack_filters(np.zeros((2, 2, 3)))

    def test_apply_is_conjugate_free_sum(self, rng):
        x = rng.standard_normal((4, 5, 3)) + 1j * rng.standard_normal((4, 5, 3))
        w = rng.standard_normal((4, 5, 3)) + 1j * rng.standard_normal((4, 5, 3))
        out = apply_filters_tv(w, x)
        assert out.shape == (4, 5, 1)
        np.testing.assert_allclose(out[..., 0], np.einsum("tfm,tfm->tf", w, x))

    def test_apply_shape_mismatch(self):
        with pytest.raises(DataError):
            apply_filters_tv(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))
