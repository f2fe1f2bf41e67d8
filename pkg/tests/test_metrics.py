"""SI-SNR, STOI and batch evaluation reports."""
import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from pystoi import stoi as reference_stoi

from beamforge.errors import DataError
from beamforge.metrics import EvalItem, evaluate_batch, si_snr, stoi
from beamforge.sources import synthetic_speech


@pytest.fixture(scope="module")
def speech():
    return synthetic_speech(np.random.default_rng(5), 48000)


class TestSiSnr:
    @given(st.floats(1e-3, 1e3), st.integers(0, 1000))
    def test_scale_invariant(self, scale, seed):
        rng = np.random.default_rng(seed)
        ref = rng.standard_normal(800)
        est = ref + 0.3 * rng.standard_normal(800)
        assert si_snr(scale * est, ref) == pytest.approx(si_snr(est, ref), abs=1e-9)

    def test_orthogonal_ten_db(self, rng):
        ref = rng.standard_normal(4000)
        ref -= ref.mean()
        noise = rng.standard_normal(4000)
        noise -= noise.mean()
        noise -= noise @ ref / (ref @ ref) * ref
        noise *= math.sqrt(0.1 * (ref @ ref) / (noise @ noise))
        assert si_snr(ref + noise, ref) == pytest.approx(10.0, abs=1e-6)

    def test_mean_removed(self, rng):
        ref = rng.standard_normal(500)
        est = ref + 0.1 * rng.standard_normal(500)
        assert si_snr(est + 3.0, ref) == pytest.approx(si_snr(est, ref), abs=1e-9)

    def test_perfect_is_capped(self, rng):
        ref = rng.standard_normal(100)
        assert si_snr(ref, ref) == pytest.approx(120.0)

    def test_orthogonal_floor(self):
        assert si_snr(np.array([1.0, -1.0, 0, 0]), np.array([0, 0, 1.0, -1.0])) == -120.0

    def test_zero_reference(self):
        with pytest.raises(DataError):
            si_snr(np.ones(10), np.zeros(10))

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            si_snr(np.ones(10), np.ones(11))


class TestStoi:
    def test_identity(self, speech):
        assert stoi(speech, speech) == pytest.approx(1.0, abs=1e-9)

    def test_matches_reference_implementation(self, speech, rng):
        for level in (0.01, 0.03, 0.1):
            noisy = speech + level * rng.standard_normal(len(speech))
            assert stoi(noisy, speech) == pytest.approx(reference_stoi(speech, noisy, 16000), abs=2e-3)

    def test_monotone_in_noise(self, speech, rng):
        noise = rng.standard_normal(len(speech))
        scores = [stoi(speech + a * noise, speech) for a in np.geomspace(1e-3, 1.0, 20)]
        assert all(b < a for a, b in zip(scores, scores[1:]))

    def test_range(self, speech, rng):
        s = stoi(rng.standard_normal(len(speech)), speech)
        assert -1.0 <= s <= 1.0


def _item(i, rng, dataset="anechoic", moving=False):
    ref = synthetic_speech(rng, 16000)
    mix = np.stack([ref + 0.02 * rng.standard_normal(16000) for _ in range(2)])
    return EvalItem(f"test/scene_{i:05d}", mix, ref,
                    {"dataset": dataset, "moving": moving, "snr_db": 5.0})


class TestEvaluateBatch:
    def test_rows_and_summary(self, rng):
        items = [_item(0, rng), _item(1, rng, moving=True)]

        def broken(item):
            raise RuntimeError("nope")

        report = evaluate_batch(items, [("noisy", lambda it: it.mixture[0]), ("broken", broken)])
        assert len(report.rows) == 4
        failed = [r for r in report.rows if r["method"] == "broken"]
        assert all(r["status"].startswith("failed") for r in failed)
        summary = {(r["method"], r["condition"]): r for r in report.summary()}
        noisy_rows = [r for r in report.rows if r["method"] == "noisy"]
        assert summary["noisy", "all"]["si_snr"] == pytest.approx(np.mean([r["si_snr"] for r in noisy_rows]))
        assert summary["noisy", "anechoic-moving"]["count"] == 1
        assert summary["broken", "all"]["failed"] == 2 and math.isnan(summary["broken", "all"]["si_snr"])

    def test_reference_method_scores_perfectly(self, rng):
        report = evaluate_batch([_item(0, rng)], [("oracle", lambda it: it.reference)])
        assert report.rows[0]["si_snr"] == pytest.approx(120.0)
        assert report.rows[0]["stoi"] == pytest.approx(1.0)

    def test_workers_match_serial(self, rng):
        items = [_item(i, rng) for i in range(3)]
        methods = [("noisy", lambda it: it.mixture[1])]
        assert evaluate_batch(items, methods).rows == evaluate_batch(items, methods, workers=2).rows

    def test_csv(self, rng, tmp_path):
        report = evaluate_batch([_item(0, rng)], [("noisy", lambda it: it.mixture[0])])
        report.write_csv(tmp_path / "rows.csv", tmp_path / "summary.csv")
        with open(tmp_path / "rows.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert float(rows[0]["si_snr"]) == report.rows[0]["si_snr"]
        with open(tmp_path / "summary.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 2
