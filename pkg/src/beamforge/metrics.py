"""Objective evaluation: SI-SNR, STOI and batch reports."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import signal

from .errors import DataError

logger = logging.getLogger(__name__)

SI_SNR_CAP_DB = 120.0

# STOI constants (Taal et al.)
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0
_EPS = np.finfo(np.float64).eps


def si_snr(est, ref) -> float:
    """Scale-invariant SNR in dB, limited to +/-120 dB."""
    est = np.asarray(est, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if est.shape != ref.shape:
        raise DataError(f"length mismatch: {est.shape} vs {ref.shape}")
    est = est - est.mean()
    ref = ref - ref.mean()
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise DataError("zero reference signal")
    target = (np.dot(est, ref) / ref_energy) * ref
    noise = est - target
    p_t = np.dot(target, target)
    if p_t == 0:
        return -SI_SNR_CAP_DB
    val = 10.0 * np.log10(p_t / (np.dot(noise, noise) + 1e-12 * p_t))
    return float(np.clip(val, -SI_SNR_CAP_DB, SI_SNR_CAP_DB))


def _stoi_window() -> np.ndarray:
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _frames(x: np.ndarray, hop: int) -> np.ndarray:
    n = 1 + (len(x) - STOI_FRAME) // hop
    idx = np.arange(STOI_FRAME)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def _remove_silent_frames(x: np.ndarray, y: np.ndarray):
    """Drop frames more than 40 dB below the loudest reference frame."""
    hop = STOI_FRAME // 2
    w = _stoi_window()
    xf = _frames(x, hop) * w
    yf = _frames(y, hop) * w
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > energy.max() - STOI_DYN_RANGE_DB
    xf, yf = xf[keep], yf[keep]
    n = len(xf)
    out_len = (n - 1) * hop + STOI_FRAME if n else 0
    xs, ys = np.zeros(out_len), np.zeros(out_len)
    for i in range(n):
        xs[i * hop:i * hop + STOI_FRAME] += xf[i]
        ys[i * hop:i * hop + STOI_FRAME] += yf[i]
    return xs, ys


def _third_octave_matrix(fs: int, nfft: int):
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(STOI_BANDS)
    lo = STOI_MIN_FREQ * 2.0 ** ((2 * k - 1) / 6)
    hi = STOI_MIN_FREQ * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((STOI_BANDS, len(f)))
    for i in range(STOI_BANDS):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm


def _band_envelopes(x: np.ndarray, obm: np.ndarray) -> np.ndarray:
    frames = _frames(x, STOI_FRAME // 2) * _stoi_window()
    spec = np.fft.rfft(frames, n=STOI_NFFT, axis=1)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)


def stoi(est, ref, fs: int = 16000) -> float:
    """Short-time objective intelligibility of ``est`` against ``ref``.

    Signals are resampled to 10 kHz with a Kaiser-windowed sinc polyphase
    filter before analysis.
    """
    est = np.asarray(est, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if est.shape != ref.shape:
        raise DataError(f"length mismatch: {est.shape} vs {ref.shape}")
    if fs != STOI_FS:
        g = np.gcd(int(fs), STOI_FS)
        ref = signal.resample_poly(ref, STOI_FS // g, int(fs) // g)
        est = signal.resample_poly(est, STOI_FS // g, int(fs) // g)
    if len(ref) < STOI_FRAME:
        raise DataError("signal too short for STOI")
    ref, est = _remove_silent_frames(ref, est)
    obm = _third_octave_matrix(STOI_FS, STOI_NFFT)
    x_tob = _band_envelopes(ref, obm) if len(ref) >= STOI_FRAME else np.zeros((STOI_BANDS, 0))
    y_tob = _band_envelopes(est, obm) if len(est) >= STOI_FRAME else np.zeros((STOI_BANDS, 0))
    n_frames = x_tob.shape[1]
    if n_frames < STOI_SEGMENT:
        raise DataError(f"only {n_frames} active frames; STOI needs {STOI_SEGMENT} (384 ms)")

    # (segments, bands, N)
    idx = np.arange(STOI_SEGMENT)[None, :] + np.arange(n_frames - STOI_SEGMENT + 1)[:, None]
    xs = x_tob[:, idx].transpose(1, 0, 2)
    ys = y_tob[:, idx].transpose(1, 0, 2)
    alpha = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + _EPS)
    y_norm = ys * alpha
    clip = 1.0 + 10.0 ** (-STOI_BETA_DB / 20.0)
    y_prime = np.minimum(y_norm, xs * clip)
    xc = xs - xs.mean(axis=2, keepdims=True)
    yc = y_prime - y_prime.mean(axis=2, keepdims=True)
    xc /= np.linalg.norm(xc, axis=2, keepdims=True) + _EPS
    yc /= np.linalg.norm(yc, axis=2, keepdims=True) + _EPS
    return float(np.mean(np.sum(xc * yc, axis=2)))


# ---------------------------------------------------------------------------
# Batch evaluation
# ---------------------------------------------------------------------------

ROW_FIELDS = ["scene", "condition", "snr_db", "method", "si_snr", "stoi", "status"]
SUMMARY_FIELDS = ["method", "condition", "count", "failed", "si_snr", "stoi"]


@dataclass
class EvalItem:
    """Everything a method may look at for one scene."""

    scene_id: str
    mixture: np.ndarray  # (M, L)
    reference: np.ndarray  # (L,)
    record: dict = field(default_factory=dict)
    sample_rate: int = 16000

    @property
    def noise_ref(self) -> np.ndarray:
        return self.mixture[0] - self.reference

    @property
    def condition(self) -> str:
        dataset = self.record.get("dataset", "unknown")
        motion = "moving" if self.record.get("moving") else "static"
        return f"{dataset}-{motion}"


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)

    def summary(self) -> list[dict]:
        groups: dict[tuple[str, str], list[dict]] = {}
        for row in self.rows:
            for cond in (row["condition"], "all"):
                groups.setdefault((row["method"], cond), []).append(row)
        out = []
        for (method, cond), rows in groups.items():
            good = [r for r in rows if r["status"] == "ok"]
            out.append({
                "method": method,
                "condition": cond,
                "count": len(good),
                "failed": len(rows) - len(good),
                "si_snr": float(np.mean([r["si_snr"] for r in good])) if good else float("nan"),
                "stoi": float(np.mean([r["stoi"] for r in good])) if good else float("nan"),
            })
        return out

    def write_csv(self, rows_path: str | os.PathLike, summary_path: str | os.PathLike | None = None):
        with open(rows_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: _fmt(row[k]) for k in ROW_FIELDS})
        if summary_path is not None:
            with open(summary_path, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
                writer.writeheader()
                for row in self.summary():
                    writer.writerow({k: _fmt(row[k]) for k in SUMMARY_FIELDS})


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


Method = Callable[[EvalItem], np.ndarray]


def evaluate_batch(items: Iterable[EvalItem], methods: Sequence[tuple[str, Method]],
                   workers: int = 1) -> MetricReport:
    """Run every method on every item and score against the reference.

    A method that raises on a scene yields a ``failed`` row, which is left out
    of the summary means.
    """
    report = MetricReport()
    if not methods:
        return report
    items = list(items)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as pool:
            chunks = list(pool.map(lambda it: _score_item(it, methods), items))
    else:
        chunks = [_score_item(it, methods) for it in items]
    for chunk in chunks:
        report.rows.extend(chunk)
    return report


def _score_item(item: EvalItem, methods) -> list[dict]:
    rows = []
    for name, fn in methods:
        row = {"scene": item.scene_id, "condition": item.condition,
               "snr_db": float(item.record.get("snr_db", float("nan"))),
               "method": name, "si_snr": float("nan"), "stoi": float("nan"), "status": "ok"}
        try:
            est = np.asarray(fn(item), dtype=np.float64).ravel()[: len(item.reference)]
            row["si_snr"] = si_snr(est, item.reference)
            row["stoi"] = stoi(est, item.reference, item.sample_rate)
        except Exception as exc:  # noqa: BLE001 - a failing method must not stop the batch
            logger.warning("method %s failed on %s: %s", name, item.scene_id, exc)
            row["status"] = f"failed: {type(exc).__name__}"
        rows.append(row)
    return rows
