"""Source material: user-supplied WAV corpora and synthetic stand-ins.

Corpora are plain directory trees of WAV files. Files are assigned to
train/val/test either by a ``splits.json`` at the corpus root or, failing
that, by position in sorted order within each directory (8 train, 1 val,
1 test out of every 10), which keeps the 80/10/10 ratio per sound class
when classes live in subdirectories.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import DataError
from .room import Scene
from .wavio import read_wav

SPEECH_RMS = 0.05
NOISE_RMS = 0.05
NOISE_KINDS = ("white", "pink", "brown", "modulated")

# rough (F1, F2, F3) vowel formants in Hz
_VOWELS = np.array([
    [730, 1090, 2440], [270, 2290, 3010], [300, 870, 2240], [530, 1840, 2480],
    [660, 1720, 2410], [570, 840, 2410], [440, 1020, 2240], [490, 1350, 1690],
])


def _resonator(freq: float, bw: float, fs: int):
    r = np.exp(-np.pi * bw / fs)
    a = [1.0, -2.0 * r * np.cos(2 * np.pi * freq / fs), r * r]
    return [1.0 - r], a


def synthetic_speech(rng: np.random.Generator, length: int, fs: int = 16000) -> np.ndarray:
    """Voiced syllable trains with formant filtering, pauses and fricative bursts.

    Not speech, but it has the properties the pipeline cares about: harmonic
    structure, formant-shaped spectra, syllabic on/off modulation and silent
    gaps that give masks something to find.
    """
    out = np.zeros(length)
    f0_base = rng.uniform(90.0, 220.0)
    pos = int(rng.integers(0, fs // 10))
    while pos < length:
        if rng.random() < 0.25:
            pos += int(rng.uniform(0.05, 0.3) * fs)
            continue
        dur = int(rng.uniform(0.12, 0.3) * fs)
        n = min(dur, length - pos)
        if n < 16:
            break
        t = np.arange(n) / fs
        f0 = f0_base * (1.0 + rng.uniform(-0.15, 0.15)) * (1.0 + rng.uniform(-0.1, 0.1) * t / max(t[-1], 1e-3))
        phase = 2 * np.pi * np.cumsum(f0) / fs
        n_harm = int(4000 // f0.max())
        k = np.arange(1, n_harm + 1)[:, None]
        voiced = np.sum(np.sin(k * phase[None, :]) / k, axis=0)
        formants = _VOWELS[rng.integers(len(_VOWELS))] * rng.uniform(0.9, 1.1, size=3)
        seg = np.zeros(n)
        for f, bw in zip(formants, (80.0, 100.0, 140.0)):
            b, a = _resonator(f, bw, fs)
            seg += signal.lfilter(b, a, voiced)
        if rng.random() < 0.3:
            burst = rng.standard_normal(n)
            b, a = signal.butter(2, 3000.0 / (fs / 2), btype="high")
            seg += 0.3 * np.std(seg) * signal.lfilter(b, a, burst) * np.linspace(1.0, 0.0, n)
        seg *= np.hanning(n) * rng.uniform(0.5, 1.0)
        out[pos:pos + n] += seg
        pos += n
    return _set_rms(out, SPEECH_RMS)


def synthetic_noise(rng: np.random.Generator, length: int, kind: str | None = None,
                    fs: int = 16000) -> np.ndarray:
    kind = kind or NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
    white = rng.standard_normal(length)
    if kind == "white":
        x = white
    elif kind in ("pink", "brown", "modulated"):
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(length, 1.0 / fs)
        f[0] = f[1] if length > 1 else 1.0
        power = 1.0 if kind != "brown" else 2.0
        x = np.fft.irfft(spec / f ** (power / 2), n=length)
        if kind == "modulated":
            rate = rng.uniform(0.5, 4.0)
            x *= 1.0 + 0.8 * np.sin(2 * np.pi * rate * np.arange(length) / fs + rng.uniform(0, 2 * np.pi))
    else:
        raise DataError(f"unknown noise kind {kind!r}")
    return _set_rms(x, NOISE_RMS)


def _set_rms(x: np.ndarray, rms: float) -> np.ndarray:
    cur = np.sqrt(np.mean(x ** 2))
    return x * (rms / cur) if cur > 0 else x


class Corpus:
    """WAV files under ``root`` partitioned into train/val/test."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        if not self.root.is_dir():
            raise DataError(f"corpus directory {self.root} does not exist")
        self.splits = self._load_splits()

    def _load_splits(self) -> dict[str, list[Path]]:
        manifest = self.root / "splits.json"
        if manifest.exists():
            with open(manifest) as fh:
                d = json.load(fh)
            return {k: [self.root / p for p in d.get(k, [])] for k in ("train", "val", "test")}
        by_dir: dict[Path, list[Path]] = {}
        for p in sorted(self.root.rglob("*.wav")):
            by_dir.setdefault(p.parent, []).append(p)
        out = {"train": [], "val": [], "test": []}
        for files in by_dir.values():
            for i, p in enumerate(files):
                slot = i % 10
                out["train" if slot < 8 else "val" if slot == 8 else "test"].append(p)
        return out

    def files(self, split: str) -> list[Path]:
        files = self.splits[split]
        if not files:
            # tiny corpora can leave val/test empty; fall back to the full list
            files = [p for v in self.splits.values() for p in v]
        if not files:
            raise DataError(f"corpus {self.root} has no WAV files")
        return files

    def draw(self, rng: np.random.Generator, split: str, length: int, tile: bool) -> tuple[np.ndarray, str]:
        files = self.files(split)
        path = files[int(rng.integers(len(files)))]
        x = read_wav(path).samples[0]
        if len(x) >= length:
            start = int(rng.integers(0, len(x) - length + 1))
            x = x[start:start + length]
        elif tile:
            x = np.resize(x, length)
        else:
            x = np.pad(x, (0, length - len(x)))
        return x, str(path.relative_to(self.root))


def draw_sources(scene: Scene, length: int, speech_corpus: Corpus | None = None,
                 noise_corpus: Corpus | None = None, fs: int = 16000):
    """Pick the speech and noise waveforms for ``scene``.

    Returns ``(speech, noises, provenance)`` where provenance names the files
    (or synthetic generators) used.
    """
    rng = np.random.default_rng(scene.seed)
    prov = {}
    if speech_corpus is None:
        speech = synthetic_speech(rng, length, fs)
        prov["speech"] = "synthetic:speech"
    else:
        speech, prov["speech"] = speech_corpus.draw(rng, scene.split, length, tile=False)
    noises, names = [], []
    for _ in scene.noises:
        if noise_corpus is None:
            kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
            noises.append(synthetic_noise(rng, length, kind, fs))
            names.append(f"synthetic:{kind}")
        else:
            x, name = noise_corpus.draw(rng, scene.split, length, tile=True)
            noises.append(x)
            names.append(name)
    prov["noises"] = names
    return speech, noises, prov
