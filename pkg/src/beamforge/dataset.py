"""Scene synthesis to memory or disk, and reading simulated datasets back.

On-disk layout::

    <root>/manifest.jsonl
    <root>/<split>/scene_<idx>/mixture.wav
    <root>/<split>/scene_<idx>/reference.wav
    <root>/<split>/scene_<idx>/scene.json

Each manifest line is the scene record plus relative file paths and the
source provenance.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import MultichannelWave, StftConfig, stft
from .errors import DataError
from .metrics import EvalItem
from .room import NUM_MICS, SPLITS, Scene, sample_scene, synthesize_example
from .sources import Corpus, draw_sources
from .wavio import read_wav, write_wav

MANIFEST = "manifest.jsonl"


@dataclass
class Example:
    scene: Scene
    mixture: MultichannelWave
    reference: np.ndarray
    provenance: dict


def synthesize_scene(seed: int, dataset: str, split: str, index: int, length: int, *,
                     speech_corpus: Corpus | None = None, noise_corpus: Corpus | None = None,
                     snr_db: float | None = None, moving: bool | None = None,
                     num_mics: int = NUM_MICS, max_order: int | None = None,
                     fs: int = 16000) -> Example:
    """Sample scene ``(seed, split, index)`` and render ``length`` samples of it."""
    scene = sample_scene(seed, dataset, split, index, moving=moving, snr_db=snr_db, num_mics=num_mics)
    speech, noises, prov = draw_sources(scene, length, speech_corpus, noise_corpus, fs)
    mixture, ref = synthesize_example(scene, speech, noises, fs, max_order)
    return Example(scene, mixture, ref, prov)


def example_spectra(example: Example, cfg: StftConfig | None = None):
    """``(X, S_R)``: mixture spectrogram ``(T, F, M)`` and reference ``(T, F)``."""
    cfg = cfg or StftConfig()
    x = stft(example.mixture, cfg).data
    s = stft(MultichannelWave(example.reference, example.mixture.sample_rate), cfg).data[..., 0]
    return x, s


def scene_dir(split: str, index: int) -> str:
    return f"{split}/scene_{index:05d}"


def simulate_dataset(root: str | os.PathLike, *, seed: int, dataset: str,
                     counts: dict[str, int], length: int,
                     snr_list: list[float] | None = None, moving: bool | None = None,
                     speech_corpus: Corpus | None = None, noise_corpus: Corpus | None = None,
                     num_mics: int = NUM_MICS, max_order: int | None = None,
                     workers: int = 1, wav_format: str = "float32",
                     extra: dict | None = None) -> Path:
    """Write ``counts[split]`` scenes per split and return the manifest path.

    With ``snr_list`` the scene SNRs cycle through the list by index instead
    of being drawn. Output bytes depend only on the arguments.
    """
    root = Path(root)
    for split in counts:
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}")
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {root}: {exc}") from exc

    jobs = [(split, i) for split in SPLITS if split in counts for i in range(int(counts[split]))]

    def run(job):
        split, i = job
        snr = None if not snr_list else float(snr_list[i % len(snr_list)])
        ex = synthesize_scene(seed, dataset, split, i, length, speech_corpus=speech_corpus,
                              noise_corpus=noise_corpus, snr_db=snr, moving=moving,
                              num_mics=num_mics, max_order=max_order)
        rel = scene_dir(split, i)
        d = root / rel
        d.mkdir(parents=True, exist_ok=True)
        write_wav(d / "mixture.wav", ex.mixture, wav_format)
        write_wav(d / "reference.wav", MultichannelWave(ex.reference, ex.mixture.sample_rate), wav_format)
        record = ex.scene.to_dict()
        record.update({
            "id": rel,
            "mixture": f"{rel}/mixture.wav",
            "reference": f"{rel}/reference.wav",
            "sources": ex.provenance,
            "length": length,
        })
        if extra:
            record["config"] = extra
        with open(d / "scene.json", "w") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
        return record

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(run, jobs))
    else:
        records = [run(j) for j in jobs]

    manifest = root / MANIFEST
    with open(manifest, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def resolve_manifest(path: str | os.PathLike) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST
    if not p.is_file():
        raise DataError(f"manifest {p} not found")
    return p


def load_manifest(path: str | os.PathLike, split: str | None = None) -> list[dict]:
    p = resolve_manifest(path)
    records = []
    with open(p) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{p}:{n}: invalid JSON") from exc
            for key in ("id", "mixture", "reference"):
                if key not in rec:
                    raise DataError(f"{p}:{n}: record lacks {key!r}")
            if split is None or rec.get("split") == split:
                records.append(rec)
    return records


def load_eval_items(path: str | os.PathLike, split: str | None = None,
                    snr_db: float | None = None) -> list[EvalItem]:
    """Read every scene of a manifest (optionally one split / SNR) as ``EvalItem``s."""
    root = resolve_manifest(path).parent
    items = []
    for rec in load_manifest(path, split):
        if snr_db is not None and abs(float(rec["snr_db"]) - snr_db) > 1e-9:
            continue
        mix = read_wav(root / rec["mixture"])
        ref = read_wav(root / rec["reference"])
        if ref.length != mix.length:
            raise DataError(f"{rec['id']}: reference and mixture lengths differ")
        items.append(EvalItem(rec["id"], mix.samples, ref.samples[0], rec, mix.sample_rate))
    return items
