"""Image-source room simulation, source rendering, SNR mixing and scene sampling."""
from __future__ import annotations

import functools
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal

from .dsp import MultichannelWave
from .errors import DataError

__all__ = [
    "RoomSpec",
    "ArrayGeometry",
    "SourceTrack",
    "Scene",
    "linear_array",
    "absorption_from_t60",
    "rir_image_source",
    "render_static",
    "render_moving",
    "block_positions",
    "mix_at_snr",
    "sample_scene",
    "synthesize_example",
]

DIMS_RANGE = ((3.0, 10.0), (3.0, 8.0), (2.5, 6.0))
T60_RANGE = (0.2, 0.8)
VELOCITY_RANGE = (0.1, 3.0)
SNR_MEAN_DB = 5.0
SNR_STD_DB = 5.0
NUM_MICS = 6
APERTURE = 0.30
WALL_MARGIN = 0.5
MIN_SOURCE_ARRAY_DISTANCE = 0.5
# keeps trajectories off the walls; also bounds how close a moving source gets
TRACK_MARGIN = 0.2
MOVING_BLOCK = 512
FD_TAPS = 8
# image orders implied by 1.5*T60 run into the hundreds; total reflections are capped
DEFAULT_MAX_ORDER_CAP = 20
MAX_PLACEMENT_TRIES = 200
SPLITS = {"train": 0, "val": 1, "test": 2}
DATASETS = ("anechoic", "reverb")


@dataclass(frozen=True)
class RoomSpec:
    dims: tuple[float, float, float]
    t60: float = 0.0
    speed_of_sound: float = 343.0

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != 3 or min(dims) <= 0:
            raise DataError(f"room dims must be three positive lengths, got {self.dims}")
        if self.t60 < 0:
            raise DataError("t60 must be >= 0")
        object.__setattr__(self, "dims", dims)

    @property
    def volume(self) -> float:
        lx, ly, lz = self.dims
        return lx * ly * lz

    @property
    def surface(self) -> float:
        lx, ly, lz = self.dims
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    def contains(self, p, margin: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p > margin) and np.all(p < np.asarray(self.dims) - margin))


@dataclass(frozen=True)
class ArrayGeometry:
    mic_positions: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.mic_positions, dtype=np.float64))
        if pos.shape[1] != 3:
            raise DataError("microphone positions must be 3-D points")
        object.__setattr__(self, "mic_positions", pos)

    @property
    def num_mics(self) -> int:
        return self.mic_positions.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.mic_positions.mean(axis=0)


def linear_array(center, azimuth: float = 0.0, num_mics: int = NUM_MICS,
                 aperture: float = APERTURE) -> ArrayGeometry:
    """Uniform linear array in the horizontal plane."""
    offsets = np.linspace(-aperture / 2, aperture / 2, num_mics) if num_mics > 1 else np.zeros(1)
    axis = np.array([math.cos(azimuth), math.sin(azimuth), 0.0])
    return ArrayGeometry(np.asarray(center, dtype=float)[None, :] + offsets[:, None] * axis)


@dataclass(frozen=True)
class SourceTrack:
    start: tuple[float, float, float]
    velocity: float = 0.0
    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    moving: bool = False

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        d = np.asarray(self.direction, dtype=float)
        norm = np.linalg.norm(d)
        if norm == 0:
            raise DataError("track direction must be nonzero")
        object.__setattr__(self, "direction", tuple(float(v) for v in d / norm))
        if self.velocity < 0:
            raise DataError("velocity must be >= 0")

    def position(self, t, room: RoomSpec, margin: float = TRACK_MARGIN) -> np.ndarray:
        """Positions at times ``t`` (seconds), folded back into the room by specular reflection."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        start = np.asarray(self.start)
        lo = margin
        hi = np.asarray(room.dims) - margin
        if np.any(start < lo) or np.any(start > hi):
            raise DataError(f"track start {self.start} is outside the room interior")
        if not self.moving or self.velocity == 0.0:
            return np.repeat(start[None, :], len(t), axis=0)
        raw = start + self.velocity * t[:, None] * np.asarray(self.direction)
        width = hi - lo
        u = np.mod(raw - lo, 2.0 * width)
        pos = lo + np.where(u <= width, u, 2.0 * width - u)
        if np.any(pos < lo - 1e-9) or np.any(pos > hi + 1e-9):
            raise DataError("trajectory left the room after reflection")
        return pos


@dataclass(frozen=True)
class Scene:
    room: RoomSpec
    array: ArrayGeometry
    speech: SourceTrack
    noises: tuple[SourceTrack, ...]
    snr_db: float
    seed: int
    dataset: str = "anechoic"
    split: str = "train"
    index: int = 0
    moving: bool = False

    def __post_init__(self):
        if not 1 <= len(self.noises) <= 3:
            raise DataError(f"a scene holds 1-3 noise sources, got {len(self.noises)}")
        object.__setattr__(self, "noises", tuple(self.noises))

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "split": self.split,
            "index": self.index,
            "seed": self.seed,
            "room": {"dims": list(self.room.dims), "t60": self.room.t60,
                     "speed_of_sound": self.room.speed_of_sound},
            "mic_positions": self.array.mic_positions.tolist(),
            "moving": self.moving,
            "speech": _track_dict(self.speech),
            "noises": [_track_dict(n) for n in self.noises],
            "snr_db": self.snr_db,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(
            room=RoomSpec(tuple(d["room"]["dims"]), d["room"]["t60"], d["room"].get("speed_of_sound", 343.0)),
            array=ArrayGeometry(np.asarray(d["mic_positions"])),
            speech=SourceTrack(**d["speech"]),
            noises=tuple(SourceTrack(**n) for n in d["noises"]),
            snr_db=float(d["snr_db"]),
            seed=int(d["seed"]),
            dataset=d.get("dataset", "anechoic"),
            split=d.get("split", "train"),
            index=int(d.get("index", 0)),
            moving=bool(d.get("moving", False)),
        )


def _track_dict(track: SourceTrack) -> dict:
    d = asdict(track)
    d["start"] = list(d["start"])
    d["direction"] = list(d["direction"])
    return d


# ---------------------------------------------------------------------------
# Image-source impulse responses
# ---------------------------------------------------------------------------


def absorption_from_t60(room: RoomSpec) -> np.ndarray:
    """Uniform wall absorption from Sabine's formula, one value per surface."""
    if room.t60 <= 0:
        raise DataError("absorption needs t60 > 0; t60 = 0 is the anechoic case")
    alpha = 0.161 * room.volume / (room.t60 * room.surface)
    if not 0.0 < alpha < 1.0:
        warnings.warn(f"Sabine absorption {alpha:.3f} outside (0, 1); clamped", RuntimeWarning)
        alpha = min(max(alpha, 1e-6), 1.0 - 1e-6)
    return np.full(6, alpha)


def default_max_order(room: RoomSpec, cap: int = DEFAULT_MAX_ORDER_CAP) -> int:
    """Reflection order needed for paths of 1.5*T60, limited to ``cap``."""
    if room.t60 == 0:
        return 0
    path = 1.5 * room.t60 * room.speed_of_sound
    needed = math.ceil(path * sum(1.0 / d for d in room.dims))
    return min(needed, cap)


@functools.lru_cache(maxsize=8)
def _image_table(max_order: int):
    """Per-image (n, q) indices for each axis and total reflection counts."""
    n = np.arange(-max_order, max_order + 1)
    nq = np.array([(a, q) for a in n for q in (0, 1)])
    refl = np.abs(nq[:, 0] - nq[:, 1]) + np.abs(nq[:, 0])
    keep = refl <= max_order
    nq, refl = nq[keep], refl[keep]
    ix, iy, iz = np.meshgrid(*(np.arange(len(nq)),) * 3, indexing="ij")
    total = refl[ix] + refl[iy] + refl[iz]
    sel = total <= max_order
    idx = np.stack([ix[sel], iy[sel], iz[sel]], axis=1)
    n_idx = nq[idx, 0].astype(float)
    q_idx = nq[idx, 1].astype(float)
    return n_idx, q_idx, total[sel]


def image_sources(room: RoomSpec, src, max_order: int):
    n_idx, q_idx, refl = _image_table(max_order)
    src = np.asarray(src, dtype=float)
    dims = np.asarray(room.dims)
    pos = (1.0 - 2.0 * q_idx) * src + 2.0 * n_idx * dims
    return pos, refl


FD_RESOLUTION = 2048


@functools.lru_cache(maxsize=1)
def _fd_table() -> np.ndarray:
    """Hann-windowed sinc taps for fractional delays ``k / FD_RESOLUTION``."""
    half = FD_TAPS // 2
    frac = np.arange(FD_RESOLUTION + 1) / FD_RESOLUTION
    x = np.arange(-half + 1, half + 1)[None, :] - frac[:, None]
    return np.sinc(x) * 0.5 * (1.0 + np.cos(np.pi * x / half))


def _fractional_delay_taps(delay: np.ndarray):
    """8-tap kernels (tap indices, weights) placing an impulse at each ``delay``.

    The fractional part is quantized to 1/2048 sample.
    """
    half = FD_TAPS // 2
    base = np.floor(delay)
    q = np.rint((delay - base) * FD_RESOLUTION).astype(np.int64)
    idx = base.astype(np.int64)[..., None] + np.arange(-half + 1, half + 1)
    return idx, _fd_table()[q]


def rir_image_source(room: RoomSpec, src, array: ArrayGeometry, fs: int = 16000,
                     max_order: int | None = None, rir_len: int | None = None) -> np.ndarray:
    """Allen-Berkley image-source impulse responses, shape ``(M, rir_len)``.

    Each image contributes ``beta**reflections / (4 pi d)`` at delay ``d / c``,
    placed with a windowed-sinc fractional-delay kernel. An anechoic room
    (``t60 == 0``) only has the direct path.
    """
    if not room.contains(src):
        raise DataError(f"source {src} is outside the room")
    for p in array.mic_positions:
        if not room.contains(p):
            raise DataError(f"microphone {p} is outside the room")
    if room.t60 == 0:
        max_order, beta = 0, 0.0
    else:
        if max_order is None:
            max_order = default_max_order(room)
        if max_order < 0:
            raise DataError("max_order must be >= 0")
        beta = math.sqrt(1.0 - absorption_from_t60(room)[0])

    images, refl = image_sources(room, src, max_order)
    gains = beta ** refl if max_order > 0 else np.ones(len(refl))
    mics = array.mic_positions
    dist = np.linalg.norm(images[None, :, :] - mics[:, None, :], axis=-1)
    if np.any(dist == 0):
        raise DataError("source coincides with a microphone")
    delay = dist / room.speed_of_sound * fs
    amp = gains[None, :] / (4.0 * np.pi * dist)
    idx, w = _fractional_delay_taps(delay)
    if rir_len is None:
        rir_len = int(idx.max()) + 1

    out = np.zeros((array.num_mics, rir_len))
    for m in range(array.num_mics):
        i = idx[m].ravel()
        v = (w[m] * amp[m][:, None]).ravel()
        ok = (i >= 0) & (i < rir_len)
        out[m] = np.bincount(i[ok], weights=v[ok], minlength=rir_len)
    return out


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _as_mono(x) -> np.ndarray:
    if isinstance(x, MultichannelWave):
        if x.num_channels != 1:
            raise DataError("source waveform must be single-channel")
        return x.samples[0]
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 1:
        raise DataError(f"source waveform must be 1-D, got shape {x.shape}")
    return x


def render_static(src_wave, rirs: np.ndarray, fs: int = 16000) -> MultichannelWave:
    """Per-channel linear convolution, truncated to the source length."""
    x = _as_mono(src_wave)
    rirs = np.atleast_2d(np.asarray(rirs, dtype=np.float64))
    if x.size == 0 or rirs.size == 0:
        raise DataError("empty source or impulse response")
    y = signal.convolve(x[None, :], rirs, mode="full")
    return MultichannelWave(y[:, :len(x)], fs)


def block_positions(track: SourceTrack, room: RoomSpec, length: int, fs: int = 16000,
                    block: int = MOVING_BLOCK) -> tuple[np.ndarray, np.ndarray]:
    """Block-center sample indices and the source position at each."""
    nb = -(-length // block)
    centers = np.arange(nb) * block + block / 2.0
    return centers, track.position(centers / fs, room)


def render_moving(src_wave, track: SourceTrack, room: RoomSpec, array: ArrayGeometry,
                  fs: int = 16000, block: int = MOVING_BLOCK,
                  max_order: int | None = None) -> MultichannelWave:
    """Render a moving source by crossfading blockwise static renderings.

    The source is split by triangular windows of length ``2*block`` centred on
    each block (50% overlap, summing to one); each windowed piece is convolved
    with the impulse response at that block's centre position.
    """
    x = _as_mono(src_wave)
    length = len(x)
    if length == 0:
        raise DataError("empty source")
    centers, positions = block_positions(track, room, length, fs, block)
    if np.all(positions == positions[0]):
        return render_static(x, rir_image_source(room, positions[0], array, fs, max_order), fs)

    rirs = [rir_image_source(room, p, array, fs, max_order) for p in positions]
    n = np.arange(length)
    y = np.zeros((array.num_mics, length))
    last = len(centers) - 1
    for k, (c, h) in enumerate(zip(centers, rirs)):
        lo = max(0, int(math.floor(c - block)) + 1)
        hi = min(length, int(math.ceil(c + block)))
        seg = n[lo:hi]
        w = np.clip(1.0 - np.abs(seg - c) / block, 0.0, 1.0)
        if k == 0:
            w[seg <= c] = 1.0
        if k == last:
            w[seg >= c] = 1.0
        if hi <= lo:
            continue
        piece = signal.convolve(x[None, lo:hi] * w, h, mode="full")
        end = min(length, lo + piece.shape[1])
        y[:, lo:end] += piece[:, :end - lo]
    return MultichannelWave(y, fs)


def render_track(src_wave, track: SourceTrack, room: RoomSpec, array: ArrayGeometry,
                 fs: int = 16000, max_order: int | None = None) -> MultichannelWave:
    if track.moving:
        return render_moving(src_wave, track, room, array, fs, max_order=max_order)
    rirs = rir_image_source(room, track.start, array, fs, max_order)
    return render_static(src_wave, rirs, fs)


# ---------------------------------------------------------------------------
# Mixing
# ---------------------------------------------------------------------------


def mix_at_snr(speech_mc: MultichannelWave, noises_mc, snr_db: float,
               ref_channel: int = 0) -> tuple[MultichannelWave, np.ndarray]:
    """Add the summed noises, scaled by one scalar, at ``snr_db`` measured on ``ref_channel``.

    Returns the mixture and the reverberant speech at the reference channel.
    """
    if not noises_mc:
        raise DataError("at least one noise signal is required")
    s = speech_mc.samples
    noise = np.zeros_like(s)
    for nz in noises_mc:
        if nz.samples.shape != s.shape:
            raise DataError(f"noise shape {nz.samples.shape} != speech shape {s.shape}")
        noise = noise + nz.samples
    p_s = np.mean(s[ref_channel] ** 2)
    p_n = np.mean(noise[ref_channel] ** 2)
    if p_s == 0 or p_n == 0:
        raise DataError("zero-power speech or noise at the reference channel")
    gain = math.sqrt(p_s / (p_n * 10.0 ** (snr_db / 10.0)))
    mixture = MultichannelWave(s + gain * noise, speech_mc.sample_rate)
    return mixture, s[ref_channel].copy()


# ---------------------------------------------------------------------------
# Scene sampling
# ---------------------------------------------------------------------------


def scene_rng(seed: int, split: str, index: int) -> np.random.Generator:
    if split not in SPLITS:
        raise DataError(f"unknown split {split!r}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), SPLITS[split], int(index)]))


def sample_scene(seed: int, dataset: str, split: str, index: int = 0, *,
                 moving: bool | None = None, snr_db: float | None = None,
                 num_mics: int = NUM_MICS) -> Scene:
    """Draw a random scene; deterministic in ``(seed, split, index)``."""
    if dataset not in DATASETS:
        raise DataError(f"unknown dataset {dataset!r}")
    rng = scene_rng(seed, split, index)
    dims = tuple(float(rng.uniform(lo, hi)) for lo, hi in DIMS_RANGE)
    t60 = 0.0 if dataset == "anechoic" else float(rng.uniform(*T60_RANGE))
    room = RoomSpec(dims, t60)

    azimuth = float(rng.uniform(0.0, np.pi))
    xy_margin = WALL_MARGIN + APERTURE / 2
    center = np.array([
        rng.uniform(xy_margin, dims[0] - xy_margin),
        rng.uniform(xy_margin, dims[1] - xy_margin),
        rng.uniform(WALL_MARGIN, dims[2] - WALL_MARGIN),
    ])
    array = linear_array(center, azimuth, num_mics)

    is_moving = bool(rng.random() < 0.5) if moving is None else bool(moving)
    n_noises = int(rng.integers(1, 4))
    tracks = [_sample_track(rng, room, array, is_moving) for _ in range(1 + n_noises)]
    snr = float(rng.normal(SNR_MEAN_DB, SNR_STD_DB)) if snr_db is None else float(snr_db)
    source_seed = int(rng.integers(0, 2**31 - 1))
    return Scene(room, array, tracks[0], tuple(tracks[1:]), snr, source_seed,
                 dataset, split, int(index), is_moving)


def _sample_track(rng, room: RoomSpec, array: ArrayGeometry, moving: bool) -> SourceTrack:
    dims = np.asarray(room.dims)
    for _ in range(MAX_PLACEMENT_TRIES):
        p = rng.uniform(WALL_MARGIN, dims - WALL_MARGIN)
        if np.linalg.norm(p - array.center) >= MIN_SOURCE_ARRAY_DISTANCE:
            break
    else:
        raise DataError("could not place a source away from the array")
    if not moving:
        return SourceTrack(tuple(p), 0.0, (1.0, 0.0, 0.0), False)
    v = float(rng.uniform(*VELOCITY_RANGE))
    phi = rng.uniform(0.0, 2.0 * np.pi)
    return SourceTrack(tuple(p), v, (math.cos(phi), math.sin(phi), 0.0), True)


def synthesize_example(scene: Scene, speech_wave, noise_waves, fs: int = 16000,
                       max_order: int | None = None) -> tuple[MultichannelWave, np.ndarray]:
    """Render speech and noises for ``scene`` and mix them at ``scene.snr_db``."""
    if len(noise_waves) != len(scene.noises):
        raise DataError(f"scene has {len(scene.noises)} noise tracks, got {len(noise_waves)} waves")
    speech = render_track(speech_wave, scene.speech, scene.room, scene.array, fs, max_order)
    noises = [render_track(w, tr, scene.room, scene.array, fs, max_order)
              for w, tr in zip(noise_waves, scene.noises)]
    return mix_at_snr(speech, noises, scene.snr_db, ref_channel=0)
