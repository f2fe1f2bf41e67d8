"""Mask-driven statistical beamformers and the ideal-binary-mask oracle.

Array shapes:
    spectrogram X: (T, F, M)
    mask:          (T, F)
    cross-PSD:     (F, M, M)
    weights w:     (F, M), applied as ``w^H x``
"""
from __future__ import annotations

import numpy as np

from .dsp import ComplexSpectrogram
from .errors import DataError, NumericalError

__all__ = [
    "cross_psd",
    "snr_objective",
    "load_diagonal",
    "gev_weights",
    "align_reference_phase",
    "ban_postfilter",
    "mvdr_weights",
    "apply_fixed",
    "ibm_mask",
    "mask_enhance",
    "beamform_with_masks",
]

LOADING = 1e-6


def _spec(x) -> np.ndarray:
    return x.data if isinstance(x, ComplexSpectrogram) else np.asarray(x)


def cross_psd(spec, mask) -> np.ndarray:
    """Mask-weighted spatial covariance per frequency, normalized by ``1/T``.

    The normalization is by frame count, not by mask sum.
    """
    x = _spec(spec)
    mask = np.asarray(mask, dtype=np.float64)
    t = x.shape[0]
    if t == 0:
        raise DataError("cannot estimate statistics from zero frames")
    if mask.shape != x.shape[:2]:
        raise DataError(f"mask shape {mask.shape} does not match spectrogram {x.shape[:2]}")
    phi = np.einsum("tf,tfm,tfn->fmn", mask, x, x.conj(), optimize=True) / t
    # exact Hermitian symmetry
    return 0.5 * (phi + phi.conj().transpose(0, 2, 1))


def snr_objective(w: np.ndarray, phi_s: np.ndarray, phi_n: np.ndarray) -> float:
    """Rayleigh quotient ``w^H Phi_S w / w^H Phi_N w``."""
    w = np.asarray(w)
    num = np.real(np.vdot(w, phi_s @ w))
    den = np.real(np.vdot(w, phi_n @ w))
    if den == 0:
        raise NumericalError("degenerate noise statistics: w^H Phi_N w = 0")
    return float(num / den)


def load_diagonal(phi_n: np.ndarray, eps: float = LOADING) -> np.ndarray:
    """Add ``eps * tr(Phi)/M`` to each diagonal, frequency by frequency."""
    phi_n = np.asarray(phi_n)
    m = phi_n.shape[-1]
    tr = np.real(np.trace(phi_n, axis1=-2, axis2=-1))
    return phi_n + (eps * tr / m)[..., None, None] * np.eye(m)


def gev_weights(phi_s: np.ndarray, phi_n: np.ndarray, ref: int = 0) -> np.ndarray:
    """Principal generalized eigenvector of ``(Phi_S, Phi_N)`` per frequency.

    Phi_N is diagonally loaded, Cholesky-whitened, and the whitened problem
    is solved as a Hermitian eigenproblem. The result is unit-norm with the
    ``ref`` entry real and non-negative.
    """
    phi_s = np.asarray(phi_s)
    phi_n = load_diagonal(phi_n)
    try:
        chol = np.linalg.cholesky(phi_n)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("ill-conditioned noise statistics: Cholesky failed after loading") from exc
    # C = L^-1 Phi_S L^-H
    a = np.linalg.solve(chol, phi_s)
    c = np.linalg.solve(chol, a.conj().transpose(0, 2, 1)).conj().transpose(0, 2, 1)
    c = 0.5 * (c + c.conj().transpose(0, 2, 1))
    _, vecs = np.linalg.eigh(c)
    v = vecs[..., -1]
    # w = L^-H v
    w = np.linalg.solve(chol.conj().transpose(0, 2, 1), v[..., None])[..., 0]
    return _normalize_phase(w, ref)


def _normalize_phase(w: np.ndarray, ref: int) -> np.ndarray:
    w = w / np.linalg.norm(w, axis=-1, keepdims=True)
    r = w[..., ref]
    mag = np.abs(r)
    rot = np.where(mag > 0, mag / np.where(mag > 0, r, 1.0), 1.0)
    return w * rot[..., None]


def align_reference_phase(w: np.ndarray, phi_s: np.ndarray, ref: int = 0) -> np.ndarray:
    """Rotate each frequency's weights so ``w^H Phi_S u_ref`` is real and non-negative.

    GEV vectors are only defined up to a per-frequency phase. Fixing the
    reference entry's phase still leaves the speech response's phase varying
    across frequency, which smears the waveform. This rotation aligns the
    speech component with the reference channel instead.
    """
    w = np.asarray(w)
    resp = np.einsum("fm,fm->f", w.conj(), np.asarray(phi_s)[:, :, ref])
    mag = np.abs(resp)
    rot = np.where(mag > 0, resp / np.where(mag > 0, mag, 1.0), 1.0)
    return w * rot[:, None]


def ban_postfilter(w: np.ndarray, phi_n: np.ndarray) -> np.ndarray:
    """Blind analytic normalization gain ``sqrt(w^H Pn Pn w / M) / (w^H Pn w)``."""
    w = np.asarray(w)
    phi_n = np.asarray(phi_n)
    m = w.shape[-1]
    pw = np.einsum("fmn,fn->fm", phi_n, w)
    den = np.real(np.einsum("fm,fm->f", w.conj(), pw))
    num = np.real(np.einsum("fm,fm->f", pw.conj(), pw))
    if np.any(den == 0):
        raise NumericalError("w^H Phi_N w = 0 in postfilter")
    g = np.sqrt(num / m) / den
    return w * g[:, None]


def mvdr_weights(phi_s: np.ndarray, phi_n: np.ndarray, ref: int = 0,
                 tol: float = 1e-12) -> np.ndarray:
    """Steering-free MVDR, ``Phi_N^-1 Phi_S u / tr(Phi_N^-1 Phi_S)``.

    Frequencies without speech energy fall back to the reference selector.
    """
    phi_s = np.asarray(phi_s)
    phi_n = np.asarray(phi_n)
    f, m, _ = phi_s.shape
    if not 0 <= ref < m:
        raise DataError(f"reference channel {ref} out of range for M = {m}")
    loaded = load_diagonal(phi_n)
    try:
        np.linalg.cholesky(loaded)
        num = np.linalg.solve(loaded, phi_s)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular noise statistics after diagonal loading") from exc
    tr = np.trace(num, axis1=-2, axis2=-1)
    silent = ~(np.abs(tr) > tol)
    w = np.empty((f, m), dtype=np.complex128)
    ok = ~silent
    w[ok] = num[ok, :, ref] / tr[ok, None]
    w[silent] = 0.0
    w[silent, ref] = 1.0
    return w


def apply_fixed(w: np.ndarray, spec) -> np.ndarray:
    """Time-invariant filter-and-sum ``w^H(f) x(t,f)``, shape ``(T, F, 1)``."""
    x = _spec(spec)
    w = np.asarray(w)
    if w.shape != x.shape[1:]:
        raise DataError(f"weights {w.shape} do not match spectrogram (F, M) = {x.shape[1:]}")
    return np.einsum("fm,tfm->tf", w.conj(), x)[..., None]


def ibm_mask(clean_ref, noise_ref, theta: float = 1.0) -> np.ndarray:
    """Ideal binary mask: 1 where ``|S|^2 > theta |N|^2``."""
    s, n = _spec(clean_ref), _spec(noise_ref)
    if s.ndim == 3:
        s = s[..., 0]
    if n.ndim == 3:
        n = n[..., 0]
    if s.shape != n.shape:
        raise DataError(f"speech {s.shape} and noise {n.shape} spectrograms differ in shape")
    return (np.abs(s) ** 2 > theta * np.abs(n) ** 2).astype(np.float64)


def mask_enhance(mask, spec_ref) -> np.ndarray:
    x = _spec(spec_ref)
    mask = np.asarray(mask)
    if x.ndim == 3:
        if x.shape[-1] != 1:
            raise DataError("mask_enhance takes a single-channel spectrogram")
        mask = mask[..., None]
    if mask.shape != x.shape:
        raise DataError(f"mask shape {mask.shape} does not match spectrogram {x.shape}")
    return mask * x


def beamform_with_masks(spec, speech_mask, noise_mask, method: str = "mvdr",
                        ref: int = 0) -> np.ndarray:
    """Mask-driven beamforming of a ``(T, F, M)`` spectrogram to ``(T, F, 1)``.

    ``method`` is ``"mvdr"`` or ``"gev"`` (GEV, reference phase alignment and
    BAN gain).
    """
    x = _spec(spec)
    phi_s = cross_psd(x, speech_mask)
    phi_n = cross_psd(x, noise_mask)
    if method == "mvdr":
        w = mvdr_weights(phi_s, phi_n, ref)
    elif method == "gev":
        w = gev_weights(phi_s, phi_n, ref)
        w = ban_postfilter(align_reference_phase(w, phi_s, ref), phi_n)
    else:
        raise DataError(f"unknown beamformer {method!r}")
    return apply_fixed(w, x)
