"""VAD-gated correlation matrices and GEVD-based low-rank multichannel Wiener filters.

Everything works on stacks of per-bin matrices, shape ``(bins, C, C)``; a
single ``(C, C)`` matrix is accepted where noted.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "EstimationError",
    "CovarianceSet",
    "SpectralFilter",
    "GevdResult",
    "accumulate_covariances",
    "recursive_update",
    "RecursiveCovariances",
    "gevd",
    "gevd_mwf",
    "build_nr_filter",
    "build_nrext_filter",
    "IndependenceReport",
    "extended_model_covariances",
    "verify_aec_independence",
    "export_filter",
]

log = logging.getLogger(__name__)

LOADING = 1e-8


class EstimationError(ValueError):
    """Not enough frames in a VAD regime to estimate a full-rank matrix."""


def _herm(A: np.ndarray) -> np.ndarray:
    return np.swapaxes(A, -1, -2).conj()


@dataclass
class CovarianceSet:
    """Per-bin correlation matrices of the desired-active and desired-inactive regimes."""

    R_full: np.ndarray
    R_interf: np.ndarray
    n_full: int
    n_interf: int

    @property
    def n_channels(self) -> int:
        return self.R_full.shape[-1]


@dataclass
class GevdResult:
    """Generalized eigenpairs sorted by descending eigenvalue.

    ``X`` holds the eigenvectors (``X^H R_interf X = I``,
    ``X^H R_full X = diag(eigenvalues)``) and ``Q = X^{-H}`` so that
    ``R_full = Q diag(eigenvalues) Q^H`` and ``R_interf = Q Q^H``.
    """

    eigenvalues: np.ndarray
    X: np.ndarray
    Q: np.ndarray
    loaded: np.ndarray


@dataclass
class SpectralFilter:
    """Per-bin filter matrix ``W`` applied as ``W^H y``."""

    W: np.ndarray
    rank: int
    gevd: GevdResult | None = field(default=None, repr=False)

    @property
    def n_channels(self) -> int:
        return self.W.shape[-1]

    def apply_matrix(self) -> np.ndarray:
        """Gains as ``(bins, out, in)`` for the forward map ``y -> W^H y``."""
        return _herm(self.W)


def accumulate_covariances(frames: np.ndarray, frame_vad: np.ndarray,
                           full_regime: str = "desired") -> CovarianceSet:
    """Batch estimates ``R = mean_k y_k y_k^H`` per bin and VAD regime.

    Parameters
    ----------
    frames : ndarray, shape (K, bins, C)
    frame_vad : bool ndarray, shape (K,)
        True for frames where the desired component is active.
    full_regime : {"desired", "all"}
        Frames that enter ``R_full``: desired-active frames only, or all frames.
    """
    frame_vad = np.asarray(frame_vad, bool)
    K, _, C = frames.shape
    if frame_vad.shape != (K,):
        raise ValueError(f"frame_vad must have {K} entries, got {frame_vad.shape}")
    full_sel = frame_vad if full_regime == "desired" else np.ones(K, bool)
    if full_regime not in ("desired", "all"):
        raise ValueError("full_regime must be 'desired' or 'all'")
    interf_sel = ~frame_vad
    n_full, n_interf = int(full_sel.sum()), int(interf_sel.sum())
    for name, count in (("desired-active", n_full), ("desired-inactive", n_interf)):
        if count < C:
            raise EstimationError(f"{name} regime has {count} frames, need at least {C}")
    Yf = frames[full_sel]
    Yi = frames[interf_sel]
    R_full = np.einsum("kfc,kfd->fcd", Yf, Yf.conj()) / n_full
    R_interf = np.einsum("kfc,kfd->fcd", Yi, Yi.conj()) / n_interf
    return CovarianceSet(R_full=R_full, R_interf=R_interf, n_full=n_full, n_interf=n_interf)


def recursive_update(R_prev: np.ndarray, y: np.ndarray, weight: float = 0.995) -> np.ndarray:
    """Exponentially smoothed correlation: ``weight * R_prev + (1 - weight) y y^H``.

    ``y`` is ``(..., C)`` matching ``R_prev`` of shape ``(..., C, C)``.
    """
    y = np.asarray(y)
    return weight * R_prev + (1.0 - weight) * (y[..., :, None] * y[..., None, :].conj())


class RecursiveCovariances:
    """Running per-bin estimates, each frame routed to one regime by its VAD flag."""

    def __init__(self, n_bins: int, n_channels: int, weight: float = 0.995):
        self.weight = weight
        self.R_full = np.zeros((n_bins, n_channels, n_channels), complex)
        self.R_interf = np.zeros_like(self.R_full)
        self.n_full = 0
        self.n_interf = 0

    def update(self, y: np.ndarray, desired_active: bool):
        if desired_active:
            self.R_full = recursive_update(self.R_full, y, self.weight)
            self.n_full += 1
        else:
            self.R_interf = recursive_update(self.R_interf, y, self.weight)
            self.n_interf += 1

    @property
    def ready(self) -> bool:
        C = self.R_full.shape[-1]
        return self.n_full >= C and self.n_interf >= C

    def snapshot(self) -> CovarianceSet:
        return CovarianceSet(self.R_full.copy(), self.R_interf.copy(), self.n_full, self.n_interf)


def _load_singular(R: np.ndarray, R_ref: np.ndarray, rel: float = LOADING) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal loading ``rel * trace / C`` on (near-)singular Hermitian matrices.

    An all-zero matrix borrows the trace of ``R_ref`` (and 1 if that is zero
    as well) so the loading is on the scale of the data.
    """
    C = R.shape[-1]
    R = 0.5 * (R + _herm(R))
    tr = np.real(np.trace(R, axis1=-2, axis2=-1))
    lam_min = np.linalg.eigvalsh(R)[..., 0]
    singular = lam_min <= 10 * rel * np.maximum(tr, 0) / C
    if np.any(singular):
        idx = np.flatnonzero(singular)
        log.info("diagonal loading applied to %d singular interference matrices (first index %d)",
                 idx.size, idx[0])
        tr_ref = np.real(np.trace(R_ref, axis1=-2, axis2=-1))
        tiny = tr <= 1e-12 * np.maximum(tr_ref, 0)
        scale = np.where(tiny, tr_ref, tr)
        scale = np.where(scale > 0, scale, 1.0)
        R = R + (singular * rel * scale / C)[..., None, None] * np.eye(C)
    return R, singular


def gevd(R_full: np.ndarray, R_interf: np.ndarray) -> GevdResult:
    """Joint diagonalization of a Hermitian pencil via Cholesky whitening.

    Batched over leading axes. Eigenvalues are sorted in descending order
    (stable sort, so ties keep their original order).
    """
    R_full = 0.5 * (R_full + _herm(R_full))
    R_interf, loaded = _load_singular(R_interf, R_full)
    Lc = np.linalg.cholesky(R_interf)
    Li = np.linalg.inv(Lc)
    A = Li @ R_full @ _herm(Li)
    A = 0.5 * (A + _herm(A))
    sigma, U = np.linalg.eigh(A)
    order = np.argsort(-sigma, axis=-1, kind="stable")
    sigma = np.take_along_axis(sigma, order, axis=-1)
    U = np.take_along_axis(U, order[..., None, :], axis=-1)
    X = _herm(Li) @ U
    Q = Lc @ U
    return GevdResult(eigenvalues=sigma, X=X, Q=Q, loaded=loaded)


def gevd_mwf(R_full: np.ndarray, R_interf: np.ndarray, rank: int) -> SpectralFilter:
    """Rank-constrained MWF ``W = R_full^{-1} R_d`` with ``R_d`` from the GEVD.

    ``R_d = Q diag(max(sigma_i - 1, 0))_{i < rank} Q^H``; in the whitened
    basis the interference eigenvalues are 1, so this is the clamped
    difference of the two pencils' eigenvalues. The filter evaluates to
    ``X diag(d_i / sigma_i) Q^H``.
    """
    single = R_full.ndim == 2
    if single:
        R_full, R_interf = R_full[None], R_interf[None]
    C = R_full.shape[-1]
    if not 1 <= rank <= C:
        raise ValueError(f"rank must be in 1..{C}, got {rank}")
    res = gevd(R_full, R_interf)
    sigma = res.eigenvalues
    d = np.maximum(sigma - 1.0, 0.0)
    d[..., rank:] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(sigma > 0, d / sigma, 0.0)
    W = (res.X * gain[..., None, :]) @ _herm(res.Q)
    if single:
        W = W[0]
        res = GevdResult(res.eigenvalues[0], res.X[0], res.Q[0], res.loaded[0])
    return SpectralFilter(W=W, rank=rank, gevd=res)


def build_nr_filter(cov_mics: CovarianceSet, rank: int = 1) -> SpectralFilter:
    """Microphone-only MWF, rank 1 (one desired talker)."""
    return gevd_mwf(cov_mics.R_full, cov_mics.R_interf, rank)


def build_nrext_filter(cov_ext: CovarianceSet, rank: int | None = None, n_loudspeakers: int = 2) -> SpectralFilter:
    """MWF on stacked microphones and loudspeakers.

    The desired part is near-end speech plus the far-end speech echo, so the
    default rank is ``1 + n_loudspeakers``.
    """
    rank = 1 + n_loudspeakers if rank is None else rank
    return gevd_mwf(cov_ext.R_full, cov_ext.R_interf, rank)


def export_filter(filt: SpectralFilter, stem) -> Path:
    """Dump ``W`` to ``<stem>.npy`` and per-bin generalized eigenvalues to ``<stem>.csv``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    np.save(stem.with_suffix(".npy"), filt.W)
    path = stem.with_suffix(".csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        C = filt.n_channels
        writer.writerow(["bin", "rank", "loaded"] + [f"sigma_{i}" for i in range(C)])
        if filt.gevd is not None:
            sig = np.atleast_2d(filt.gevd.eigenvalues)
            loaded = np.atleast_1d(filt.gevd.loaded)
            for f in range(sig.shape[0]):
                writer.writerow([f, filt.rank, int(loaded[f])] + [f"{v:.9e}" for v in sig[f]])
    return path


# --- analytic check of the AEC-independence identities --------------------------

@dataclass
class IndependenceReport:
    """Relative errors of the three identities; ``passed`` if all are below ``tol``."""

    err_ll: float
    err_lm: float
    err_aec: float
    tol: float
    W_aec: np.ndarray
    W_aec_expected: np.ndarray

    @property
    def passed(self) -> bool:
        return max(self.err_ll, self.err_lm, self.err_aec) < self.tol

    def __str__(self):
        status = "ok" if self.passed else "VIOLATED"
        lines = [f"AEC independence identities ({status}, tol={self.tol:.0e})",
                 f"  R_l**l** = R_lsls R_ll^-1 R_lsls          rel. err {self.err_ll:.3e}",
                 f"  R_l**m** = R_lsls R_ll^-1 R_lses          rel. err {self.err_lm:.3e}",
                 f"  R_l**l**^-1 R_l**m** = R_lsls^-1 R_lses   rel. err {self.err_aec:.3e}"]
        if not self.passed:
            lines.append("  difference of AEC filters:")
            lines.append(np.array2string(self.W_aec - self.W_aec_expected, precision=3))
        return "\n".join(lines)


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def extended_model_covariances(R_ss, R_nn, R_lsls, R_lnln, H):
    """Correlation matrices of the stacked model with echo ``e = H l``.

    Returns ``(R_mm_tilde, R_desired)`` where the desired part is the near-end
    speech plus the far-end speech echo (with its loudspeaker rows).
    """
    R_ll = R_lsls + R_lnln
    top = R_ss + R_nn + H @ R_ll @ _herm(H)
    R_mt = np.block([[top, H @ R_ll], [R_ll @ _herm(H), R_ll]])
    R_d = np.block([[R_ss + H @ R_lsls @ _herm(H), H @ R_lsls], [R_lsls @ _herm(H), R_lsls]])
    return R_mt, R_d


def verify_aec_independence(R_ss, R_nn, R_lsls, R_lnln, H, tol: float = 1e-8) -> IndependenceReport:
    """Check that the AEC after the extended MWF equals the plain echo-path estimate.

    The extended filter ``W = R_mm~^{-1} R_d`` is built from the generative
    model, the post-filter statistics ``W^H R_mm~ W`` are split into
    loudspeaker/microphone blocks, and the blocks are compared with the
    closed forms ``R_lsls R_ll^{-1} R_lsls`` and ``R_lsls R_ll^{-1} R_lses``.
    The resulting AEC filter is compared with ``R_lsls^{-1} R_lses``.

    Parameters
    ----------
    R_ss, R_nn : (M, M) near-end speech and noise correlations
    R_lsls, R_lnln : (L, L) far-end speech and noise correlations in the loudspeakers
    H : (M, L) echo paths, ``e = H l``
    """
    M = R_ss.shape[0]
    R_ll = R_lsls + R_lnln
    R_lses = R_lsls @ _herm(H)
    R_mt, R_d = extended_model_covariances(R_ss, R_nn, R_lsls, R_lnln, H)
    W = np.linalg.solve(R_mt, R_d)
    R_post = _herm(W) @ R_mt @ W
    R_ll_post = R_post[M:, M:]
    R_lm_post = R_post[M:, :M]

    R_ll_inv = np.linalg.inv(R_ll)
    exp_ll = R_lsls @ R_ll_inv @ R_lsls
    exp_lm = R_lsls @ R_ll_inv @ R_lses
    W_aec = np.linalg.solve(R_ll_post, R_lm_post)
    W_aec_exp = np.linalg.solve(R_lsls, R_lses)
    return IndependenceReport(err_ll=_rel(R_ll_post, exp_ll), err_lm=_rel(R_lm_post, exp_lm),
                              err_aec=_rel(W_aec, W_aec_exp), tol=tol, W_aec=W_aec,
                              W_aec_expected=W_aec_exp)
