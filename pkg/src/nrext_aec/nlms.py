"""Multichannel time-domain NLMS echo canceller with VAD gating and tap masking.

The taps of all loudspeakers are adapted jointly: the step is normalized by
the energy of the full stacked regressor. Taps at index ``>= active_taps``
are held at zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy import signal as sps

__all__ = [
    "NlmsConfig",
    "NlmsState",
    "NlmsResult",
    "nlms_step",
    "nlms_filter",
    "apply_fir",
    "misalignment_db",
    "export_taps",
]


@dataclass(frozen=True)
class NlmsConfig:
    taps: int
    step_size: float = 0.1
    regularization: float = 1e-6
    active_taps: int | None = None

    def __post_init__(self):
        if self.taps < 1:
            raise ValueError(f"number of AEC taps must be >= 1, got {self.taps}")
        if not 0 < self.step_size <= 2:
            raise ValueError("step_size must lie in (0, 2]")
        if self.regularization <= 0:
            raise ValueError("regularization must be > 0")
        if self.active_taps is not None and not 1 <= self.active_taps <= self.taps:
            raise ValueError("active_taps must lie in 1..taps")

    @property
    def n_active(self) -> int:
        return self.taps if self.active_taps is None else self.active_taps


@dataclass
class NlmsState:
    """Taps ``w`` of shape ``(L, taps)`` and delay lines (newest sample first)."""

    w: np.ndarray
    delay_line: np.ndarray
    n_samples: int = 0

    @classmethod
    def zeros(cls, n_loudspeakers: int, cfg: NlmsConfig) -> "NlmsState":
        return cls(w=np.zeros((n_loudspeakers, cfg.taps)),
                   delay_line=np.zeros((n_loudspeakers, cfg.taps)))


@dataclass
class NlmsResult:
    error: np.ndarray | None
    w: np.ndarray
    shadow_error: np.ndarray | None = None


def nlms_step(state: NlmsState, x: np.ndarray, d: float, gate: bool,
              cfg: NlmsConfig) -> tuple[NlmsState, float]:
    """One sample of the canceller; returns the new state and the a-priori error.

    Reference implementation for the compiled :func:`nlms_filter`.
    """
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(x)) and np.isfinite(d)):
        raise FloatingPointError(f"non-finite input at sample {state.n_samples}")
    u = np.roll(state.delay_line, 1, axis=1)
    u[:, 0] = x
    e = d - float(np.sum(state.w * u))
    w = state.w
    if gate:
        w = w + cfg.step_size * e * u / (np.sum(u * u) + cfg.regularization)
        w[:, cfg.n_active:] = 0.0
    return NlmsState(w=w, delay_line=u, n_samples=state.n_samples + 1), e


@numba.njit(cache=True)
def _nlms_kernel(x, d, gate, w, mu, delta, active, shadow_x, shadow_d, want_error):
    L, T = x.shape
    taps = w.shape[1]
    S = shadow_d.shape[0]
    pad = taps - 1
    xp = np.zeros((L, T + pad))
    xp[:, pad:] = x
    sxp = np.zeros((S, L, T + pad))
    if S > 0:
        sxp[:, :, pad:] = shadow_x
    err = np.zeros(T if want_error else 0)
    serr = np.zeros((S, T))
    energy = 0.0
    for t in range(T):
        base = t + pad
        if t % taps == 0:
            energy = 0.0
            for l in range(L):
                for k in range(taps):
                    v = xp[l, base - k]
                    energy += v * v
        else:
            for l in range(L):
                v_new = xp[l, base]
                v_old = xp[l, base - taps]
                energy += v_new * v_new - v_old * v_old
            if energy < 0.0:
                energy = 0.0
        for s in range(S):
            acc = 0.0
            for l in range(L):
                for k in range(active):
                    acc += w[l, k] * sxp[s, l, base - k]
            serr[s, t] = shadow_d[s, t] - acc
        if not (gate[t] or want_error):
            continue
        y = 0.0
        for l in range(L):
            for k in range(active):
                y += w[l, k] * xp[l, base - k]
        e = d[t] - y
        if want_error:
            err[t] = e
        if gate[t]:
            g = mu * e / (energy + delta)
            for l in range(L):
                for k in range(active):
                    w[l, k] += g * xp[l, base - k]
    return err, serr


def nlms_filter(x: np.ndarray, d: np.ndarray, gate: np.ndarray, cfg: NlmsConfig,
                w0: np.ndarray | None = None, shadows: tuple[np.ndarray, np.ndarray] | None = None,
                want_error: bool = True) -> NlmsResult:
    """Run the canceller over whole signals.

    Parameters
    ----------
    x : ndarray, shape (L, T)
        Loudspeaker (regressor) signals.
    d : ndarray, shape (T,)
        Desired signal (microphone or filtered reference channel).
    gate : bool ndarray, shape (T,)
        Adapt only where True.
    w0 : ndarray, shape (L, taps), optional
        Initial taps, zero by default.
    shadows : (shadow_x, shadow_d), optional
        Components ``(S, L, T)`` and ``(S, T)`` passed through the running
        canceller with the same a-priori taps as the mixture.
    want_error : bool
        If False only the final taps are computed and ungated samples are
        skipped.
    """
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=float)
    d = np.ascontiguousarray(d, dtype=float)
    gate = np.ascontiguousarray(gate, dtype=np.bool_)
    L, T = x.shape
    if d.shape != (T,) or gate.shape != (T,):
        raise ValueError("x, d and gate must share the time axis")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(d))):
        raise FloatingPointError("non-finite samples in NLMS input")
    w = np.zeros((L, cfg.taps)) if w0 is None else np.array(w0, dtype=float)
    if w.shape != (L, cfg.taps):
        raise ValueError(f"w0 must be ({L}, {cfg.taps})")
    w[:, cfg.n_active:] = 0.0
    if shadows is None:
        sx, sd = np.zeros((0, L, T)), np.zeros((0, T))
    else:
        sx = np.ascontiguousarray(shadows[0], dtype=float)
        sd = np.ascontiguousarray(shadows[1], dtype=float)
    err, serr = _nlms_kernel(x, d, gate, w, cfg.step_size, cfg.regularization,
                             cfg.n_active, sx, sd, want_error)
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("NLMS taps diverged")
    return NlmsResult(error=err if want_error else None, w=w,
                      shadow_error=serr if shadows is not None else None)


def apply_fir(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Echo estimate ``sum_l w_l * x_l`` truncated to the input length."""
    w = np.atleast_2d(w)
    x = np.atleast_2d(x)
    if w.shape[0] != x.shape[0]:
        raise ValueError("one tap vector per loudspeaker required")
    return sps.oaconvolve(w, x, axes=-1)[:, :x.shape[-1]].sum(axis=0)


def misalignment_db(w: np.ndarray, h: np.ndarray) -> float:
    """``10 log10(||w - h||^2 / ||h||^2)`` after zero-padding to a common length."""
    w, h = np.atleast_2d(w), np.atleast_2d(h)
    n = max(w.shape[-1], h.shape[-1])
    wp = np.zeros((w.shape[0], n))
    hp = np.zeros((h.shape[0], n))
    wp[:, :w.shape[-1]] = w
    hp[:, :h.shape[-1]] = h
    return float(10 * np.log10(np.sum((wp - hp) ** 2) / np.sum(hp ** 2)))


def export_taps(w: np.ndarray, stem, h: np.ndarray | None = None) -> float | None:
    """Write taps to ``<stem>.npy`` and ``<stem>.csv``.

    The CSV has columns ``loudspeaker, tap, w`` plus ``h`` when true echo
    paths are given; the misalignment in dB is then also returned and
    appended as a ``misalignment_db`` comment line.
    """
    w = np.atleast_2d(np.asarray(w, float))
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    np.save(stem.with_suffix(".npy"), w)
    mis = None
    if h is not None:
        h = np.atleast_2d(np.asarray(h, float))
        n = max(w.shape[-1], h.shape[-1])
        hp = np.zeros((h.shape[0], n))
        hp[:, :h.shape[-1]] = h
        mis = misalignment_db(w, h)
    with open(stem.with_suffix(".csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["loudspeaker", "tap", "w"] + (["h"] if h is not None else []))
        for l in range(w.shape[0]):
            for k in range(w.shape[1]):
                row = [l, k, repr(float(w[l, k]))]
                if h is not None:
                    row.append(repr(float(hp[l, k])))
                writer.writerow(row)
        if mis is not None:
            fh.write(f"# misalignment_db={mis:.6f}\n")
    return mis
