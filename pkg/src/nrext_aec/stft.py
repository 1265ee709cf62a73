"""WOLA analysis/synthesis and time-domain equivalents of per-bin filters.

Shapes follow ``(frames, bins, channels)`` for spectra and
``(channels, samples)`` for time signals.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sfft

__all__ = [
    "StftConfig",
    "TimeEquivalentFilter",
    "analyze",
    "synthesize",
    "window_correlation",
    "equivalent_time_filter",
]


@dataclass(frozen=True)
class StftConfig:
    """Square-root Hann WOLA with 50 % overlap."""

    window_size: int = 512

    def __post_init__(self):
        if self.window_size < 2 or self.window_size % 2:
            raise ValueError("window_size must be an even integer >= 2")

    @property
    def hop(self) -> int:
        return self.window_size // 2

    @property
    def n_bins(self) -> int:
        return self.window_size // 2 + 1

    @cached_property
    def window(self) -> np.ndarray:
        # sqrt of the periodic Hann window
        n = np.arange(self.window_size)
        return np.sin(np.pi * n / self.window_size)

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.window_size) // self.hop + 1


@dataclass
class TimeEquivalentFilter:
    """FIR matrix of ``2N - 1`` taps, lag ``-(N-1)`` stored at index 0.

    Applying the taps causally (:meth:`apply`) delays the output by
    ``N - 1`` samples.
    """

    taps: np.ndarray
    window_size: int

    @property
    def delay(self) -> int:
        return self.window_size - 1

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Causal multichannel filtering, output truncated to the input length."""
        x = np.atleast_2d(x)
        n_out, n_in, n_taps = self.taps.shape
        if x.shape[0] != n_in:
            raise ValueError(f"filter expects {n_in} input channels, got {x.shape[0]}")
        T = x.shape[1]
        nfft = sfft.next_fast_len(T + n_taps - 1)
        X = np.fft.rfft(x, nfft, axis=-1)
        H = np.fft.rfft(self.taps, nfft, axis=-1)
        Y = np.einsum("oif,if->of", H, X)
        return np.fft.irfft(Y, nfft, axis=-1)[:, :T]


def analyze(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Windowed one-sided DFT of frames starting at ``k * hop``.

    Parameters
    ----------
    x : ndarray, shape (channels, T) or (T,)
    cfg : StftConfig

    Returns
    -------
    ndarray, complex, shape (frames, bins, channels)
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    N = cfg.window_size
    if x.shape[-1] < N:
        raise ValueError(f"need at least {N} samples for one frame, got {x.shape[-1]}")
    K = cfg.n_frames(x.shape[-1])
    segs = sliding_window_view(x, N, axis=-1)[:, ::cfg.hop][:, :K]
    spec = np.fft.rfft(segs * cfg.window, axis=-1)
    return np.ascontiguousarray(spec.transpose(1, 2, 0))


def synthesize(frames: np.ndarray, cfg: StftConfig, length: int | None = None) -> np.ndarray:
    """Inverse of :func:`analyze` by windowed overlap-add.

    Samples not covered by two frames (the first and last ``hop``) are not
    perfectly reconstructed.
    """
    if frames.ndim != 3 or frames.shape[1] != cfg.n_bins:
        raise ValueError(f"frames must be (K, {cfg.n_bins}, C) for window size {cfg.window_size}, "
                         f"got {frames.shape}")
    K, _, C = frames.shape
    N, H = cfg.window_size, cfg.hop
    segs = np.fft.irfft(frames, n=N, axis=1) * cfg.window[None, :, None]
    total = (K - 1) * H + N
    out = np.zeros((C, max(total, length or 0)))
    for k in range(K):
        out[:, k * H:k * H + N] += segs[k].T
    if length is not None:
        out = out[:, :length]
    return out


def window_correlation(cfg: StftConfig) -> np.ndarray:
    """Cross-correlation of synthesis and analysis windows over ``2N - 1`` lags,
    normalized to 1 at lag 0."""
    w = cfg.window
    c = np.correlate(w, w, mode="full")
    return c / c[cfg.window_size - 1]


def equivalent_time_filter(W: np.ndarray, cfg: StftConfig, tol: float = 1e-8) -> TimeEquivalentFilter:
    """Convert per-bin gains to an equivalent ``2N - 1``-tap FIR matrix.

    The length-``N`` impulse response of each bin-gain sequence is centred on
    lag 0 (lags ``-N/2 .. N/2 - 1``) and weighted by the window-pair
    correlation, which is what WOLA filtering with a fixed gain realizes on
    average over frame shifts.

    Parameters
    ----------
    W : ndarray, shape (bins, out, in) or (..., bins, out, in)
        Complex gains on the one-sided bins. DC and Nyquist gains must be
        real up to ``tol`` relative to the filter norm.
    cfg : StftConfig

    Returns
    -------
    TimeEquivalentFilter
        ``taps`` has shape ``(..., out, in, 2N - 1)``.
    """
    W = np.asarray(W)
    N = cfg.window_size
    if W.shape[-3] != cfg.n_bins:
        raise ValueError(f"expected {cfg.n_bins} bins on axis -3, got {W.shape[-3]}")
    scale = np.sqrt(np.sum(np.abs(W) ** 2, axis=(-3, -2, -1), keepdims=True)) + 1e-300
    edge_imag = np.abs(np.imag(W[..., [0, -1], :, :])) / scale
    if np.any(edge_imag > tol):
        raise ValueError(f"filter is not Hermitian-extendable: DC/Nyquist imaginary part "
                         f"{edge_imag.max():.2e} of the filter norm")
    g = np.fft.irfft(W, n=N, axis=-3)
    g = np.roll(g, N // 2, axis=-3)  # index j <-> lag j - N/2
    taps = np.zeros(W.shape[:-3] + (2 * N - 1,) + W.shape[-2:])
    taps[..., N // 2 - 1:N // 2 - 1 + N, :, :] = g
    taps *= window_correlation(cfg)[:, None, None]
    return TimeEquivalentFilter(taps=np.moveaxis(taps, -3, -1), window_size=N)
