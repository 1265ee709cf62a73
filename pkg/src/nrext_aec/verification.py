"""Analytic self-checks: reconstruction, equivalent filters, GEVD, identities, NLMS.

Each check builds its own reference (closed form or a direct computation)
and reports the worst error against a fixed tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .estimation import gevd_mwf, verify_aec_independence
from .nlms import NlmsConfig, misalignment_db, nlms_filter
from .stft import StftConfig, analyze, equivalent_time_filter, synthesize

__all__ = [
    "CheckResult",
    "check_reconstruction",
    "check_equivalent_filter",
    "check_independence_identities",
    "check_gevd_oracle",
    "check_nlms_identification",
    "run_all",
    "random_covariance",
    "smooth_bin_filter",
]


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    runtime_s: float
    lower_is_better: bool = True

    @property
    def passed(self) -> bool:
        ok = self.value < self.tolerance if self.lower_is_better else self.value > self.tolerance
        return bool(ok and np.isfinite(self.value))

    def __str__(self):
        rel = "<" if self.lower_is_better else ">"
        return (f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3e} "
                f"(need {rel} {self.tolerance:.0e}, {self.runtime_s:.2f} s)")


def random_covariance(rng: np.random.Generator, n: int, rank: int | None = None) -> np.ndarray:
    """Hermitian positive (semi)definite matrix ``A A^H`` with ``A`` of ``rank`` columns."""
    rank = n if rank is None else rank
    A = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return A @ A.conj().T


def smooth_bin_filter(rng: np.random.Generator, cfg: StftConfig, shape=(2, 3), length: int = 32) -> np.ndarray:
    """Per-bin gains ``(bins, out, in)`` of random short causal FIRs."""
    h = rng.standard_normal(shape + (length,)) * np.exp(-np.arange(length) / (length / 4))
    G = np.fft.rfft(h, n=cfg.window_size, axis=-1)
    return np.moveaxis(G, -1, 0)


def check_reconstruction(seed: int = 0, seconds: float = 10.0, channels: int = 4) -> CheckResult:
    """Relative error of analysis followed by synthesis on interior samples."""
    t0 = time.perf_counter()
    cfg = StftConfig()
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((channels, int(seconds * 16000)))
    y = synthesize(analyze(x, cfg), cfg, x.shape[-1])
    N = cfg.window_size
    K = cfg.n_frames(x.shape[-1])
    end = (K - 1) * cfg.hop + N - cfg.hop
    sl = slice(cfg.hop, end)
    err = np.linalg.norm(y[:, sl] - x[:, sl]) / np.linalg.norm(x[:, sl])
    return CheckResult("stft perfect reconstruction", float(err), 1e-10, time.perf_counter() - t0)


def check_equivalent_filter(seed: int = 0, trials: int = 20, seconds: float = 2.0) -> CheckResult:
    """Equivalent FIR output against filtering inside the STFT domain."""
    t0 = time.perf_counter()
    cfg = StftConfig()
    rng = np.random.default_rng(seed)
    N = cfg.window_size
    worst = 0.0
    for _ in range(trials):
        G = smooth_bin_filter(rng, cfg)
        x = rng.standard_normal((G.shape[-1], int(seconds * 16000)))
        X = analyze(x, cfg)
        ref = synthesize(np.einsum("foi,kfi->kfo", G, X), cfg, x.shape[-1])
        fir = equivalent_time_filter(G, cfg).apply(x)
        T = x.shape[-1]
        lo, hi = 2 * N, T - 2 * N
        err = np.linalg.norm(fir[:, lo + N - 1:hi + N - 1] - ref[:, lo:hi]) / np.linalg.norm(ref[:, lo:hi])
        worst = max(worst, float(err))
    return CheckResult("equivalent time filter vs STFT-domain filtering", worst, 1e-3,
                       time.perf_counter() - t0)


def check_independence_identities(seed: int = 0, trials: int = 1000, M: int = 2, L: int = 2) -> CheckResult:
    """AEC filter after the extended MWF against the plain echo-path estimate.

    Full-rank matrices are drawn from ``2n`` snapshots; square draws are
    occasionally so ill-conditioned that the normal equations of the AEC
    (condition number squared) alone cost about 1e-8 of accuracy.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        R_ss = random_covariance(rng, M, 1)
        R_nn = random_covariance(rng, M, 2 * M)
        R_lsls = random_covariance(rng, L, 2 * L)
        R_lnln = random_covariance(rng, L, 2 * L)
        H = rng.standard_normal((M, L)) + 1j * rng.standard_normal((M, L))
        rep = verify_aec_independence(R_ss, R_nn, R_lsls, R_lnln, H)
        worst = max(worst, rep.err_ll, rep.err_lm, rep.err_aec)
    return CheckResult("AEC independence identities", worst, 1e-8, time.perf_counter() - t0)


def check_gevd_oracle(seed: int = 0, trials: int = 200, C: int = 4) -> CheckResult:
    """Rank-1 and full-rank GEVD filters against closed forms (elementwise)."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        a = rng.standard_normal(C) + 1j * rng.standard_normal(C)
        R_nn = random_covariance(rng, C)
        phi = rng.uniform(0.5, 5.0)
        R_xx = phi * np.outer(a, a.conj())
        R_yy = R_xx + R_nn
        # rank 1: W = R_nn^-1 a a^H phi / (1 + phi a^H R_nn^-1 a)
        Rn_a = np.linalg.solve(R_nn, a)
        ref1 = phi * np.outer(Rn_a, a.conj()) / (1 + phi * np.real(a.conj() @ Rn_a))
        W1 = gevd_mwf(R_yy, R_nn, 1).W
        R_sig = random_covariance(rng, C)
        R_full = R_sig + R_nn
        refC = np.linalg.solve(R_full, R_sig)
        WC = gevd_mwf(R_full, R_nn, C).W
        worst = max(worst, float(np.max(np.abs(W1 - ref1))), float(np.max(np.abs(WC - refC))))
    return CheckResult("GEVD-MWF closed forms", worst, 1e-8, time.perf_counter() - t0)


def check_nlms_identification(seed: int = 0, taps: int = 128, seconds: float = 10.0) -> CheckResult:
    """Noiseless identification of a random decaying path from white input."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(taps) * np.exp(-np.arange(taps) / 30)
    x = rng.standard_normal(int(seconds * 16000))
    d = np.convolve(x, h)[:len(x)]
    res = nlms_filter(x[None], d, np.ones(len(x), bool), NlmsConfig(taps), want_error=False)
    mis = misalignment_db(res.w, h[None])
    return CheckResult("NLMS identification misalignment [dB]", mis, -30.0, time.perf_counter() - t0)


def run_all() -> list[CheckResult]:
    return [check_reconstruction(), check_equivalent_filter(), check_independence_identities(),
            check_gevd_oracle(), check_nlms_identification()]
