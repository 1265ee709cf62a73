"""
Per-bin filters as time-domain FIRs
===================================

A filter applied bin by bin between STFT analysis and synthesis is close to
a single FIR of 2N - 1 taps with a delay of N - 1 samples. Both routes are
compared on white noise.
"""

import numpy as np

from nrext_aec.stft import StftConfig, analyze, equivalent_time_filter, synthesize

cfg = StftConfig(512)
N = cfg.window_size
rng = np.random.default_rng(0)

x = rng.standard_normal((1, 16000 * 4))
print("reconstruction error:",
      np.max(np.abs(synthesize(analyze(x, cfg), cfg, x.shape[-1])[:, N:-N] - x[:, N:-N])))

# a short smooth response per bin, here a decaying random FIR
h = rng.standard_normal(24) * np.exp(-np.arange(24) / 6)
G = np.fft.rfft(h, n=N)[:, None, None]

wola = synthesize(np.einsum("foi,kfi->kfo", G, analyze(x, cfg)), cfg, x.shape[-1])
fir = equivalent_time_filter(G, cfg)
y = fir.apply(x)

lo, hi = 2 * N, x.shape[-1] - 2 * N
err = np.linalg.norm(y[:, lo + N - 1:hi + N - 1] - wola[:, lo:hi]) / np.linalg.norm(wola[:, lo:hi])
print(f"FIR taps {fir.taps.shape[-1]}, relative difference to WOLA {err:.2e}")
