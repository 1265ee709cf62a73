"""The two cascades: NR followed by AEC, and extended NR followed by AEC.

Both run in two modes. ``converged``: correlation matrices over the whole
recording, one NLMS pass whose final taps are re-applied to the whole
recording. ``adaptive``: recursively smoothed matrices with a GEVD rebuild
every frame and a causally running NLMS.

Every signal component is pushed through the same chain as the mixture
("shadow" filtering), so per-component outputs sum to the mixture output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .estimation import (RecursiveCovariances, SpectralFilter, accumulate_covariances,
                         build_nr_filter, build_nrext_filter, gevd_mwf)
from .nlms import NlmsConfig, apply_fir, nlms_filter
from .signals import ComponentTracks, VadTrack, frame_flags, stack_extended
from .stft import StftConfig, TimeEquivalentFilter, analyze, equivalent_time_filter

__all__ = [
    "DESIGNS",
    "MODES",
    "FrontEnd",
    "CascadeOutput",
    "FrozenChain",
    "prepare_front_end",
    "run_aec",
    "run_nr_aec",
    "run_nrext_aec",
    "shadow_apply",
    "aec_gate",
]

DESIGNS = ("NR-AEC", "NRext-AEC")
MODES = ("converged", "adaptive")
COMPONENTS = ("s", "n", "e_s", "e_n")


@dataclass
class FrontEnd:
    """Output of the (extended) NR stage, i.e. the input of the AEC stage.

    ``d`` is the filtered reference microphone, ``x`` the AEC regressor
    (raw loudspeakers for NR-AEC, filtered loudspeakers for NRext-AEC).
    """

    design: str
    mode: str
    d: np.ndarray
    x: np.ndarray
    d_shadow: dict[str, np.ndarray]
    x_shadow: dict[str, np.ndarray]
    gate: np.ndarray
    delay: int
    active_taps: int | None = None
    spectral_filter: SpectralFilter | None = field(default=None, repr=False)
    time_filter: TimeEquivalentFilter | None = field(default=None, repr=False)


@dataclass
class CascadeOutput:
    s_hat_r: np.ndarray
    shadows: dict[str, np.ndarray]
    nr_output: np.ndarray
    nr_shadows: dict[str, np.ndarray]
    design: str
    mode: str
    lf: int
    w: np.ndarray
    delay: int


@dataclass
class FrozenChain:
    """Fixed NR/NRext time filter followed by fixed AEC taps.

    Inputs are in the stacked ``(M + L, T)`` layout. ``time_filter=None``
    means an identity NR stage without delay.
    """

    design: str
    n_mics: int
    ref_mic: int
    w: np.ndarray
    time_filter: TimeEquivalentFilter | None = None

    def apply(self, y_tilde: np.ndarray) -> np.ndarray:
        M = self.n_mics
        if self.design == "NR-AEC":
            mics = y_tilde[:M] if self.time_filter is None else self.time_filter.apply(y_tilde[:M])
            d, x = mics[self.ref_mic], y_tilde[M:]
        else:
            y = y_tilde if self.time_filter is None else self.time_filter.apply(y_tilde)
            if self.time_filter is None:
                d, x = y[self.ref_mic], y[M:]
            else:
                d, x = y[0], y[1:]
        return d - apply_fir(self.w, x)


def shadow_apply(chain: FrozenChain, components: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Pass every stacked component through the same frozen chain."""
    return {name: chain.apply(y) for name, y in components.items()}


def aec_gate(vad_s: np.ndarray, spread: int) -> np.ndarray:
    """Adaptation allowed where no speech sample falls in the last ``spread + 1`` samples.

    ``spread`` covers the delay and smearing of the NR stage, so the gate
    refers to the speech as it appears in the filtered reference.
    """
    active = np.asarray(vad_s, bool).astype(np.int64)
    csum = np.concatenate([[0], np.cumsum(active)])
    t = np.arange(len(active))
    lo = np.maximum(t - spread, 0)
    return (csum[t + 1] - csum[lo]) == 0


# --- time-varying filtering for adaptive mode --------------------------------

def _adaptive_filtering(frames: np.ndarray, desired: np.ndarray, cfg: StftConfig, rank: int,
                        rows: list[int], signals: list[np.ndarray], weight: float,
                        chunk: int = 48) -> list[np.ndarray]:
    """Filter each ``(C, T)`` signal with per-frame GEVD-MWF equivalent FIRs.

    The filter built from frames ``<= k`` is applied causally to output
    samples ``[k H + N - 1, (k + 1) H + N - 1)``; earlier samples are zero.
    """
    K, F, C = frames.shape
    N, H = cfg.window_size, cfg.hop
    T = signals[0].shape[-1]
    n_taps = 2 * N - 1
    nfft = sfft.next_fast_len(n_taps - 1 + H)
    rec = RecursiveCovariances(F, C, weight)
    R_full = np.zeros((K, F, C, C), complex)
    R_interf = np.zeros_like(R_full)
    ready = np.zeros(K, bool)
    for k in range(K):
        rec.update(frames[k], bool(desired[k]))
        R_full[k], R_interf[k], ready[k] = rec.R_full, rec.R_interf, rec.ready

    pad = n_taps - 1
    padded = [np.concatenate([np.zeros((C, pad)), s, np.zeros((C, nfft))], axis=1) for s in signals]
    outputs = [np.zeros((len(rows), T)) for _ in signals]
    seg_idx = np.arange(nfft)
    for k0 in range(0, K, chunk):
        ks = np.arange(k0, min(k0 + chunk, K))
        ks = ks[ready[ks]]
        if ks.size == 0:
            continue
        W = gevd_mwf(R_full[ks], R_interf[ks], rank).W
        G = np.swapaxes(W, -1, -2).conj()[:, :, rows, :]
        taps = equivalent_time_filter(G, cfg).taps  # (chunk, rows, C, n_taps)
        Hf = np.fft.rfft(taps, nfft, axis=-1)
        starts = ks * H + N - 1
        starts_ok = starts < T
        ks, starts, Hf = ks[starts_ok], starts[starts_ok], Hf[starts_ok]
        # output block t in [start, start + H) needs input [start - pad, start + H)
        idx = starts[:, None] + seg_idx[None, :]  # position in padded signal of x[start - pad + j]
        for sig, out in zip(padded, outputs):
            segs = sig[:, idx]  # (C, chunk, nfft)
            X = np.fft.rfft(segs, axis=-1)
            Y = np.einsum("kocf,ckf->okf", Hf, X)
            y = np.fft.irfft(Y, nfft, axis=-1)[:, :, pad:pad + H]
            for j, start in enumerate(starts):
                stop = T if ks[j] == K - 1 else min(start + H, T)
                out[:, start:stop] = y[:, j, :stop - start]
    return outputs


# --- front ends ------------------------------------------------------------------

def _filter_spec(design, tracks, vad, cfg, ref_mic):
    M, L = tracks.n_mics, tracks.n_loudspeakers
    fvad_s = frame_flags(vad.vad_s, cfg.window_size, cfg.hop)
    if design == "NR-AEC":
        rows = [ref_mic]
        rank = 1
        desired = fvad_s
        inputs = {name: getattr(tracks, name) for name in COMPONENTS}
        mix = tracks.m
    elif design == "NRext-AEC":
        rows = [ref_mic] + list(range(M, M + L))
        rank = 1 + L
        desired = fvad_s | frame_flags(vad.vad_es, cfg.window_size, cfg.hop)
        ext = stack_extended(tracks)
        inputs = ext.components()
        mix = ext.m_tilde
    else:
        raise ValueError(f"unknown design {design!r}, expected one of {DESIGNS}")
    return rows, rank, desired, inputs, mix


def _regressor_components(tracks: ComponentTracks) -> dict[str, np.ndarray]:
    zeros = np.zeros_like(tracks.l_s)
    return {"s": zeros, "n": zeros, "e_s": tracks.l_s, "e_n": tracks.l_n}


def prepare_front_end(design: str, tracks: ComponentTracks, vad: VadTrack, stft_cfg: StftConfig,
                      mode: str = "converged", ref_mic: int = 0, weight: float = 0.995,
                      full_regime: str = "desired", echo_path_length: int = 128,
                      filter_override: np.ndarray | None = None) -> FrontEnd:
    """Run the NR (``"NR-AEC"``) or extended NR (``"NRext-AEC"``) stage.

    ``filter_override`` replaces the estimated per-bin ``W`` (converged mode
    only), e.g. an identity to bypass the NR stage. ``echo_path_length`` is
    the number of AEC taps left active after the extended NR.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    rows, rank, desired, inputs, mix = _filter_spec(design, tracks, vad, stft_cfg, ref_mic)
    N = stft_cfg.window_size
    delay = N - 1
    gate = aec_gate(vad.vad_s, 2 * N - 2)
    names = list(inputs)

    spectral = tf = None
    if mode == "converged":
        if filter_override is not None:
            W = np.broadcast_to(filter_override, (stft_cfg.n_bins,) + np.shape(filter_override)[-2:])
            spectral = SpectralFilter(W=np.array(W, dtype=complex), rank=rank)
        else:
            frames = analyze(mix, stft_cfg)
            cov = accumulate_covariances(frames, desired, full_regime)
            spectral = build_nr_filter(cov) if design == "NR-AEC" else \
                build_nrext_filter(cov, rank=rank)
        G = spectral.apply_matrix()[:, rows, :]
        tf = equivalent_time_filter(G, stft_cfg)
        filtered = [tf.apply(mix)] + [tf.apply(inputs[c]) for c in names]
    else:
        if filter_override is not None:
            raise ValueError("filter_override is only supported in converged mode")
        frames = analyze(mix, stft_cfg)
        filtered = _adaptive_filtering(frames, desired, stft_cfg, rank, rows,
                                       [mix] + [inputs[c] for c in names], weight)

    if design == "NR-AEC":
        d = filtered[0][0]
        x = tracks.l
        d_shadow = {c: y[0] for c, y in zip(names, filtered[1:])}
        x_shadow = _regressor_components(tracks)
        active = None
    else:
        d, x = filtered[0][0], filtered[0][1:]
        d_shadow = {c: y[0] for c, y in zip(names, filtered[1:])}
        x_shadow = {c: y[1:] for c, y in zip(names, filtered[1:])}
        active = echo_path_length
    return FrontEnd(design=design, mode=mode, d=d, x=x, d_shadow=d_shadow, x_shadow=x_shadow,
                    gate=gate, delay=delay, active_taps=active, spectral_filter=spectral,
                    time_filter=tf)


def run_aec(front: FrontEnd, lf: int, step_size: float = 0.1, regularization: float = 1e-6,
            active_taps: int | None = None) -> CascadeOutput:
    """AEC stage with ``lf`` taps per loudspeaker on top of a prepared front end.

    For NRext-AEC the taps beyond the echo-path length are held at zero
    unless ``active_taps`` overrides it.
    """
    if lf < 1:
        raise ValueError(f"number of AEC taps must be >= 1, got {lf}")
    active = active_taps if active_taps is not None else front.active_taps
    if active is not None:
        active = min(active, lf)
    cfg = NlmsConfig(taps=lf, step_size=step_size, regularization=regularization, active_taps=active)
    if front.mode == "converged":
        res = nlms_filter(front.x, front.d, front.gate, cfg, want_error=False)
        s_hat = front.d - apply_fir(res.w, front.x)
        shadows = {c: front.d_shadow[c] - apply_fir(res.w, front.x_shadow[c]) for c in COMPONENTS}
    else:
        sx = np.stack([front.x_shadow[c] for c in COMPONENTS])
        sd = np.stack([front.d_shadow[c] for c in COMPONENTS])
        res = nlms_filter(front.x, front.d, front.gate, cfg, shadows=(sx, sd))
        s_hat = res.error
        shadows = dict(zip(COMPONENTS, res.shadow_error))
    return CascadeOutput(s_hat_r=s_hat, shadows=shadows, nr_output=front.d,
                         nr_shadows=dict(front.d_shadow), design=front.design, mode=front.mode,
                         lf=lf, w=res.w, delay=front.delay)


def run_nr_aec(tracks: ComponentTracks, vad: VadTrack, stft_cfg: StftConfig, nlms_cfg: NlmsConfig,
               mode: str = "converged", ref_mic: int = 0, **kwargs) -> CascadeOutput:
    """Microphone MWF followed by an NLMS canceller on the raw loudspeakers."""
    front = prepare_front_end("NR-AEC", tracks, vad, stft_cfg, mode, ref_mic, **kwargs)
    return run_aec(front, nlms_cfg.taps, nlms_cfg.step_size, nlms_cfg.regularization,
                   nlms_cfg.active_taps)


def run_nrext_aec(tracks: ComponentTracks, vad: VadTrack, stft_cfg: StftConfig, nlms_cfg: NlmsConfig,
                  mode: str = "converged", ref_mic: int = 0, **kwargs) -> CascadeOutput:
    """Extended MWF on microphones and loudspeakers followed by an NLMS canceller
    on the filtered loudspeakers."""
    front = prepare_front_end("NRext-AEC", tracks, vad, stft_cfg, mode, ref_mic, **kwargs)
    return run_aec(front, nlms_cfg.taps, nlms_cfg.step_size, nlms_cfg.regularization,
                   nlms_cfg.active_taps)
