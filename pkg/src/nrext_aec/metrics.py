"""Band-importance weighted SNR/SER improvements and speech distortion.

Per-band powers come from a brickwall FFT bandpass on one-third-octave
bands and are measured over speech-active samples only. Improvements are
``sum_b w_b (R_out,b - R_in,b)`` with ``R`` the per-band ratio in dB.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import signal as sps

__all__ = [
    "BandWeights",
    "MetricsReport",
    "sii_weights",
    "band_powers",
    "estimate_delay",
    "delta_snr_i",
    "delta_ser_i",
    "sd_i",
    "MetricsEvaluator",
    "cascade_metrics",
]

log = logging.getLogger(__name__)

# ANSI S3.5-1997 one-third-octave band-importance function (average speech),
# centres 160 Hz .. 8 kHz; renormalized to sum 1 below.
_SII_CENTERS = np.array([160, 200, 250, 315, 400, 500, 630, 800, 1000, 1250, 1600,
                         2000, 2500, 3150, 4000, 5000, 6300, 8000], dtype=float)
_SII_IMPORTANCE = np.array([0.0083, 0.0095, 0.0150, 0.0289, 0.0440, 0.0578, 0.0653, 0.0711,
                            0.0818, 0.0844, 0.0882, 0.0898, 0.0868, 0.0844, 0.0771, 0.0527,
                            0.0364, 0.0185])


@dataclass(frozen=True)
class BandWeights:
    """Band centres, edges (Hz) and importance weights summing to 1."""

    centers: np.ndarray
    weights: np.ndarray
    edges: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        if np.any(w < 0):
            raise ValueError("band weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"band weights must sum to 1, got {w.sum()!r}")
        if np.asarray(self.edges).shape != (len(w), 2):
            raise ValueError("edges must be (bands, 2)")

    @property
    def n_bands(self) -> int:
        return len(self.weights)


def sii_weights(sample_rate: int = 16000) -> BandWeights:
    """One-third-octave importance weights, upper edges clipped at Nyquist."""
    w = _SII_IMPORTANCE / _SII_IMPORTANCE.sum()
    edges = np.stack([_SII_CENTERS * 2 ** (-1 / 6), _SII_CENTERS * 2 ** (1 / 6)], axis=1)
    edges[:, 1] = np.minimum(edges[:, 1], sample_rate / 2)
    return BandWeights(centers=_SII_CENTERS.copy(), weights=w, edges=edges, sample_rate=sample_rate)


@dataclass
class MetricsReport:
    delta_snr_i: float
    delta_ser_i: float
    sd_i: float
    delay: int


def band_powers(x: np.ndarray, weights: BandWeights | None = None,
                mask: np.ndarray | None = None) -> np.ndarray:
    """Mean power of ``x`` in every band over the samples where ``mask`` holds.

    Bands are cut with a brickwall filter on the FFT of the whole signal.
    ``x`` may carry leading axes; the result has shape ``x.shape[:-1] + (bands,)``.
    """
    weights = weights or sii_weights()
    x = np.asarray(x, float)
    T = x.shape[-1]
    if mask is None:
        mask = np.ones(T, bool)
    mask = np.asarray(mask, bool)
    if mask.shape != (T,):
        raise ValueError(f"mask must have {T} entries")
    out = np.zeros(x.shape[:-1] + (weights.n_bands,))
    if not mask.any() or not np.any(x):
        return out
    nfft = sfft.next_fast_len(T, real=True)  # zero padding, samples beyond T are dropped
    X = sfft.rfft(x, nfft, axis=-1, workers=-1)
    f = np.fft.rfftfreq(nfft, 1 / weights.sample_rate)
    for b, (lo, hi) in enumerate(weights.edges):
        # the top band keeps the Nyquist bin
        sel = (f >= lo) & ((f <= hi) if hi >= weights.sample_rate / 2 else (f < hi))
        xb = sfft.irfft(X * sel, nfft, axis=-1, workers=-1)[..., :T]
        out[..., b] = np.mean(xb[..., mask] ** 2, axis=-1)
    return out


def estimate_delay(x_in: np.ndarray, x_out: np.ndarray, max_lag: int) -> int:
    """Lag in ``0..max_lag`` maximizing the cross-correlation of output and input."""
    c = sps.correlate(x_out, x_in, mode="full", method="fft")
    zero = len(x_in) - 1
    seg = c[zero:zero + max_lag + 1]
    return int(np.argmax(seg))


def _gain_from_powers(p_sig_in, p_int_in, p_sig_out, p_int_out, weights, label):
    P = np.stack([p_sig_in, p_int_in, p_sig_out, p_int_out])
    ok = np.all(P > 0, axis=0)
    if not ok.all():
        log.info("%s: %d band(s) without power excluded", label, int((~ok).sum()))
    if not ok.any():
        return float("nan")
    w = weights.weights[ok] / weights.weights[ok].sum()
    gain = 10 * np.log10(P[2, ok] / P[3, ok]) - 10 * np.log10(P[0, ok] / P[1, ok])
    return float(np.sum(w * gain))


def _sd_from_powers(p_in, p_out, weights):
    ok = (p_in > 0) & (p_out > 0)
    if not ok.all():
        log.info("sd_i: %d band(s) without power excluded", int((~ok).sum()))
    if not ok.any():
        return float("nan")
    w = weights.weights[ok] / weights.weights[ok].sum()
    return float(np.sum(w * np.abs(10 * np.log10(p_out[ok] / p_in[ok]))))


def _aligned_powers(inputs, outputs, weights, mask, delay):
    T = len(inputs[0])
    mask = np.ones(T, bool) if mask is None else np.asarray(mask, bool)
    stop = T - delay
    x = np.concatenate([np.stack([np.asarray(v)[:stop] for v in inputs]),
                        np.stack([np.asarray(v)[delay:] for v in outputs])])
    P = band_powers(x, weights, mask[:stop])
    return P[:len(inputs)], P[len(inputs):]


def _weighted_ratio_gain(sig_in, int_in, sig_out, int_out, weights, mask, delay, label):
    weights = weights or sii_weights()
    P_in, P_out = _aligned_powers([sig_in, int_in], [sig_out, int_out], weights, mask, delay)
    return _gain_from_powers(P_in[0], P_in[1], P_out[0], P_out[1], weights, label)


def delta_snr_i(shadow_in: dict, shadow_out: dict, weights: BandWeights | None = None,
                mask: np.ndarray | None = None, delay: int = 0) -> float:
    """Weighted per-band SNR gain in dB between ``{s, n}`` inputs and outputs.

    ``mask`` marks speech-active input samples; outputs are read ``delay``
    samples later.
    """
    return _weighted_ratio_gain(shadow_in["s"], shadow_in["n"], shadow_out["s"],
                                shadow_out["n"], weights, mask, delay, "delta_snr_i")


def _echo(d: dict) -> np.ndarray:
    return d["e"] if "e" in d else d["e_s"] + d["e_n"]


def delta_ser_i(shadow_in: dict, shadow_out: dict, weights: BandWeights | None = None,
                mask: np.ndarray | None = None, delay: int = 0) -> float:
    """As :func:`delta_snr_i` with the echo (``e`` or ``e_s + e_n``) as interference."""
    return _weighted_ratio_gain(shadow_in["s"], _echo(shadow_in), shadow_out["s"],
                                _echo(shadow_out), weights, mask, delay, "delta_ser_i")


def sd_i(speech_in: np.ndarray, speech_out: np.ndarray, weights: BandWeights | None = None,
         mask: np.ndarray | None = None, delay: int = 0) -> float:
    """Weighted absolute per-band level change of the speech, ``>= 0`` dB."""
    weights = weights or sii_weights()
    P_in, P_out = _aligned_powers([speech_in], [speech_out], weights, mask, delay)
    return _sd_from_powers(P_in[0], P_out[0], weights)


class MetricsEvaluator:
    """Band powers of the reference-mic input components, cached per delay.

    Parameters
    ----------
    tracks : ComponentTracks
    vad : VadTrack
    ref_mic : int
    weights : BandWeights, optional
    eval_mask : bool ndarray, optional
        Restricts the measurement to these input samples (e.g. after a
        warm-up), on top of the speech activity.
    """

    def __init__(self, tracks, vad, ref_mic: int = 0, weights: BandWeights | None = None,
                 eval_mask: np.ndarray | None = None):
        self.weights = weights or sii_weights()
        self.inputs = np.stack([tracks.s[ref_mic], tracks.n[ref_mic], tracks.e[ref_mic]])
        self.mask = np.asarray(vad.vad_s, bool)
        if eval_mask is not None:
            self.mask = self.mask & np.asarray(eval_mask, bool)
        self._cache: dict[int, np.ndarray] = {}

    def _mask(self, delay):
        return self.mask[:self.inputs.shape[-1] - delay]

    def input_powers(self, delay: int) -> np.ndarray:
        if delay not in self._cache:
            T = self.inputs.shape[-1]
            self._cache[delay] = band_powers(self.inputs[:, :T - delay], self.weights, self._mask(delay))
        return self._cache[delay]

    def output_powers(self, signals, delay: int) -> np.ndarray:
        x = np.stack([np.asarray(v)[delay:] for v in signals])
        return band_powers(x, self.weights, self._mask(delay))

    def find_delay(self, speech_out: np.ndarray, max_lag: int) -> int:
        if not np.any(self.inputs[0]):
            return 0
        return estimate_delay(self.inputs[0], speech_out, max_lag)

    def nr_stage(self, nr_shadows: dict, delay: int) -> tuple[float, float]:
        """``(delta_snr_i, sd_i)`` of the NR-stage output."""
        P_in = self.input_powers(delay)
        P_out = self.output_powers([nr_shadows["s"], nr_shadows["n"]], delay)
        snr = _gain_from_powers(P_in[0], P_in[1], P_out[0], P_out[1], self.weights, "delta_snr_i")
        return snr, _sd_from_powers(P_in[0], P_out[0], self.weights)

    def cascade(self, shadows: dict, delay: int) -> float:
        """``delta_ser_i`` at the cascade output."""
        P_in = self.input_powers(delay)
        P_out = self.output_powers([shadows["s"], _echo(shadows)], delay)
        return _gain_from_powers(P_in[0], P_in[2], P_out[0], P_out[1], self.weights, "delta_ser_i")


def cascade_metrics(tracks, vad, output, ref_mic: int = 0, weights: BandWeights | None = None,
                    max_lag: int | None = None, eval_mask: np.ndarray | None = None) -> MetricsReport:
    """Measures for one cascade run.

    ``delta_snr_i`` and ``sd_i`` are taken at the NR-stage output (the AEC
    does not act on near-end noise), ``delta_ser_i`` at the final output.
    The chain delay is found from the speech component.
    """
    ev = MetricsEvaluator(tracks, vad, ref_mic, weights, eval_mask)
    max_lag = max_lag if max_lag is not None else 2 * output.delay + 2
    delay = ev.find_delay(output.nr_shadows["s"], max_lag) if np.any(tracks.s[ref_mic]) else output.delay
    snr, sd = ev.nr_stage(output.nr_shadows, delay)
    ser = ev.cascade(output.shadows, delay)
    return MetricsReport(delta_snr_i=snr, delta_ser_i=ser, sd_i=sd, delay=delay)
