"""Scenario synthesis: near-end speech and noise, loudspeaker echo, ideal VADs.

All components are kept separate so that downstream filters can be applied
to each of them (shadow filtering) and evaluated against the clean parts.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from .room_acoustics import ImpulseResponseBank

__all__ = [
    "CalibrationError",
    "ComponentTracks",
    "ExtendedTracks",
    "VadTrack",
    "speech_like",
    "babble_like",
    "read_wav",
    "write_wav",
    "ideal_vad",
    "frame_flags",
    "synthesize_scenario",
    "measure_input_ratios",
    "stack_extended",
]

log = logging.getLogger(__name__)

FS = 16000


class CalibrationError(ValueError):
    """A power ratio cannot be calibrated (silent input or unreachable gain)."""


@dataclass
class ComponentTracks:
    """Per-component time signals at the microphones and loudspeakers.

    Microphone tracks are ``(M, T)``, loudspeaker tracks ``(L, T)``.
    """

    s: np.ndarray
    n: np.ndarray
    e_s: np.ndarray
    e_n: np.ndarray
    l_s: np.ndarray
    l_n: np.ndarray
    sample_rate: int = FS

    def __post_init__(self):
        T = self.s.shape[-1]
        for name in ("n", "e_s", "e_n", "l_s", "l_n"):
            if getattr(self, name).shape[-1] != T:
                raise ValueError(f"track {name} has length {getattr(self, name).shape[-1]}, expected {T}")

    @property
    def m(self) -> np.ndarray:
        return self.s + self.n + self.e_s + self.e_n

    @property
    def e(self) -> np.ndarray:
        return self.e_s + self.e_n

    @property
    def l(self) -> np.ndarray:  # noqa: E743
        return self.l_s + self.l_n

    @property
    def n_mics(self) -> int:
        return self.s.shape[0]

    @property
    def n_loudspeakers(self) -> int:
        return self.l_s.shape[0]

    @property
    def length(self) -> int:
        return self.s.shape[-1]

    def export(self, directory, vad: "VadTrack | None" = None) -> Path:
        """Write one float32 WAV per component channel and ``manifest.csv``.

        The manifest lists ``component, mic, rms_active_db`` with the RMS taken
        over speech-active samples when ``vad`` is given.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        mask = vad.vad_s if vad is not None else np.ones(self.length, bool)
        manifest = directory / "manifest.csv"
        with open(manifest, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["component", "mic", "rms_active_db"])
            for name in ("s", "n", "e_s", "e_n", "l_s", "l_n"):
                track = getattr(self, name)
                for ch, x in enumerate(track):
                    write_wav(directory / f"{name}_{ch}.wav", x, self.sample_rate)
                    p = np.mean(x[mask] ** 2) if mask.any() else 0.0
                    rms_db = 10 * np.log10(p) if p > 0 else -np.inf
                    writer.writerow([name, ch, f"{rms_db:.4f}"])
        return manifest


@dataclass
class ExtendedTracks:
    """Microphone rows stacked on top of loudspeaker rows, ``(M + L, T)`` each."""

    m_tilde: np.ndarray
    s_tilde: np.ndarray
    n_tilde: np.ndarray
    e_s_tilde: np.ndarray
    e_n_tilde: np.ndarray
    n_mics: int

    def components(self) -> dict[str, np.ndarray]:
        return {"s": self.s_tilde, "n": self.n_tilde, "e_s": self.e_s_tilde, "e_n": self.e_n_tilde}


@dataclass
class VadTrack:
    """Ideal activity of the near-end speech and of the far-end speech echo."""

    vad_s: np.ndarray
    vad_es: np.ndarray
    frame_vad_s: np.ndarray
    frame_vad_es: np.ndarray

    def regime_fractions(self) -> dict[tuple[int, int], float]:
        """Fraction of frames in each ``(VAD_s, VAD_es)`` regime."""
        out = {}
        for a in (1, 0):
            for b in (1, 0):
                sel = (self.frame_vad_s == bool(a)) & (self.frame_vad_es == bool(b))
                out[(a, b)] = float(np.mean(sel))
        return out


# --- audio sources ---------------------------------------------------------

def _speech_shape(x: np.ndarray, fs: int) -> np.ndarray:
    # long-term speech-like tilt: rolloff below ~150 Hz and above ~800 Hz
    sos_hp = sps.butter(2, 150, "highpass", fs=fs, output="sos")
    sos_lp = sps.butter(1, 800, "lowpass", fs=fs, output="sos")
    return sps.sosfilt(sos_lp, sps.sosfilt(sos_hp, x))


def _on_off(duration_s: float, fs: int, active: list[tuple[float, float]]) -> np.ndarray:
    mask = np.zeros(int(round(duration_s * fs)), bool)
    for start, stop in active:
        mask[int(round(start * fs)):int(round(stop * fs))] = True
    return mask


def speech_like(duration_s: float = 10.0, active=((0.0, 5.0),), fs: int = FS,
                seed: int = 0) -> np.ndarray:
    """Speech-shaped noise with a syllabic envelope, silent outside ``active``.

    Stand-in for recorded sentences: non-stationary, spectrally tilted, and
    never fully silent within an active interval.
    """
    rng = np.random.default_rng(seed)
    T = int(round(duration_s * fs))
    carrier = _speech_shape(rng.standard_normal(T), fs)
    # 4 Hz-ish syllable modulation, floor keeps the 10 ms energy well above the VAD threshold
    sos_env = sps.butter(2, 4.0, fs=fs, output="sos")
    env = np.abs(sps.sosfiltfilt(sos_env, rng.standard_normal(T)))
    env = 0.1 + env / (env.max() + 1e-12)
    x = carrier * env * _on_off(duration_s, fs, list(active))
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


def babble_like(duration_s: float = 10.0, fs: int = FS, seed: int = 0, talkers: int = 6) -> np.ndarray:
    """Stationary speech-shaped noise built from several overlapping talkers."""
    rng = np.random.default_rng(seed)
    T = int(round(duration_s * fs))
    x = np.zeros(T)
    for _ in range(talkers):
        x += speech_like(duration_s, [(0.0, duration_s)], fs, int(rng.integers(2**31)))
    return x / np.max(np.abs(x))


def read_wav(path, expected_rate: int = FS) -> np.ndarray:
    """Mono PCM16 or float32 WAV as float64 in [-1, 1]."""
    rate, data = wavfile.read(path)
    if rate != expected_rate:
        raise ValueError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.ndim != 1:
        raise ValueError(f"{path}: expected a mono file, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    return data.astype(np.float64)


def write_wav(path, x: np.ndarray, fs: int = FS):
    wavfile.write(path, fs, np.asarray(x, dtype=np.float32))


# --- VAD ---------------------------------------------------------------------

def frame_flags(sample_vad: np.ndarray, frame_size: int, hop: int) -> np.ndarray:
    """Frame is active iff at least half of its samples are active."""
    sample_vad = np.asarray(sample_vad, bool)
    K = (len(sample_vad) - frame_size) // hop + 1
    if K < 1:
        return np.zeros(0, bool)
    csum = np.concatenate([[0], np.cumsum(sample_vad)])
    starts = np.arange(K) * hop
    counts = csum[starts + frame_size] - csum[starts]
    return counts >= frame_size / 2


def ideal_vad(wave: np.ndarray, frame_size: int = 512, hop: int = 256, fs: int = FS,
              window_s: float = 0.01, threshold: float = 1e-4) -> tuple[np.ndarray, np.ndarray]:
    """Energy-threshold activity of a clean source.

    A sample is active when the energy in a centred 10 ms window exceeds
    ``threshold`` times the peak windowed energy. For multichannel input the
    energy is summed over channels.

    Returns
    -------
    (sample_vad, frame_vad) : tuple of bool ndarrays
    """
    wave = np.asarray(wave, dtype=float)
    power = np.sum(np.atleast_2d(wave) ** 2, axis=0)
    win = max(1, int(round(window_s * fs)))
    energy = np.convolve(power, np.ones(win), mode="same")
    peak = energy.max()
    if peak <= 0:
        sample_vad = np.zeros(len(power), bool)
    else:
        sample_vad = energy > threshold * peak
    return sample_vad, frame_flags(sample_vad, frame_size, hop)


# --- scenario ------------------------------------------------------------------

def _convolve_paths(irs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``irs`` (M, taps) applied to the single-channel ``x``, truncated to len(x)."""
    return sps.oaconvolve(irs, x[None, :], axes=-1)[:, :len(x)]


def _power(x: np.ndarray, mask: np.ndarray | None = None) -> float:
    x = x if mask is None else x[..., mask]
    return float(np.mean(x ** 2)) if x.size else 0.0


def measure_input_ratios(tracks: ComponentTracks, vad: VadTrack, ref_mic: int = 0) -> tuple[float, float]:
    """SNRin and SERin (dB) at the reference microphone.

    Speech and noise powers are taken over speech-active samples, echo power
    over samples where the far-end speech is active.
    """
    p_s = _power(tracks.s[ref_mic], vad.vad_s)
    p_n = _power(tracks.n[ref_mic], vad.vad_s)
    p_e = _power(tracks.e[ref_mic], vad.vad_es)
    with np.errstate(divide="ignore"):
        snr = 10 * np.log10(p_s / p_n) if p_n > 0 else np.inf
        ser = 10 * np.log10(p_s / p_e) if p_e > 0 else np.inf
    return float(snr), float(ser)


def default_far_end(n_loudspeakers: int, duration_s: float, fs: int, seed: int,
                    offset_s: float = 2.5, period_s: float = 10.0) -> np.ndarray:
    """Independent far-end talkers sharing an on/off schedule shifted by ``offset_s``."""
    active = [(t + offset_s, t + offset_s + period_s / 2)
              for t in np.arange(0.0, duration_s, period_s)]
    return np.stack([speech_like(duration_s, active, fs, seed=seed + 1000 + l)
                     for l in range(n_loudspeakers)])


def synthesize_scenario(ir_bank: ImpulseResponseBank, speech_wave: np.ndarray,
                        babble_wave: np.ndarray, white_seed: int, snr_in_db: float,
                        ser_in_db: float, ref_mic: int = 0,
                        far_end_waves: np.ndarray | None = None,
                        far_end_snr_db: float = 0.0, frame_size: int = 512, hop: int = 256) -> tuple[ComponentTracks, VadTrack]:
    """Calibrated microphone and loudspeaker components for one scenario.

    Parameters
    ----------
    ir_bank : ImpulseResponseBank
        Must contain one ``speech`` source, one ``noise`` source and ``L``
        loudspeakers.
    speech_wave, babble_wave : ndarray, shape (T,)
        Clean near-end speech and noise source signals.
    white_seed : int
        Seed of the white far-end noise in each loudspeaker.
    snr_in_db, ser_in_db : float
        Targets at ``ref_mic`` (0-based). ``np.inf`` mutes the noise or the
        echo entirely.
    far_end_waves : ndarray, shape (L, T), optional
        Far-end speech per loudspeaker. Defaults to synthetic talkers whose
        activity is offset by 2.5 s from the near-end pattern.
    far_end_snr_db : float
        Power ratio of far-end speech to far-end white noise in each
        loudspeaker; ``np.inf`` removes the far-end noise.
    """
    fs = ir_bank.sample_rate
    speech_wave = np.asarray(speech_wave, float)
    babble_wave = np.asarray(babble_wave, float)
    T = len(speech_wave)
    if len(babble_wave) < T:
        raise ValueError("babble wave shorter than the speech wave")
    babble_wave = babble_wave[:T]
    spk = ir_bank.paths("speech")
    noi = ir_bank.paths("noise")
    lsp = ir_bank.paths("loudspeaker")
    if len(spk) != 1 or len(noi) != 1:
        raise ValueError("IR bank needs exactly one speech and one noise source")
    M, L = spk.shape[1], len(lsp)
    if not 0 <= ref_mic < M:
        raise ValueError(f"ref_mic must be in 0..{M - 1}")
    if far_end_waves is None:
        far_end_waves = default_far_end(L, T / fs, fs, white_seed)
    far_end_waves = np.atleast_2d(np.asarray(far_end_waves, float))[:, :T]
    if far_end_waves.shape != (L, T):
        raise ValueError(f"far_end_waves must be ({L}, {T}), got {far_end_waves.shape}")

    vad_s, fvad_s = ideal_vad(speech_wave, frame_size, hop, fs)
    vad_es, fvad_es = ideal_vad(far_end_waves, frame_size, hop, fs)
    vad = VadTrack(vad_s, vad_es, fvad_s, fvad_es)

    s = _convolve_paths(spk[0], speech_wave)
    n = _convolve_paths(noi[0], babble_wave)
    p_s = _power(s[ref_mic], vad_s)
    if p_s <= 0:
        raise CalibrationError("near-end speech is silent at the reference microphone")

    rng = np.random.default_rng(white_seed)
    l_s = far_end_waves.copy()
    l_n = rng.standard_normal((L, T))
    for l in range(L):
        p_ls = _power(l_s[l], vad_es)
        if p_ls <= 0:
            raise CalibrationError(f"far-end speech of loudspeaker {l} is silent")
        if np.isposinf(far_end_snr_db):
            l_n[l] = 0.0
        else:
            l_n[l] *= np.sqrt(p_ls / (_power(l_n[l]) * 10 ** (far_end_snr_db / 10)))

    # equalize the loudspeakers' echo power at the reference mic
    e_s = np.zeros((L, M, T))
    e_n = np.zeros((L, M, T))
    for l in range(L):
        e_s[l] = _convolve_paths(lsp[l], l_s[l])
        e_n[l] = _convolve_paths(lsp[l], l_n[l])
        g = 1.0 / np.sqrt(_power(e_s[l, ref_mic] + e_n[l, ref_mic], vad_es))
        l_s[l] *= g
        l_n[l] *= g
        e_s[l] *= g
        e_n[l] *= g
    e_s = e_s.sum(axis=0)
    e_n = e_n.sum(axis=0)

    if np.isposinf(ser_in_db):
        echo_gain = 0.0
    else:
        p_e = _power(e_s[ref_mic] + e_n[ref_mic], vad_es)
        echo_gain = np.sqrt(p_s / (p_e * 10 ** (ser_in_db / 10)))
    if np.isposinf(snr_in_db):
        noise_gain = 0.0
    else:
        p_n = _power(n[ref_mic], vad_s)
        if p_n <= 0:
            raise CalibrationError("near-end noise is silent at the reference microphone")
        noise_gain = np.sqrt(p_s / (p_n * 10 ** (snr_in_db / 10)))
    if not (np.isfinite(echo_gain) and np.isfinite(noise_gain)) or echo_gain > 1e12 or noise_gain > 1e12:
        raise CalibrationError(f"targets SNR={snr_in_db} dB / SER={ser_in_db} dB out of numeric range")

    tracks = ComponentTracks(s=s, n=noise_gain * n, e_s=echo_gain * e_s, e_n=echo_gain * e_n,
                             l_s=echo_gain * l_s, l_n=echo_gain * l_n, sample_rate=fs)
    return tracks, vad


def stack_extended(tracks: ComponentTracks) -> ExtendedTracks:
    """Stack microphone components on top of loudspeaker components."""
    L, T = tracks.l_s.shape
    zeros = np.zeros((L, T))
    s_t = np.vstack([tracks.s, zeros])
    n_t = np.vstack([tracks.n, zeros])
    es_t = np.vstack([tracks.e_s, tracks.l_s])
    en_t = np.vstack([tracks.e_n, tracks.l_n])
    return ExtendedTracks(m_tilde=np.vstack([tracks.m, tracks.l]), s_tilde=s_t, n_tilde=n_t,
                          e_s_tilde=es_t, e_n_tilde=en_t, n_mics=tracks.n_mics)
