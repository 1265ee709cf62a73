import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrext_aec.metrics import (BandWeights, band_powers, delta_ser_i, delta_snr_i, estimate_delay,
                               sd_i, sii_weights)

W = sii_weights()
FS = 16000


def brute_band_powers(x, weights, mask):
    """Unpadded DFT, band by band, power over masked samples."""
    X = np.fft.rfft(x)
    f = np.fft.rfftfreq(len(x), 1 / FS)
    out = []
    for lo, hi in weights.edges:
        sel = (f >= lo) & ((f <= hi) if hi >= FS / 2 else (f < hi))
        out.append(np.mean(np.fft.irfft(X * sel, len(x))[mask] ** 2))
    return np.array(out)


def tone(freq, T=FS, phase=0.0):
    return np.sin(2 * np.pi * freq * np.arange(T) / FS + phase)


class TestWeights:
    def test_sii_table(self):
        assert W.n_bands == 18
        assert W.centers[0] == 160 and W.centers[-1] == 8000
        assert W.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(W.edges[:, 1] <= FS / 2)
        # contiguous one-third-octave bands
        np.testing.assert_allclose(W.edges[1:, 0], W.edges[:-1, 1], rtol=0.02)

    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            BandWeights(np.array([1.0]), np.array([0.5]), np.array([[1.0, 2.0]]))
        with pytest.raises(ValueError):
            BandWeights(np.array([1.0, 2.0]), np.array([1.5, -0.5]), np.zeros((2, 2)))


class TestBandPowers:
    def test_white_noise_proportional_to_bandwidth(self, rng):
        x = rng.standard_normal(10 * FS)
        P = band_powers(x, W)
        bw = W.edges[:, 1] - W.edges[:, 0]
        expected = bw / (FS / 2)
        # low bands hold few bins: compare where at least 100 bins fall
        ok = bw * 10 > 100
        np.testing.assert_allclose(P[ok], expected[ok], rtol=0.1)

    def test_tone_in_one_band(self):
        P = band_powers(tone(1000.0), W)
        assert np.argmax(P) == list(W.centers).index(1000)
        assert P.max() >= 0.9 * P.sum()

    def test_zero_signal(self):
        assert not band_powers(np.zeros(1000), W).any()

    def test_empty_mask(self, rng):
        assert not band_powers(rng.standard_normal(1000), W, np.zeros(1000, bool)).any()

    def test_matches_brute_force(self, rng):
        x = rng.standard_normal(3001)
        mask = rng.random(3001) > 0.4
        # padding moves the bin grid, so band edges shift by under one bin
        np.testing.assert_allclose(band_powers(x, W, mask), brute_band_powers(x, W, mask), rtol=0.1)

    def test_power_of_two_length_exact(self, rng):
        x = rng.standard_normal(4096)
        mask = rng.random(4096) > 0.5
        np.testing.assert_allclose(band_powers(x, W, mask), brute_band_powers(x, W, mask), rtol=1e-10)

    def test_batched(self, rng):
        x = rng.standard_normal((2, 3, 2048))
        P = band_powers(x, W)
        np.testing.assert_allclose(P[1, 2], band_powers(x[1, 2], W), rtol=1e-12)

    def test_mask_length(self):
        with pytest.raises(ValueError):
            band_powers(np.ones(10), W, np.ones(9, bool))


class TestDelay:
    @pytest.mark.parametrize("lag", [0, 7, 511])
    def test_recovers_shift(self, rng, lag):
        x = rng.standard_normal(8000)
        y = np.concatenate([np.zeros(lag), x])[:8000]
        assert estimate_delay(x, y, 600) == lag


class TestGains:
    def components(self, rng, T=2 * FS):
        return {"s": rng.standard_normal(T), "n": rng.standard_normal(T)}

    def test_identity(self, rng):
        c = self.components(rng)
        assert delta_snr_i(c, c, W) == pytest.approx(0.0, abs=1e-12)
        assert sd_i(c["s"], c["s"], W) == pytest.approx(0.0, abs=1e-12)

    def test_noise_attenuated_20db(self, rng):
        c = self.components(rng)
        out = {"s": c["s"], "n": 0.1 * c["n"]}
        assert delta_snr_i(c, out, W) == pytest.approx(20.0, abs=1e-9)

    def test_echo_key_forms(self, rng):
        c = self.components(rng)
        e_s, e_n = rng.standard_normal((2, len(c["s"])))
        split_in = {"s": c["s"], "e_s": e_s, "e_n": e_n}
        split_out = {"s": c["s"], "e_s": 0.5 * e_s, "e_n": 0.5 * e_n}
        joined_in = {"s": c["s"], "e": e_s + e_n}
        joined_out = {"s": c["s"], "e": 0.5 * (e_s + e_n)}
        a = delta_ser_i(split_in, split_out, W)
        assert a == pytest.approx(delta_ser_i(joined_in, joined_out, W), abs=1e-12)
        assert a == pytest.approx(20 * np.log10(2), abs=1e-9)

    def test_matches_duplicate_computation(self, rng):
        T = 4096
        s, n = rng.standard_normal((2, T))
        s_out = np.convolve(s, [1.0, 0.5])[:T]
        n_out = np.convolve(n, [0.3, -0.2, 0.1])[:T]
        mask = rng.random(T) > 0.3
        Pi = [brute_band_powers(v, W, mask) for v in (s, n)]
        Po = [brute_band_powers(v, W, mask) for v in (s_out, n_out)]
        ref = np.sum(W.weights * (10 * np.log10(Po[0] / Po[1]) - 10 * np.log10(Pi[0] / Pi[1])))
        got = delta_snr_i({"s": s, "n": n}, {"s": s_out, "n": n_out}, W, mask)
        assert got == pytest.approx(ref, abs=1e-9)

    def test_delay_alignment(self, rng):
        c = self.components(rng)
        d = 37
        out = {k: np.concatenate([np.zeros(d), v])[:len(v)] for k, v in c.items()}
        out["n"] = 0.1 * out["n"]
        assert delta_snr_i(c, out, W, delay=d) == pytest.approx(20.0, abs=1e-9)

    def test_empty_bands_excluded(self, rng, caplog):
        # the second band lies above Nyquist and holds no FFT bin
        weights = BandWeights(np.array([1000.0, 9000.0]), np.array([0.5, 0.5]),
                              np.array([[500.0, 2000.0], [8500.0, 9500.0]]), FS)
        s, n = rng.standard_normal((2, 4096))
        with caplog.at_level(logging.INFO):
            got = delta_snr_i({"s": s, "n": n}, {"s": s, "n": 0.1 * n}, weights)
        assert got == pytest.approx(20.0, abs=1e-9)
        assert "excluded" in caplog.text

    def test_all_bands_empty_nan(self):
        z = np.zeros(1000)
        assert np.isnan(delta_snr_i({"s": z, "n": z}, {"s": z, "n": z}, W))


class TestSpeechDistortion:
    @pytest.mark.parametrize("g", [0.5, 2.0, 0.1])
    def test_flat_gain(self, rng, g):
        s = rng.standard_normal(2 * FS)
        assert sd_i(s, g * s, W) == pytest.approx(abs(20 * np.log10(g)), abs=1e-9)

    def test_band_stop(self, rng):
        T = 2 * FS
        s = rng.standard_normal(T)
        S = np.fft.rfft(s)
        f = np.fft.rfftfreq(T, 1 / FS)
        b = list(W.centers).index(1000)
        lo, hi = W.edges[b]
        S[(f >= lo) & (f < hi)] *= 0.1
        out = np.fft.irfft(S, T)
        assert sd_i(s, out, W) == pytest.approx(W.weights[b] * 20, rel=0.02)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**16), scale=st.floats(0.01, 100))
    def test_non_negative_and_scale_invariant(self, seed, scale):
        rng = np.random.default_rng(seed)
        s = rng.standard_normal(4096)
        out = np.convolve(s, rng.standard_normal(5))[:4096]
        sd = sd_i(s, out, W)
        assert sd >= 0
        assert sd_i(scale * s, scale * out, W) == pytest.approx(sd, abs=1e-9)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2**16))
    def test_band_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.standard_normal(4096)
        out = np.convolve(s, rng.standard_normal(4))[:4096]
        perm = rng.permutation(W.n_bands)
        Wp = BandWeights(W.centers[perm], W.weights[perm], W.edges[perm])
        assert sd_i(s, out, Wp) == pytest.approx(sd_i(s, out, W), abs=1e-10)
