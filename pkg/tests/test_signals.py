import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from nrext_aec.signals import (CalibrationError, ComponentTracks, babble_like, frame_flags,
                               ideal_vad, measure_input_ratios, read_wav, speech_like,
                               stack_extended, synthesize_scenario, write_wav)

from conftest import make_scenario


def conv_paths(paths, x):
    """Per-mic convolution truncated to the input length."""
    return np.stack([np.convolve(x, h)[:len(x)] for h in paths])


def active_power(x, mask):
    return np.mean(x[mask] ** 2)


class TestCalibration:
    def test_zero_db_targets(self, scenario):
        tracks, vad, _ = scenario
        p_s = active_power(tracks.s[0], vad.vad_s)
        assert 10 * np.log10(p_s / active_power(tracks.n[0], vad.vad_s)) == pytest.approx(0, abs=0.01)
        assert 10 * np.log10(p_s / active_power(tracks.e[0], vad.vad_es)) == pytest.approx(0, abs=0.01)

    @settings(max_examples=8, deadline=None)
    @given(snr=st.floats(-15, 15), ser=st.floats(-15, 15), seed=st.integers(0, 50))
    def test_idempotent(self, snr, ser, seed):
        tracks, vad, _ = make_scenario(seed, snr, ser)
        snr_m, ser_m = measure_input_ratios(tracks, vad)
        assert snr_m == pytest.approx(snr, abs=0.01)
        assert ser_m == pytest.approx(ser, abs=0.01)

    def test_reference_mic_one(self):
        tracks, vad, _ = make_scenario(1, 5.0, -5.0, ref_mic=1)
        snr, ser = measure_input_ratios(tracks, vad, ref_mic=1)
        assert (snr, ser) == (pytest.approx(5.0, abs=0.01), pytest.approx(-5.0, abs=0.01))

    def test_far_end_speech_to_noise(self, scenario):
        tracks, vad, _ = scenario
        for l in range(tracks.n_loudspeakers):
            ratio = active_power(tracks.l_s[l], vad.vad_es) / np.mean(tracks.l_n[l] ** 2)
            assert 10 * np.log10(ratio) == pytest.approx(0.0, abs=0.05)

    def test_loudspeaker_echoes_equalized(self, scenario):
        tracks, vad, bank = scenario
        lsp = bank.paths("loudspeaker")
        p = [active_power(conv_paths(lsp[l], tracks.l[l])[0], vad.vad_es) for l in range(2)]
        assert 10 * np.log10(p[0] / p[1]) == pytest.approx(0.0, abs=1e-9)

    def test_echo_muted(self):
        tracks, _, _ = make_scenario(0, 0.0, np.inf)
        assert not np.any(tracks.e_s) and not np.any(tracks.e_n)
        np.testing.assert_array_equal(tracks.m, tracks.s + tracks.n)

    def test_noise_muted_far_end_noise_removed(self):
        tracks, _, _ = make_scenario(0, np.inf, 0.0, far_end_snr_db=np.inf)
        assert not np.any(tracks.n) and not np.any(tracks.l_n) and not np.any(tracks.e_n)

    def test_silent_speech(self, scenario):
        _, _, bank = scenario
        with pytest.raises(CalibrationError):
            synthesize_scenario(bank, np.zeros(160000), babble_like(10.0), 1, 0.0, 0.0)


class TestSignalModel:
    def test_echo_additivity(self, scenario):
        tracks, _, bank = scenario
        lsp = bank.paths("loudspeaker")
        e_direct = sum(conv_paths(lsp[l], tracks.l_s[l]) for l in range(2))
        e_diff = sum(conv_paths(lsp[l], tracks.l[l]) - conv_paths(lsp[l], tracks.l_n[l]) for l in range(2))
        ref = np.linalg.norm(tracks.e_s)
        assert np.linalg.norm(e_direct - tracks.e_s) / ref < 1e-10
        assert np.linalg.norm(e_diff - tracks.e_s) / ref < 1e-10

    def test_components_close(self, scenario):
        tracks, _, _ = scenario
        np.testing.assert_array_equal(tracks.m, tracks.s + tracks.n + tracks.e_s + tracks.e_n)

    def test_components_nearly_uncorrelated(self, scenario):
        tracks, _, _ = scenario
        comps = [tracks.s[0], tracks.n[0], tracks.e_s[0], tracks.e_n[0]]
        for i in range(4):
            for j in range(i + 1, 4):
                a, b = comps[i], comps[j]
                rho = abs(a @ b) / np.sqrt((a @ a) * (b @ b))
                assert rho < 0.05

    def test_all_regimes(self, scenario):
        _, vad, _ = scenario
        fr = vad.regime_fractions()
        assert set(fr) == {(1, 1), (1, 0), (0, 1), (0, 0)}
        assert min(fr.values()) >= 0.05
        assert sum(fr.values()) == pytest.approx(1.0)

    def test_length_mismatch(self):
        z = np.zeros((2, 10))
        with pytest.raises(ValueError):
            ComponentTracks(z, z, z, np.zeros((2, 9)), z, z)


class TestVad:
    def test_speech_then_silence(self):
        x = speech_like(10.0, [(0.0, 5.0)], seed=3)
        vad, fvad = ideal_vad(x)
        on = np.flatnonzero(vad)
        assert on[0] < 0.02 * 16000
        assert abs(on[-1] - 80000) < 0.02 * 16000
        assert fvad[:300].all() and not fvad[-300:].any()

    def test_zero_input(self):
        vad, fvad = ideal_vad(np.zeros(16000))
        assert not vad.any() and not fvad.any()

    def test_white_noise(self, rng):
        vad, fvad = ideal_vad(rng.standard_normal(16000))
        assert vad.all() and fvad.all()

    def test_frame_rule_majority(self):
        v = np.zeros(1024, bool)
        v[:256] = True
        flags = frame_flags(v, 512, 256)
        assert flags.tolist() == [True, False, False]
        v[:255] = True
        v[255] = False
        assert frame_flags(v, 512, 256)[0] == False  # noqa: E712


class TestStacking:
    def test_layout(self, scenario):
        tracks, _, _ = scenario
        ext = stack_extended(tracks)
        assert ext.m_tilde.shape == (4, tracks.length)
        assert not ext.s_tilde[2:].any() and not ext.n_tilde[2:].any()
        np.testing.assert_array_equal(ext.m_tilde[:2], tracks.m)
        np.testing.assert_array_equal(ext.e_s_tilde[2:], tracks.l_s)
        np.testing.assert_array_equal(ext.e_n_tilde[2:], tracks.l_n)

    def test_components_sum(self, rng):
        t = ComponentTracks(*rng.standard_normal((6, 2, 500)))
        ext = stack_extended(t)
        total = sum(ext.components().values())
        np.testing.assert_allclose(total, ext.m_tilde, atol=1e-14)

    def test_no_loudspeakers(self, rng):
        mics = rng.standard_normal((4, 2, 100))
        empty = np.zeros((0, 100))
        t = ComponentTracks(*mics, empty, empty)
        np.testing.assert_array_equal(stack_extended(t).m_tilde, t.m)


class TestAudio:
    def test_speech_like_properties(self):
        x = speech_like(4.0, [(1.0, 3.0)], seed=0)
        assert np.max(np.abs(x)) == pytest.approx(1.0)
        assert not x[:16000].any() and not x[3 * 16000:].any()
        np.testing.assert_array_equal(x, speech_like(4.0, [(1.0, 3.0)], seed=0))

    def test_speech_spectrum_tilts_down(self):
        x = speech_like(4.0, [(0.0, 4.0)], seed=1)
        P = np.abs(np.fft.rfft(x)) ** 2
        f = np.fft.rfftfreq(len(x), 1 / 16000)
        low = P[(f > 300) & (f < 1000)].mean()
        high = P[(f > 4000) & (f < 7000)].mean()
        assert low > 10 * high

    def test_wav_roundtrip_float(self, tmp_path, rng):
        x = rng.uniform(-1, 1, 1000)
        write_wav(tmp_path / "a.wav", x)
        np.testing.assert_allclose(read_wav(tmp_path / "a.wav"), x, atol=1e-7)

    def test_wav_pcm16(self, tmp_path):
        data = np.array([0, 16384, -32768], np.int16)
        wavfile.write(tmp_path / "b.wav", 16000, data)
        np.testing.assert_allclose(read_wav(tmp_path / "b.wav"), [0.0, 0.5, -1.0])

    def test_wav_rejects_rate_and_stereo(self, tmp_path):
        wavfile.write(tmp_path / "c.wav", 8000, np.zeros(10, np.float32))
        with pytest.raises(ValueError, match="sample rate"):
            read_wav(tmp_path / "c.wav")
        wavfile.write(tmp_path / "d.wav", 16000, np.zeros((10, 2), np.float32))
        with pytest.raises(ValueError, match="mono"):
            read_wav(tmp_path / "d.wav")

    def test_export_manifest(self, tmp_path, scenario):
        tracks, vad, _ = scenario
        manifest = tracks.export(tmp_path, vad)
        with open(manifest) as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["component", "mic", "rms_active_db"]
        assert len(rows) == 4 * 2 + 2 * 2
        s0 = next(r for r in rows if r["component"] == "s" and r["mic"] == "0")
        expected = 10 * np.log10(active_power(tracks.s[0], vad.vad_s))
        assert float(s0["rms_active_db"]) == pytest.approx(expected, abs=1e-3)
        rate, data = wavfile.read(tmp_path / "e_s_1.wav")
        assert rate == 16000 and data.dtype == np.float32
