import numpy as np
import pytest

from nrext_aec.room_acoustics import RoomSpec, build_geometry, build_ir_bank
from nrext_aec.signals import babble_like, speech_like, synthesize_scenario
from nrext_aec.stft import StftConfig


def make_scenario(seed=0, snr=0.0, ser=0.0, duration=10.0, **kwargs):
    room = RoomSpec()
    geometry = build_geometry(seed, room)
    bank = build_ir_bank(room, geometry)
    sp = speech_like(duration, [(0.0, duration / 2)], seed=100 + seed)
    bb = babble_like(duration, seed=200 + seed)
    tracks, vad = synthesize_scenario(bank, sp, bb, 300 + seed, snr, ser, **kwargs)
    return tracks, vad, bank


@pytest.fixture(scope="session")
def stft_cfg():
    return StftConfig()


@pytest.fixture(scope="session")
def scenario():
    """Seed 0, SNR = SER = 0 dB, 10 s."""
    return make_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one pass/fail line per acceptance criterion for the summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
