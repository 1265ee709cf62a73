"""
Echo-path identification after the extended NR
==============================================

Without near-end noise and far-end noise the canceller that follows the
extended NR should approach the true loudspeaker-to-microphone impulse
responses. The misalignment of both designs at 128 taps is printed, and
the taps are written to CSV.
"""

import tempfile
from pathlib import Path

import numpy as np

from nrext_aec.experiment import build_scenario, load_config
from nrext_aec.nlms import export_taps, misalignment_db
from nrext_aec.pipelines import prepare_front_end, run_aec
from nrext_aec.stft import StftConfig

cfg = load_config(None, ["audio.far_end_snr_db=.inf"])
tracks, vad, bank, _ = build_scenario(cfg, seed=0, snr_in_db=np.inf, ser_in_db=0.0)
h = bank.paths("loudspeaker")[:, 0, :]

out_dir = Path(tempfile.mkdtemp())
for design in ("NR-AEC", "NRext-AEC"):
    out = run_aec(prepare_front_end(design, tracks, vad, StftConfig()), 128)
    print(f"{design}: misalignment {misalignment_db(out.w, h):6.2f} dB")
    export_taps(out.w, out_dir / design, h)
print("taps written to", out_dir)
