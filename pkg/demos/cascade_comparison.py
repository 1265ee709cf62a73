"""
NR-AEC against NRext-AEC on one scenario
========================================

Converged filters at SNR = SER = 0 dB. The NR stage runs once per design;
the echo canceller is then swept over its length. SNR improvement and
speech distortion are taken after the NR stage, SER improvement after the
whole cascade.
"""

from nrext_aec.experiment import build_scenario, load_config
from nrext_aec.metrics import MetricsEvaluator
from nrext_aec.pipelines import prepare_front_end, run_aec
from nrext_aec.stft import StftConfig

cfg = load_config()
tracks, vad, bank, _ = build_scenario(cfg, seed=0, snr_in_db=0.0, ser_in_db=0.0)
evaluator = MetricsEvaluator(tracks, vad)

for design in ("NR-AEC", "NRext-AEC"):
    front = prepare_front_end(design, tracks, vad, StftConfig())
    delay = evaluator.find_delay(front.d_shadow["s"], 2 * front.delay + 2)
    snr_i, sd = evaluator.nr_stage(front.d_shadow, delay)
    print(f"{design}: dSNR_I {snr_i:6.2f} dB, SD_I {sd:5.2f} dB")
    for lf in cfg.grid.lf:
        out = run_aec(front, lf)
        print(f"    L_F {lf:5d}: dSER_I {evaluator.cascade(out.shadows, delay):6.2f} dB")
