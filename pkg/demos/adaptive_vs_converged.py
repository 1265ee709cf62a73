"""
Adaptive filters against converged filters
==========================================

In adaptive mode the correlation matrices are smoothed recursively, the
GEVD filters are rebuilt every frame and the canceller runs causally. The
scenario repeats its activity cycle once as warm-up, and only the final
cycle is measured.
"""

from nrext_aec.experiment import build_scenario, load_config
from nrext_aec.metrics import MetricsEvaluator
from nrext_aec.pipelines import prepare_front_end, run_aec
from nrext_aec.stft import StftConfig

cfg = load_config()
for mode in ("converged", "adaptive"):
    tracks, vad, _, measured = build_scenario(cfg, 0, 0.0, 0.0, mode)
    evaluator = MetricsEvaluator(tracks, vad, eval_mask=measured)
    for design in ("NR-AEC", "NRext-AEC"):
        front = prepare_front_end(design, tracks, vad, StftConfig(), mode=mode)
        delay = evaluator.find_delay(front.d_shadow["s"], 2 * front.delay + 2)
        out = run_aec(front, 1150)
        print(f"{mode:9s} {design:9s}: dSER_I {evaluator.cascade(out.shadows, delay):6.2f} dB")
