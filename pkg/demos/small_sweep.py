"""
A small experiment grid and its figure tables
=============================================

Runs one scenario over three SER values with two AEC lengths, then writes
the long-format tables used for plotting. The full grid is the same call
with the default configuration (or ``nrext-aec run configs/default.yaml``).
"""

import tempfile
from pathlib import Path

from nrext_aec.experiment import emit_figure_data, load_config, run_experiment

out_dir = Path(tempfile.mkdtemp())
cfg = load_config(None, ["scenarios.count=1", "grid.snr_db=[0.0]", "grid.ser_db=[-15.0, 0.0, 15.0]",
                         "grid.lf=[128, 1150]"])
table = run_experiment(cfg, out_dir)
for row in table.aggregates:
    print(f"{row['design']:9s} SER {row['ser_in_db']:6.1f} L_F {row['lf']:5d}: "
          f"dSNR_I {row['delta_snr_i']:6.2f}  dSER_I {row['delta_ser_i']:6.2f}  SD_I {row['sd_i']:5.2f}")

for figure in ("nr_performance", "aec_converged"):
    print(emit_figure_data(table.path, figure, out_dir / f"{figure}.csv"))
