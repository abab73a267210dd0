"""Small phase-diagram sweep over field spread and coupling.

Uses the collective model on a uniform ladder so the boundary can be compared
with the analytic critical line. Runs in about a minute on one core.
"""

import numpy as np

from chmdpt import constants as C
from chmdpt.fitting import SweepConfig, analytic_slope, extract_critical_line, sweep_phase_diagram

cfg = SweepConfig(instance="uniform_1d", couplings="all_to_all", target_N=200, mode="rescale",
                  steady_window=2.0)
h = C.TWO_PI * np.linspace(4, 16, 4)
nj = C.TWO_PI * np.linspace(0, 40, 11)
grid = sweep_phase_diagram(cfg, h, nj, seed=0, workers=1)
print("rows: h_tilde/2pi; columns: NJ/2pi =", " ".join(f"{x:4.0f}" for x in nj / C.TWO_PI))
for i, row in enumerate(grid.S_norm):
    print(f"{h[i] / C.TWO_PI:5.1f} Hz  ", " ".join(f"{x:4.2f}" for x in row))
line = extract_critical_line(grid, threshold=0.1)
print(f"critical-line slope {line.slope:.3f} (analytic {analytic_slope():.3f})")
