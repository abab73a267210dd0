"""Fit the oscillation frequency of the Ramsey contrast in the gapped phase."""

import numpy as np

from chmdpt import constants as C
from chmdpt.dynamics import evolve, free_schedule, ramsey_start
from chmdpt.fitting import fit_gap
from chmdpt.lax import critical_coupling, gap_analytic
from chmdpt.modes import CouplingMatrix, ground_state_1d

N = 200
ms = ground_state_1d(N, 1.0)
h = ms.fields * (C.TWO_PI * 5.0 / np.std(ms.fields))
Jc = critical_coupling(np.std(h), N)
t = np.linspace(0.0, 1.5, 1501)
for r in (2.0, 4.0, 8.0):
    tr = evolve(ramsey_start(N), h, CouplingMatrix.all_to_all(N, r * Jc), free_schedule(1.5),
                sample_times=t)
    fit = fit_gap(tr, h)
    print(f"J/Jc = {r}: fitted Omega/2pi = {fit.Omega / C.TWO_PI:6.2f} Hz, "
          f"analytic {gap_analytic(np.std(h), N, r * Jc) / C.TWO_PI:6.2f} Hz, "
          f"converged {fit.converged}")
