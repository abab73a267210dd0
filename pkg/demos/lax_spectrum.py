"""Classify the dynamical phase from the roots of the Lax norm.

Below the critical coupling every root sits near the real axis; above it a
complex-conjugate pair separates, and its imaginary part sets the gap.
"""

import numpy as np

from chmdpt import constants as C
from chmdpt.dynamics import ramsey_start
from chmdpt.lax import critical_coupling, gap_analytic, lax_spectrum
from chmdpt.modes import ground_state_1d

N = 200
ms = ground_state_1d(N, 1.0)
h = ms.fields * (C.TWO_PI * 5.0 / np.std(ms.fields))
Jc = critical_coupling(np.std(h), N)
print(f"NJc/2pi = {N * Jc / C.TWO_PI:.2f} Hz")
for r in (0.5, 2.0, 5.0):
    spec = lax_spectrum(h, r * Jc, ramsey_start(N))
    gap = 2.0 * np.max(np.abs(spec.roots.imag))
    print(f"J/Jc = {r:3.1f}: phase {spec.phase:>2}, 2 max|Im u| = {gap:8.3f} rad/s, "
          f"analytic gap = {gap_analytic(np.std(h), N, r * Jc) if r > 1 else 0.0:8.3f} rad/s")
