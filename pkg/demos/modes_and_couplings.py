"""Sample a thermal cloud of occupied trap modes and build its coupling matrix.

Prints the realized atom number, the spread of single-atom fields and how the
collective coupling NJ scales with the scattering length.
"""

import numpy as np

from chmdpt import constants as C
from chmdpt.modes import (TrapConfig, collective_coupling_hz, coupling_matrix, field_inhomogeneity,
                          interaction_scale, sample_occupied_modes)

trap = TrapConfig.from_hz(delta_omega_hz=C.DEFAULT_DELTA_OMEGA_HZ)
ms = sample_occupied_modes(trap, target_N=500, T_over_TF=0.4, seed=1)
print(f"realized N = {ms.N}, mean mode index per axis = {np.round(ms.mean_mode_index(), 1)}")
print(f"field inhomogeneity h_tilde/2pi = {field_inhomogeneity(ms) / C.TWO_PI:.2f} Hz")

for a0 in (-20.0, -5.0, 5.0, 20.0):
    cm = coupling_matrix(ms, interaction_scale(a0, trap))
    print(f"a = {a0:+6.1f} a0  ->  NJ/2pi = {collective_coupling_hz(cm):+8.3f} Hz")
