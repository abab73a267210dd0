"""Physical constants (CODATA via scipy) and experiment-scale defaults."""

import numpy as np
from scipy import constants as _c

HBAR = _c.hbar
KB = _c.k
H_PLANCK = _c.h
BOHR = _c.physical_constants["Bohr radius"][0]
AMU = _c.physical_constants["atomic mass constant"][0]

MASS_K40 = 39.963998166 * AMU

TWO_PI = 2.0 * np.pi

# trap used for the collective-Heisenberg measurements, Hz
EXPERIMENT_TRAP_HZ = (395.0, 1140.0, 950.0)
# differential trap frequencies: a fixed fraction of each axis frequency
DELTA_OMEGA_FRACTION = 1e-3
DEFAULT_DELTA_OMEGA_HZ = tuple(DELTA_OMEGA_FRACTION * f for f in EXPERIMENT_TRAP_HZ)

# |9/2,-9/2> + |9/2,-7/2> s-wave resonance of 40K
FESHBACH_A_BG = 174.0  # a0
FESHBACH_B0 = 20.21  # mT
B_ZERO_CROSSING = 20.907  # mT

# dephasing envelope, seconds
GAMMA0_INV_PLAIN = 0.57
GAMMA0_INV_ECHO = 0.25
GAMMA_INV = 600.0

READOUT_TIME = 0.1
