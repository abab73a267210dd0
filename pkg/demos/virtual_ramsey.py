"""Estimate the transverse contrast from random-phase shots.

Each shot reads out the up-fraction after a Ramsey pulse with an unknown phase.
The estimator marginalizes over that phase and reports a likelihood-ratio
interval.
"""

from chmdpt.ramsey import mle_amplitude, simulate_shots

for A in (0.2, 0.5, 0.9):
    rec = simulate_shots(A, atoms=30000, n_shots=40, noise_sigma=0.05, seed=11)
    est = mle_amplitude(rec)
    lo, hi = est.confidence_interval
    print(f"true A = {A:.2f}: estimate {est.estimate:.3f}, 95% interval [{lo:.3f}, {hi:.3f}]")
