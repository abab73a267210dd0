"""Virtual Ramsey readout with an uncontrolled interferometer phase.

Every shot closes the Ramsey sequence at a random phase, so a single
spin-up fraction carries no information about the transverse length alone.
The amplitude is recovered from a set of shots by maximizing the likelihood
marginalized over a uniformly distributed phase.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from scipy.special import logsumexp

from ._io import SCHEMA_VERSION


@dataclass
class ShotRecord:
    phase_hidden: np.ndarray  # kept for test oracles only
    fraction_up: np.ndarray
    atoms_per_shot: float | None
    noise_sigma: float
    seed: int | None = None

    @property
    def n_shots(self):
        return len(self.fraction_up)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["shot_index", "fraction_up"])
            for i, f in enumerate(self.fraction_up):
                w.writerow([i, repr(float(f))])


def _fractions(A, phases, atoms, noise_sigma, rng):
    ideal = 0.5 * (1.0 + A * np.cos(phases))
    if atoms is None or np.isinf(atoms):
        f = ideal.copy()
    else:
        f = rng.binomial(int(atoms), ideal) / float(atoms)
    if noise_sigma > 0:
        f = f + rng.normal(0.0, noise_sigma, len(f))
    return np.clip(f, 0.0, 1.0)


def simulate_shots(S_perp_norm, atoms=None, n_shots=40, noise_sigma=0.0, seed=None,
                   shot_bounds=(10, 40)):
    """Spin-up fractions of ``n_shots`` Ramsey shots with random phase.

    f = (1 + A cos phi) / 2 with phi uniform on [0, 2 pi), binomial
    projection noise for ``atoms`` atoms (None = no projection noise) and
    Gaussian technical noise, clamped to [0, 1].
    """
    if not 0.0 <= S_perp_norm <= 1.0:
        raise ValueError("S_perp_norm must lie in [0, 1]")
    if shot_bounds is not None and not shot_bounds[0] <= n_shots <= shot_bounds[1]:
        raise ValueError(f"n_shots={n_shots} outside {shot_bounds}; pass shot_bounds=None")
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2 * np.pi, n_shots)
    f = _fractions(S_perp_norm, phases, atoms, noise_sigma, rng)
    return ShotRecord(phases, f, atoms, float(noise_sigma), seed)


@dataclass
class AmplitudeEstimate:
    estimate: float
    confidence_interval: tuple
    log_likelihood: float
    ci_level: float
    degenerate: bool = False
    settings: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({
            "schema_version": SCHEMA_VERSION, "kind": "AmplitudeEstimate",
            "estimate": self.estimate, "ci_low": self.confidence_interval[0],
            "ci_high": self.confidence_interval[1], "ci_level": self.ci_level,
            "log_likelihood": self.log_likelihood, "degenerate": self.degenerate,
            "settings": self.settings}, sort_keys=True)


def log_likelihood(A, fractions, atoms=None, noise_sigma=0.0, n_phi=256, sigma_floor=1e-3):
    """Phase-marginalized log-likelihood of amplitude A.

    The phase integral uses an ``n_phi``-point periodic trapezoid rule; the
    per-phase variance adds technical noise and binomial projection noise.
    """
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    mu = 0.5 * (1.0 + A * np.cos(phi))
    var = noise_sigma**2 + (0.0 if atoms is None else mu * (1 - mu) / atoms)
    var = np.maximum(var, sigma_floor**2)
    f = np.asarray(fractions, float)[:, None]
    logp = -0.5 * (f - mu) ** 2 / var - 0.5 * np.log(2 * np.pi * var)
    return float(np.sum(logsumexp(logp, axis=1) - np.log(n_phi)))


def mle_amplitude(record, n_phi=256, grid_points=101, ci_level=0.95, sigma_floor=1e-3):
    """Maximum-likelihood transverse amplitude 2 S_perp / N from a ShotRecord.

    A coarse grid over [0, 1] brackets the maximum, golden-section search
    refines it, and the confidence interval is where twice the log-likelihood
    drop stays below the chi^2_1 quantile.
    """
    f = np.asarray(record.fraction_up, float)
    if len(f) < 2:
        raise ValueError("need at least two shots")
    atoms = record.atoms_per_shot
    if atoms is not None and np.isinf(atoms):
        atoms = None
    degenerate = record.noise_sigma == 0 and atoms is None

    def ll(A):
        return log_likelihood(A, f, atoms, record.noise_sigma, n_phi, sigma_floor)

    grid = np.linspace(0.0, 1.0, grid_points)
    vals = np.array([ll(a) for a in grid])
    i = int(np.argmax(vals))
    if 0 < i < grid_points - 1:
        res = optimize.minimize_scalar(lambda a: -ll(a), bracket=(grid[i - 1], grid[i], grid[i + 1]),
                                       method="golden", tol=1e-10)
        a_hat = float(np.clip(res.x, 0.0, 1.0))
    else:
        a_hat = float(grid[i])
    l_max = max(ll(a_hat), vals[i])
    drop = 0.5 * stats.chi2.ppf(ci_level, 1)

    def gap(a):
        return l_max - ll(a) - drop

    lo = 0.0 if gap(0.0) <= 0 else optimize.brentq(gap, 0.0, a_hat, xtol=1e-10)
    hi = 1.0 if gap(1.0) <= 0 else optimize.brentq(gap, a_hat, 1.0, xtol=1e-10)
    settings = {"n_phi": n_phi, "grid_points": grid_points, "sigma_floor": sigma_floor,
                "noise_sigma": record.noise_sigma, "atoms_per_shot": atoms,
                "n_shots": len(f)}
    return AmplitudeEstimate(a_hat, (float(lo), float(hi)), float(l_max), ci_level, degenerate,
                             settings)


def readout_trajectory(S_perp_norm, atoms=None, n_shots=40, noise_sigma=0.05, seed=0,
                       shot_bounds=(10, 40)):
    """Virtual Ramsey readout at each point of a normalized magnetization trace."""
    ss = np.random.SeedSequence(seed)
    out = []
    for value, child in zip(np.atleast_1d(S_perp_norm), ss.spawn(len(np.atleast_1d(S_perp_norm)))):
        rec = simulate_shots(float(np.clip(value, 0, 1)), atoms, n_shots, noise_sigma,
                             int(child.generate_state(1)[0]), shot_bounds)
        out.append(mle_amplitude(rec))
    return out
