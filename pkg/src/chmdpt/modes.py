"""Mode-space lattice for spin-polarized fermions in a harmonic trap.

Each occupied single-particle oscillator mode ``n = (nx, ny, nz)`` is one
lattice site. Spin-dependent trap curvature gives every site an axial field
``h = 2 n . delta_omega`` and the s-wave interaction couples sites through
the density-density overlap of their eigenmodes.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import optimize, special

from . import constants as C
from ._io import SCHEMA_VERSION, check_schema


class ConfigurationError(ValueError):
    pass


class ResampleError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrapConfig:
    """Trap and Feshbach parameters. Frequencies are angular (rad/s)."""

    omega: tuple = tuple(C.TWO_PI * f for f in C.EXPERIMENT_TRAP_HZ)
    delta_omega: tuple = (0.0, 0.0, 0.0)
    atom_mass: float = C.MASS_K40
    a_bg: float = C.FESHBACH_A_BG
    B0: float = C.FESHBACH_B0
    width: float = C.B_ZERO_CROSSING - C.FESHBACH_B0
    B_zc: float = C.B_ZERO_CROSSING

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(float(w) for w in self.omega))
        object.__setattr__(self, "delta_omega", tuple(float(w) for w in self.delta_omega))
        if len(self.omega) != 3 or len(self.delta_omega) != 3:
            raise ConfigurationError("omega and delta_omega must be 3-vectors")
        if min(self.omega) <= 0:
            raise ConfigurationError("trap frequencies must be positive")
        if abs(scattering_length(self.B_zc, self)) > 1e-12:
            raise ConfigurationError(
                "Feshbach parameters do not put the zero crossing at B_zc")

    @classmethod
    def from_hz(cls, omega_hz=C.EXPERIMENT_TRAP_HZ, delta_omega_hz=(0.0, 0.0, 0.0), **kw):
        return cls(omega=tuple(C.TWO_PI * np.asarray(omega_hz, float)),
                   delta_omega=tuple(C.TWO_PI * np.asarray(delta_omega_hz, float)), **kw)

    @property
    def omega_bar(self):
        return float(np.prod(self.omega) ** (1.0 / 3.0))

    def with_delta_omega(self, delta_omega):
        return replace(self, delta_omega=tuple(delta_omega))

    def to_dict(self):
        return {
            "omega_hz": [w / C.TWO_PI for w in self.omega],
            "delta_omega_hz": [w / C.TWO_PI for w in self.delta_omega],
            "atom_mass_kg": self.atom_mass,
            "feshbach": {"a_bg": self.a_bg, "B0": self.B0, "width": self.width},
            "B_zc": self.B_zc,
        }

    @classmethod
    def from_dict(cls, d):
        f = d.get("feshbach", {})
        kw = {}
        if "atom_mass_kg" in d:
            kw["atom_mass"] = d["atom_mass_kg"]
        for key in ("a_bg", "B0", "width"):
            if key in f:
                kw[key] = f[key]
        if "B_zc" in d:
            kw["B_zc"] = d["B_zc"]
        return cls.from_hz(d.get("omega_hz", C.EXPERIMENT_TRAP_HZ),
                           d.get("delta_omega_hz", (0.0, 0.0, 0.0)), **kw)


def scattering_length(B, trap):
    """Scattering length in Bohr radii at field ``B`` (mT).

    Uses a(B) = a_bg (1 - width / (B - B0)).
    """
    if B == trap.B0:
        raise ConfigurationError(f"B = {B} mT sits on the resonance pole")
    return trap.a_bg * (1.0 - trap.width / (B - trap.B0))


def interaction_scale(a, trap):
    """U = 4 pi a sqrt(m wx wy wz / hbar) in rad/s, ``a`` in Bohr radii."""
    a_m = a * C.BOHR
    return 4.0 * np.pi * a_m * np.sqrt(trap.atom_mass * np.prod(trap.omega) / C.HBAR)


def fermi_energy(N, trap):
    """E_F = (6N)^(1/3) hbar omega_bar, in joules."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return (6.0 * N) ** (1.0 / 3.0) * C.HBAR * trap.omega_bar


def axial_field(n, delta_omega):
    """h = 2 n . delta_omega. Works row-wise on an (N, 3) array."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("mode indices must be non-negative")
    dw = np.asarray(delta_omega, float)
    return 2.0 * (n[..., 0] * dw[0] + n[..., 1] * dw[1] + n[..., 2] * dw[2])


@dataclass
class ModeSet:
    modes: np.ndarray
    fields: np.ndarray
    trap: TrapConfig
    temperature: float
    target_N: int
    realized_N: int
    chemical_potential: float
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.modes = np.asarray(self.modes, dtype=np.int64).reshape(-1, 3)
        self.fields = np.asarray(self.fields, dtype=float)
        if len(self.fields) != len(self.modes) or len(self.modes) != self.realized_N:
            raise ValueError("modes, fields and realized_N disagree")

    @property
    def N(self):
        return self.realized_N

    def with_delta_omega(self, delta_omega):
        """Same occupied modes, new differential trap frequencies."""
        trap = self.trap.with_delta_omega(delta_omega)
        return replace(self, trap=trap, fields=axial_field(self.modes, trap.delta_omega))

    def with_inhomogeneity(self, h_tilde):
        """Rescale delta_omega so that the field spread equals ``h_tilde``."""
        current = field_inhomogeneity(self)
        if current == 0:
            raise ValueError("cannot rescale a homogeneous ModeSet")
        return self.with_delta_omega(np.asarray(self.trap.delta_omega) * (h_tilde / current))

    def mean_mode_index(self):
        return self.modes.mean(axis=0)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "ModeSet",
            "trap": self.trap.to_dict(),
            "temperature_T_over_TF": self.temperature,
            "target_N": int(self.target_N),
            "realized_N": int(self.realized_N),
            "chemical_potential_J": self.chemical_potential,
            "seed": self.seed,
            "modes": self.modes.tolist(),
            "fields_rad_s": self.fields.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        check_schema(d, "ModeSet")
        return cls(modes=np.array(d["modes"], dtype=np.int64),
                   fields=np.array(d["fields_rad_s"], float),
                   trap=TrapConfig.from_dict(d["trap"]),
                   temperature=d["temperature_T_over_TF"], target_N=d["target_N"],
                   realized_N=d["realized_N"], chemical_potential=d["chemical_potential_J"],
                   seed=d["seed"], meta=d.get("meta", {}))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _enumerate_modes(trap, e_cut):
    """All modes with hbar n.omega < e_cut, in (nx, ny, nz) lexicographic order."""
    w = np.asarray(trap.omega)
    lim = e_cut / C.HBAR
    nx = np.arange(int(np.ceil(lim / w[0])) + 1)
    ny = np.arange(int(np.ceil(lim / w[1])) + 1)
    gx, gy = np.meshgrid(nx, ny, indexing="ij")
    rem = lim - gx * w[0] - gy * w[1]
    ok = rem > 0
    gx, gy, rem = gx[ok], gy[ok], rem[ok]
    # strict inequality nz * wz < rem
    counts = np.ceil(rem / w[2]).astype(np.int64)
    total = int(counts.sum())
    modes = np.empty((total, 3), dtype=np.int64)
    modes[:, 0] = np.repeat(gx, counts)
    modes[:, 1] = np.repeat(gy, counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    modes[:, 2] = np.arange(total) - starts
    return modes


def mode_energies(modes, trap):
    return C.HBAR * (np.asarray(modes) @ np.asarray(trap.omega))


def fermi_dirac_occupation(energies, mu, kT):
    return special.expit(-(energies - mu) / kT)


def solve_chemical_potential(energies, target_N, kT, e_cut):
    def excess(mu):
        return fermi_dirac_occupation(energies, mu, kT).sum() - target_N

    lo = energies.min() - 50.0 * kT
    if excess(e_cut) < 0:
        raise ConfigurationError("mode cutoff exhausted before the chemical potential bracketed")
    return optimize.brentq(excess, lo, e_cut, xtol=1e-16 * abs(e_cut), rtol=1e-14, maxiter=500)


def sample_occupied_modes(trap, target_N, T_over_TF, seed=0, fixed_n=False,
                          fixed_n_tolerance=0.02, max_resample=1000):
    """Draw the occupied mode set from a Fermi-Dirac distribution.

    The chemical potential is solved on all modes below E_F + 12 k_B T, then
    each mode is occupied with its Fermi-Dirac probability (independent
    Bernoulli draws, so the realized atom number fluctuates). ``T_over_TF=0``
    fills the ``target_N`` lowest modes deterministically. With ``fixed_n``
    draws are repeated until the realized number is within
    ``fixed_n_tolerance`` of the target.
    """
    if target_N < 2:
        raise ValueError("target_N must be >= 2")
    if not 0 <= T_over_TF <= 1:
        raise ValueError("T_over_TF must lie in [0, 1]")
    e_f = fermi_energy(target_N, trap)

    if T_over_TF == 0:
        modes = _enumerate_modes(trap, 1.5 * e_f + 3 * C.HBAR * max(trap.omega))
        energies = mode_energies(modes, trap)
        if len(modes) < target_N:
            raise ConfigurationError("not enough modes below the cutoff")
        order = np.argsort(energies, kind="stable")[:target_N]
        order.sort()
        chosen = modes[order]
        mu = float(energies[order].max())
    else:
        kT = T_over_TF * e_f
        e_cut = e_f + 12.0 * kT
        modes = _enumerate_modes(trap, e_cut)
        energies = mode_energies(modes, trap)
        mu = solve_chemical_potential(energies, target_N, kT, e_cut)
        p = fermi_dirac_occupation(energies, mu, kT)
        rng = np.random.default_rng(seed)
        for _ in range(max_resample):
            occupied = rng.random(len(p)) < p
            n_real = int(occupied.sum())
            if not fixed_n or abs(n_real - target_N) <= fixed_n_tolerance * target_N:
                break
        else:
            raise ResampleError("fixed-N rejection sampling did not converge")
        chosen = modes[occupied]

    if len(chosen) < 2:
        raise ResampleError(f"only {len(chosen)} modes occupied; resample")
    return ModeSet(modes=chosen, fields=axial_field(chosen, trap.delta_omega), trap=trap,
                   temperature=float(T_over_TF), target_N=int(target_N),
                   realized_N=len(chosen), chemical_potential=float(mu), seed=seed)


def ground_state_1d(N, delta_omega_x, trap=None):
    """Zero-temperature filling of a purely 1D ladder n = (0..N-1, 0, 0).

    Gives uniformly spaced fields on [0, 2 (N-1) delta_omega_x], the case in
    which the analytic steady-state formula has no renormalization.
    """
    trap = (trap or TrapConfig()).with_delta_omega((delta_omega_x, 0.0, 0.0))
    modes = np.zeros((N, 3), dtype=np.int64)
    modes[:, 0] = np.arange(N)
    return ModeSet(modes=modes, fields=axial_field(modes, trap.delta_omega), trap=trap,
                   temperature=0.0, target_N=N, realized_N=N, chemical_potential=0.0,
                   seed=None, meta={"kind": "ground_state_1d"})


def field_inhomogeneity(mode_set):
    """Population standard deviation of the axial fields.

    Accepts a ModeSet or a plain array of fields.
    """
    h = mode_set.fields if isinstance(mode_set, ModeSet) else np.asarray(mode_set, float)
    if len(h) < 2:
        raise ValueError("need at least two fields")
    return float(np.sqrt(max(np.mean(h**2) - np.mean(h) ** 2, 0.0)))


# ---------------------------------------------------------------------------
# mode overlaps

def _hermite_functions(n_max, x):
    """Normalized Hermite functions psi_0..psi_n_max at points x, shape (n_max+1, len(x)).

    The three-term recurrence is run on rescaled values with a per-point log
    scale so nothing underflows far from the origin.
    """
    x = np.asarray(x, float)
    out = np.empty((n_max + 1, len(x)))
    log_s = -0.5 * x**2 - 0.25 * np.log(np.pi)
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    out[0] = np.exp(log_s)
    big = 1e150
    for k in range(n_max):
        nxt = np.sqrt(2.0 / (k + 1)) * x * cur - np.sqrt(k / (k + 1.0)) * prev
        prev, cur = cur, nxt
        over = np.abs(cur) > big
        if over.any():
            cur[over] /= big
            prev[over] /= big
            log_s[over] += np.log(big)
        with np.errstate(under="ignore"):
            out[k + 1] = cur * np.exp(log_s)
    return out


def _scaled_gauss_hermite(K):
    """Nodes and weights w_k exp(y_k^2) of K-point Gauss-Hermite quadrature."""
    y, _ = special.roots_hermite(K)
    # w_k e^{y_k^2} = 1 / (K psi_{K-1}(y_k)^2)
    psi_last = _hermite_functions(K - 1, y)[-1]
    return y, 1.0 / (K * psi_last**2)


@functools.lru_cache(maxsize=16)
def overlap_table(n_max):
    """Symmetric table I[n, m] for 0 <= n, m <= n_max.

    One Gauss-Hermite rule with 4 n_max + 2 nodes integrates every entry
    exactly (integrand degree 2(n+m) <= 4 n_max times exp(-2x^2)).
    """
    K = 4 * n_max + 2
    y, W = _scaled_gauss_hermite(K)
    x = y / np.sqrt(2.0)
    psi2 = _hermite_functions(n_max, x) ** 2
    T = (psi2 * (W / np.sqrt(2.0))) @ psi2.T
    T = 0.5 * (T + T.T)
    T.setflags(write=False)
    return T


@functools.lru_cache(maxsize=None)
def _overlap_pair(n, m):
    K = 2 * (n + m) + 2
    y, W = _scaled_gauss_hermite(K)
    psi = _hermite_functions(m, y / np.sqrt(2.0))
    return float(np.sum(W / np.sqrt(2.0) * psi[n] ** 2 * psi[m] ** 2))


def overlap_1d(n, m):
    """Density overlap of 1D oscillator modes, l * int |phi_n|^2 |phi_m|^2 dx."""
    if n < 0 or m < 0:
        raise ValueError("mode indices must be non-negative")
    return _overlap_pair(min(n, m), max(n, m))


@dataclass
class CouplingMatrix:
    """J_ij = scale_U * rescale * factors_ij."""

    scale_U: float
    factors: np.ndarray
    rescale: float = 1.0
    uniform: bool = False

    @classmethod
    def all_to_all(cls, N, J):
        f = np.ones((N, N)) - np.eye(N)
        return cls(scale_U=float(J), factors=f, rescale=1.0, uniform=True)

    @property
    def N(self):
        return self.factors.shape[0]

    @property
    def matrix(self):
        return (self.scale_U * self.rescale) * self.factors

    @property
    def uniform_value(self):
        if not self.uniform:
            raise ValueError("coupling matrix is not all-to-all")
        return self.scale_U * self.rescale

    def scaled(self, factor):
        return replace(self, scale_U=self.scale_U * factor)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "kind": "CouplingMatrix",
                "scale_U_rad_s": self.scale_U, "rescale": self.rescale,
                "uniform": self.uniform, "N": self.N}

    def save(self, prefix):
        """Write ``prefix.json`` (metadata) and ``prefix.npy`` (factors)."""
        prefix = Path(prefix)
        prefix.with_suffix(".json").write_text(json.dumps(self.to_dict(), sort_keys=True))
        np.save(prefix.with_suffix(".npy"), self.factors)

    @classmethod
    def load(cls, prefix):
        prefix = Path(prefix)
        d = json.loads(prefix.with_suffix(".json").read_text())
        check_schema(d, "CouplingMatrix")
        return cls(scale_U=d["scale_U_rad_s"], factors=np.load(prefix.with_suffix(".npy")),
                   rescale=d["rescale"], uniform=d["uniform"])


def coupling_matrix(mode_set, U, rescale=1.0):
    """Product-of-overlaps coupling factors for the occupied modes."""
    modes = mode_set.modes if isinstance(mode_set, ModeSet) else np.asarray(mode_set)
    if len(modes) < 2:
        raise ValueError("need at least two modes")
    n_max = int(modes.max())
    T = overlap_table(n_max)
    f = np.ones((len(modes), len(modes)))
    for d in range(3):
        idx = modes[:, d]
        f *= T[np.ix_(idx, idx)]
    np.fill_diagonal(f, 0.0)
    return CouplingMatrix(scale_U=float(U), factors=f, rescale=float(rescale))


def mean_coupling(cm):
    """J = sum_ij J_ij / N^2 (rad/s)."""
    N = cm.N
    if N < 2:
        raise ValueError("need N >= 2")
    return float(cm.matrix.sum() / N**2)


def collective_coupling_hz(cm):
    """N J / 2 pi in Hz."""
    return cm.N * mean_coupling(cm) / C.TWO_PI
