"""Mean-field Bloch dynamics of the collective Heisenberg model.

Each spin obeys ds_j/dt = B_j x s_j with the mean field
B_j = h_j Z - sum_i 2 J_ij s_i. Pulses are instantaneous rigid rotations and
the many-body echo flips the coupling sign together with a pi pulse.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp

from . import constants as C
from ._io import SCHEMA_VERSION, write_json
from .modes import CouplingMatrix

X_AXIS = np.array([1.0, 0.0, 0.0])
Y_AXIS = np.array([0.0, 1.0, 0.0])
Z_AXIS = np.array([0.0, 0.0, 1.0])


class IntegrationError(RuntimeError):
    def __init__(self, message, time):
        super().__init__(f"{message} (t = {time:.6g} s)")
        self.time = time


class DiagnosticsError(ValueError):
    pass


@dataclass
class SpinState:
    spins: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.spins = np.asarray(self.spins, float).reshape(-1, 3)

    @property
    def N(self):
        return len(self.spins)

    @property
    def collective(self):
        return self.spins.sum(axis=0)

    @property
    def magnetization(self):
        return float(np.linalg.norm(self.collective))

    def copy(self):
        return SpinState(self.spins.copy(), self.time)


@dataclass(frozen=True)
class Segment:
    duration: float
    coupling_sign: int = 1
    dephase_mode: str = "plain"


@dataclass(frozen=True)
class Pulse:
    time: float
    axis: tuple
    angle: float


@dataclass
class PulseSchedule:
    segments: list
    pulses: list = field(default_factory=list)

    def __post_init__(self):
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        for seg in self.segments:
            if seg.duration <= 0:
                raise ValueError("segment durations must be positive")
            if seg.coupling_sign not in (1, -1):
                raise ValueError("coupling_sign must be +1 or -1")
            if seg.dephase_mode not in ("none", "plain", "echo"):
                raise ValueError(f"unknown dephase_mode {seg.dephase_mode!r}")
        bounds = self.boundaries
        for p in self.pulses:
            if not np.any(np.isclose(p.time, bounds, rtol=0, atol=1e-12 * bounds[-1])):
                raise ValueError(f"pulse at t={p.time} is not on a segment boundary")

    @property
    def boundaries(self):
        return np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])

    @property
    def total_time(self):
        return float(self.boundaries[-1])

    @property
    def is_echo(self):
        return any(s.dephase_mode == "echo" for s in self.segments)

    def to_dict(self):
        return {
            "segments": [{"duration": s.duration, "coupling_sign": s.coupling_sign,
                          "dephase_mode": s.dephase_mode} for s in self.segments],
            "pulses": [{"time": p.time, "axis": list(p.axis), "angle": p.angle}
                       for p in self.pulses],
        }


def free_schedule(t_total, coupling_sign=1):
    return PulseSchedule([Segment(t_total, coupling_sign, "plain")])


def echo_schedule(t_total, coupling_sign_first=1):
    """Many-body echo: pi pulse about X at t_total/2 and a coupling sign flip.

    The pi pulse reverses the axial-field term, the sign flip reverses the
    (rotation invariant) exchange term, so the second half runs under -H.
    """
    if t_total <= 0:
        raise ValueError("t_total must be positive")
    half = 0.5 * t_total
    return PulseSchedule(
        [Segment(half, coupling_sign_first, "echo"), Segment(half, -coupling_sign_first, "echo")],
        [Pulse(half, (1.0, 0.0, 0.0), np.pi)],
    )


def init_polarized(N, direction=+1):
    if N < 1:
        raise ValueError("N must be >= 1")
    spins = np.zeros((N, 3))
    spins[:, 2] = 0.5 * np.sign(direction)
    return SpinState(spins, 0.0)


def rotation_matrix(axis, angle):
    axis = np.asarray(axis, float)
    norm = np.linalg.norm(axis)
    if not np.isclose(norm, 1.0, atol=1e-12):
        raise ValueError("pulse axis must be a unit vector")
    k = axis / norm
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def apply_pulse(state, axis, angle):
    R = rotation_matrix(axis, angle)
    return SpinState(state.spins @ R.T, state.time)


def ramsey_start(N):
    """All spins along +X: polarized along +Z, then a pi/2 pulse about Y."""
    return apply_pulse(init_polarized(N), Y_AXIS, np.pi / 2)


def _coupling_parts(couplings, N):
    if couplings is None:
        return None, 0.0
    if couplings.N != N:
        raise ValueError(f"coupling matrix is {couplings.N}x{couplings.N}, expected N={N}")
    if couplings.uniform:
        return None, couplings.uniform_value
    return couplings.matrix, None


def effective_field(spins, fields, couplings, coupling_sign=1, fast_path=True):
    """B_j = h_j Z - sum_i 2 J_ij s_i for all j, shape (N, 3)."""
    spins = spins.spins if isinstance(spins, SpinState) else np.asarray(spins, float)
    fields = np.asarray(fields, float)
    N = len(spins)
    if len(fields) != N:
        raise ValueError(f"{len(fields)} fields for {N} spins")
    B = np.zeros((N, 3))
    B[:, 2] = fields
    if couplings is None:
        return B
    if couplings.N != N:
        raise ValueError(f"coupling matrix is {couplings.N}x{couplings.N}, expected N={N}")
    if couplings.uniform and fast_path:
        J = couplings.uniform_value
        B -= 2.0 * coupling_sign * J * (spins.sum(axis=0) - spins)
    else:
        B -= 2.0 * coupling_sign * (couplings.matrix @ spins)
    return B


def mean_field_energy(spins, fields, couplings, coupling_sign=1):
    """E = sum_j h_j s_j^Z - sum_{i != j} J_ij s_i . s_j."""
    spins = spins.spins if isinstance(spins, SpinState) else np.asarray(spins, float)
    E = float(np.dot(fields, spins[:, 2]))
    if couplings is not None:
        if couplings.uniform:
            S = spins.sum(axis=0)
            pair = S @ S - np.sum(spins * spins)
            E -= coupling_sign * couplings.uniform_value * pair
        else:
            E -= coupling_sign * float(np.sum(spins * (couplings.matrix @ spins)))
    return E


def energy_scale(fields, couplings):
    """Upper bound on |E| used to normalize energy drift."""
    scale = 0.5 * float(np.sum(np.abs(fields)))
    if couplings is not None:
        scale += 0.25 * abs(couplings.scale_U * couplings.rescale) * float(np.sum(np.abs(couplings.factors)))
    return scale if scale > 0 else 1.0


def _make_rhs(fields, couplings, sign, fast_path, extra_fields=None):
    h = np.asarray(fields, float)
    if extra_fields is not None:
        h = h + extra_fields
    N = len(h)
    Jmat, Juni = _coupling_parts(couplings, N)
    if couplings is not None and couplings.uniform and not fast_path:
        Jmat, Juni = couplings.matrix, None

    def rhs(t, y):
        s = y.reshape(N, 3)
        if Jmat is not None:
            B = -2.0 * sign * (Jmat @ s)
            B[:, 2] += h
        else:
            B = np.zeros((N, 3))
            if Juni:
                B -= 2.0 * sign * Juni * (s.sum(axis=0) - s)
            B[:, 2] += h
        out = np.empty_like(s)
        out[:, 0] = B[:, 1] * s[:, 2] - B[:, 2] * s[:, 1]
        out[:, 1] = B[:, 2] * s[:, 0] - B[:, 0] * s[:, 2]
        out[:, 2] = B[:, 0] * s[:, 1] - B[:, 1] * s[:, 0]
        return out.ravel()

    return rhs


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    SX: np.ndarray
    SY: np.ndarray
    SZ: np.ndarray
    N: int
    segment_index: np.ndarray
    per_spin_snapshots: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    spins: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def S(self):
        return np.sqrt(self.SX**2 + self.SY**2 + self.SZ**2)

    @property
    def S_perp(self):
        return np.sqrt(self.SX**2 + self.SY**2)

    @property
    def S_norm(self):
        return 2.0 * self.S / self.N

    @property
    def final_state(self):
        return self.per_spin_snapshots[-1][1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "SX", "SY", "SZ", "S", "S_norm"])
            for row in zip(self.times, self.SX, self.SY, self.SZ, self.S, self.S_norm):
                w.writerow([repr(float(v)) for v in row])

    def sidecar(self):
        return {"schema_version": SCHEMA_VERSION, "kind": "TrajectoryRecord", "N": self.N,
                "diagnostics": self.diagnostics, "meta": self.meta}

    def save(self, prefix):
        self.to_csv(f"{prefix}.csv")
        write_json(f"{prefix}.json", self.sidecar())


def evolve(state, fields, couplings, schedule, rtol=1e-8, atol=None, sample_times=None,
           method="DOP853", fast_path=True, store_spins=False, residual_fields=None,
           max_step=np.inf):
    """Integrate the mean-field Bloch equations through a pulse schedule.

    Pulses scheduled at a boundary act before any sample taken at that time.
    ``residual_fields`` is an extra axial field whose sign follows the
    segment's coupling sign, so an echo does not refocus it.

    Returns a TrajectoryRecord with collective components at ``sample_times``
    and per-spin snapshots at the start (after pulses) and end of every
    segment plus the final state.
    """
    if rtol <= 0:
        raise ValueError("rtol must be positive")
    # spin components are O(1/2) and pass through zero, so the absolute
    # tolerance is kept a decade below the relative one
    atol = 0.1 * rtol if atol is None else atol
    if atol <= 0:
        raise ValueError("atol must be positive")
    fields = np.asarray(fields, float)
    N = state.N
    if len(fields) != N:
        raise ValueError(f"{len(fields)} fields for {N} spins")
    if not (np.all(np.isfinite(fields)) and np.all(np.isfinite(state.spins))):
        raise ValueError("fields and spins must be finite")
    if couplings is not None and couplings.N != N:
        raise ValueError(f"coupling matrix is {couplings.N}x{couplings.N}, expected N={N}")
    bounds = schedule.boundaries
    T = bounds[-1]
    if sample_times is None:
        sample_times = np.linspace(0.0, T, 201)
    sample_times = np.asarray(sample_times, float)
    if np.any(np.diff(sample_times) <= 0):
        raise ValueError("sample_times must be strictly increasing")
    eps = 1e-12 * T
    if sample_times[0] < -eps or sample_times[-1] > T + eps:
        raise ValueError("sample_times outside the schedule span")

    M = len(sample_times)
    Svec = np.empty((M, 3))
    seg_of = np.empty(M, dtype=int)
    spins_out = np.empty((M, N, 3)) if store_spins else None
    norm_dev = 0.0
    snaps = []
    y = state.spins.copy()
    filled = np.zeros(M, dtype=bool)

    def pulses_at(t):
        return [p for p in schedule.pulses if abs(p.time - t) <= eps]

    def record(idx, s, k):
        nonlocal norm_dev
        Svec[idx] = s.sum(axis=0)
        seg_of[idx] = k
        if store_spins:
            spins_out[idx] = s
        norm_dev = max(norm_dev, float(np.max(np.abs(np.linalg.norm(s, axis=1) - 0.5))))
        filled[idx] = True

    for k, seg in enumerate(schedule.segments):
        t0, t1 = bounds[k], bounds[k + 1]
        for p in pulses_at(t0):
            y = apply_pulse(SpinState(y), p.axis, p.angle).spins
        snaps.append((f"segment{k}_start", SpinState(y.copy(), t0)))
        at_start = np.flatnonzero(np.abs(sample_times - t0) <= eps)
        for i in at_start:
            record(i, y, k)
        inside = np.flatnonzero((sample_times > t0 + eps) & (sample_times < t1 - eps))
        extra = None
        if residual_fields is not None:
            extra = seg.coupling_sign * np.asarray(residual_fields, float)
        rhs = _make_rhs(fields, couplings, seg.coupling_sign, fast_path, extra)
        t_eval = np.append(sample_times[inside], t1)
        sol = solve_ivp(rhs, (t0, t1), y.ravel(), method=method, rtol=rtol, atol=atol,
                        t_eval=t_eval, max_step=max_step)
        if sol.status != 0:
            raise IntegrationError(sol.message, float(sol.t[-1]) if len(sol.t) else t0)
        for j, i in enumerate(inside):
            record(i, sol.y[:, j].reshape(N, 3), k)
        y = sol.y[:, -1].reshape(N, 3).copy()
        snaps.append((f"segment{k}_end", SpinState(y.copy(), t1)))

    for p in pulses_at(T):
        y = apply_pulse(SpinState(y), p.axis, p.angle).spins
    last = len(schedule.segments) - 1
    for i in np.flatnonzero(np.abs(sample_times - T) <= eps):
        record(i, y, last)
    snaps.append(("final", SpinState(y.copy(), T)))
    assert filled.all()

    traj = TrajectoryRecord(times=sample_times.copy(), SX=Svec[:, 0], SY=Svec[:, 1],
                            SZ=Svec[:, 2], N=N, segment_index=seg_of,
                            per_spin_snapshots=snaps, spins=spins_out,
                            meta={"schedule": schedule.to_dict(), "rtol": rtol, "atol": atol,
                                  "method": method})
    traj.diagnostics = conserved_diagnostics(traj, fields, couplings, schedule)
    traj.diagnostics["norm_drift"] = max(traj.diagnostics["norm_drift"], norm_dev)
    return traj


def conserved_diagnostics(traj, fields, couplings, schedule=None):
    """Drift of S^Z, spin length and mean-field energy within segments.

    Energy drift is measured between the start and end snapshot of each
    constant-Hamiltonian segment and normalized by ``energy_scale``; drift
    across pulses is not counted.
    """
    snaps = dict(traj.per_spin_snapshots)
    if not snaps or "final" not in snaps:
        raise DiagnosticsError("trajectory carries no per-spin snapshots")
    n_seg = sum(1 for name in snaps if name.endswith("_start"))
    signs = [1] * n_seg
    if schedule is None and "schedule" in traj.meta:
        signs = [s["coupling_sign"] for s in traj.meta["schedule"]["segments"]]
    elif schedule is not None:
        signs = [s.coupling_sign for s in schedule.segments]

    sz_drift = 0.0
    e_drift = 0.0
    scale = energy_scale(fields, couplings)
    for k in range(n_seg):
        a = snaps[f"segment{k}_start"].spins
        b = snaps[f"segment{k}_end"].spins
        sz0 = a[:, 2].sum()
        in_seg = traj.segment_index == k
        # samples at the next boundary are post-pulse; only interior ones count
        t_lo, t_hi = snaps[f"segment{k}_start"].time, snaps[f"segment{k}_end"].time
        in_seg &= (traj.times >= t_lo) & (traj.times < t_hi)
        if in_seg.any():
            sz_drift = max(sz_drift, float(np.max(np.abs(traj.SZ[in_seg] - sz0))))
        sz_drift = max(sz_drift, abs(b[:, 2].sum() - sz0))
        e0 = mean_field_energy(a, fields, couplings, signs[k])
        e1 = mean_field_energy(b, fields, couplings, signs[k])
        e_drift = max(e_drift, abs(e1 - e0) / scale)
    norm_drift = max(float(np.max(np.abs(np.linalg.norm(s.spins, axis=1) - 0.5)))
                     for s in snaps.values())
    return {"SZ_drift": sz_drift, "norm_drift": norm_drift, "energy_drift": e_drift}


def dephasing_rate(a, Gamma0_inv, gamma_inv):
    """Gamma(a) = 1/Gamma0_inv + (|a|/a0)^2 / gamma_inv, in 1/s."""
    if Gamma0_inv <= 0 or gamma_inv <= 0:
        raise ValueError("dephasing time constants must be positive")
    return 1.0 / Gamma0_inv + a * a / gamma_inv


def dephasing_factor(t, a=0.0, Gamma0_inv=C.GAMMA0_INV_PLAIN, gamma_inv=C.GAMMA_INV):
    return np.exp(-dephasing_rate(a, Gamma0_inv, gamma_inv) * np.asarray(t, float))


def apply_dephasing(traj, a=0.0, Gamma0_inv=None, gamma_inv=C.GAMMA_INV):
    """Scale S^X, S^Y by exp(-Gamma(a) t); S^Z is left alone.

    ``Gamma0_inv`` defaults to the echo value when the trajectory came from an
    echo schedule and to the plain value otherwise.
    """
    if Gamma0_inv is None:
        segs = traj.meta.get("schedule", {}).get("segments", [])
        echo = any(s.get("dephase_mode") == "echo" for s in segs)
        Gamma0_inv = C.GAMMA0_INV_ECHO if echo else C.GAMMA0_INV_PLAIN
    f = dephasing_factor(traj.times, abs(a), Gamma0_inv, gamma_inv)
    meta = dict(traj.meta, dephasing={"a": a, "Gamma0_inv": Gamma0_inv, "gamma_inv": gamma_inv})
    return replace(traj, SX=traj.SX * f, SY=traj.SY * f, meta=meta)
