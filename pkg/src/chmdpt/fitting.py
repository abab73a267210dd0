"""Observables and fits on simulated magnetization traces.

Non-interacting reference signal, chi^2 distance to it, gap-frequency fits,
long-time averages and phase-diagram sweeps with critical-line extraction.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import integrate, optimize

from . import constants as C
from ._io import SCHEMA_VERSION, stable_hash
from .dynamics import (apply_dephasing, evolve, free_schedule, ramsey_start)
from .modes import (CouplingMatrix, TrapConfig, coupling_matrix, field_inhomogeneity,
                    ground_state_1d, interaction_scale, mean_coupling, sample_occupied_modes)


class GridMismatchError(ValueError):
    pass


def free_dephasing_signal(fields, t):
    """S_{J=0}(t) = |sum_j exp(i h_j t)| / 2 for scalar or array t."""
    h = np.asarray(fields, float)
    t = np.asarray(t, float)
    flat = np.atleast_1d(t).ravel()
    out = np.empty(len(flat))
    chunk = max(1, 2_000_000 // max(len(h), 1))
    for i in range(0, len(flat), chunk):
        ph = np.outer(flat[i:i + chunk], h)
        out[i:i + chunk] = 0.5 * np.hypot(np.cos(ph).sum(axis=1), np.sin(ph).sum(axis=1))
    return out.reshape(t.shape) if t.ndim else float(out[0])


def _signal(x):
    return np.asarray(x.S if hasattr(x, "S") else x, float)


def chi2_distance(traj, reference, sigma=None):
    """sum_k (S(t_k) - S_ref(t_k))^2 / sigma_k^2, uniform sigma = 1 by default."""
    s = _signal(traj)
    r = _signal(reference)
    if s.shape != r.shape:
        raise GridMismatchError(f"grid mismatch: {s.shape} vs {r.shape}")
    sig = np.ones_like(s) if sigma is None else np.broadcast_to(np.asarray(sigma, float), s.shape)
    return float(np.sum(((s - r) / sig) ** 2))


def steady_state_average(traj, window_fraction=1.0 / 3.0):
    """Time average of S over the final ``window_fraction`` of the record."""
    if not 0 < window_fraction < 1 + 1e-12:
        raise ValueError("window_fraction must lie in (0, 1]")
    t = np.asarray(traj.times, float)
    s = _signal(traj)
    t_start = t[-1] - window_fraction * (t[-1] - t[0])
    keep = t >= t_start - 1e-12 * (t[-1] - t[0])
    tt, ss = t[keep], s[keep]
    if len(tt) < 2:
        return float(ss.mean())
    return float(integrate.trapezoid(ss, tt) / (tt[-1] - tt[0]))


# ---------------------------------------------------------------------------
# gap fit


@dataclass
class GapFit:
    Omega: float
    damping: float
    S_infinity: float
    crossover_time: float
    residual: float
    converged: bool
    amplitude: float = 0.0
    phase: float = 0.0

    def model(self, t, fields=None):
        return _piecewise(np.asarray(t, float), self.crossover_time, self.amplitude,
                          self.damping, self.Omega, self.phase, fields, self.S_infinity)


def _piecewise(t, tc, A, kappa, Om, phi, fields, S_inf=None, early=None):
    if fields is not None:
        S_inf = free_dephasing_signal(fields, tc) - A * np.cos(phi)
    tau = t - tc
    late = S_inf + A * np.exp(-kappa * tau) * np.cos(Om * tau + phi)
    if fields is None:
        return late
    if early is None:
        early = free_dephasing_signal(fields, t)
    return np.where(t < tc, early, late)


def _spectral_peak(t, s):
    """Angular frequency of the largest periodogram peak of s - mean."""
    n = len(t)
    dt = (t[-1] - t[0]) / (n - 1)
    y = (s - s.mean()) * np.hanning(n)
    pad = 8 * n
    spec = np.abs(np.fft.rfft(y, pad))
    freqs = np.fft.rfftfreq(pad, dt)
    spec[freqs < 1.5 / (t[-1] - t[0])] = 0.0
    k = int(np.argmax(spec))
    return 2 * np.pi * freqs[k], spec[k]


def fit_gap(traj, fields=None, min_periods=1.5, n_crossover=6):
    """Fit the gap frequency of a magnetization trace.

    Model: S_{J=0}(t) before a crossover time t_c and a damped sinusoid
    S_inf + A exp(-kappa (t - t_c)) cos(Omega (t - t_c) + phi) after it,
    continuous at t_c (S_inf is slaved to the other parameters). Without
    ``fields`` the trace is fitted by the damped sinusoid alone.
    Omega starts from the dominant periodogram peak of the late trace.
    """
    t = np.asarray(traj.times if hasattr(traj, "times") else traj[0], float)
    s = _signal(traj) if hasattr(traj, "times") else np.asarray(traj[1], float)
    span = t[-1] - t[0]
    norm = max(np.max(np.abs(s)), 1e-300)
    y = s / norm

    if fields is None:
        tcs = [t[0]]
    else:
        ref_abs = free_dephasing_signal(fields, t)
        dev = np.abs(y - ref_abs / norm)
        first = np.argmax(dev > 0.02) if np.any(dev > 0.02) else len(t) // 4
        t_dev = t[first]
        tcs = np.unique(np.clip(np.linspace(0.2, 1.5, n_crossover) * max(t_dev, span / 50),
                                t[0], t[0] + 0.6 * span))

    best = None
    for tc in tcs:
        late = t >= tc
        if late.sum() < 8:
            continue
        Om0, peak = _spectral_peak(t[late], y[late])
        if Om0 * (t[-1] - tc) < 2 * np.pi * min_periods or peak <= 0:
            continue
        amp0 = 0.5 * (y[late].max() - y[late].min())
        S0 = y[late][len(y[late]) // 2:].mean()
        for phi0 in np.linspace(0, 2 * np.pi, 4, endpoint=False):
            if fields is None:
                p0 = [amp0, 1.0 / span, Om0, phi0, S0]

                def res(p):
                    return _piecewise(t, tc, p[0], p[1], p[2], p[3], None, p[4]) - y
            else:
                p0 = [tc, amp0 * norm, 1.0 / span, Om0, phi0]
                f_n = np.asarray(fields)

                def res(p, f_n=f_n):
                    m = _piecewise(t, p[0], p[1], p[2], p[3], p[4], f_n,
                                   early=ref_abs)
                    return (m - s) / norm
            try:
                r = optimize.least_squares(res, p0, method="lm", max_nfev=4000,
                                           xtol=1e-12, ftol=1e-12)
            except (ValueError, RuntimeError):
                continue
            if best is None or r.cost < best[0].cost:
                best = (r, tc)

    if best is None:
        return GapFit(0.0, 0.0, float(s[-len(s) // 3:].mean()), float(t[0]), float("inf"), False)
    r, tc = best
    if fields is None:
        A, kappa, Om, phi, S_inf = r.x
        tc_fit = tc
        A, S_inf = A * norm, S_inf * norm
    else:
        tc_fit, A, kappa, Om, phi = r.x
        S_inf = free_dephasing_signal(fields, tc_fit) - A * np.cos(phi)
    if Om < 0:
        Om, phi = -Om, -phi
    if A < 0:
        A, phi = -A, phi + np.pi
    phi = float(np.mod(phi, 2 * np.pi))
    resid = float(np.sqrt(np.mean(r.fun**2)))
    ok = bool(r.success and Om * (t[-1] - tc_fit) >= 2 * np.pi * min_periods
              and abs(A) > 3 * resid * norm)
    if not ok:
        return GapFit(0.0, float(kappa), float(S_inf), float(tc_fit), resid, False, float(A), phi)
    return GapFit(float(Om), float(kappa), float(S_inf), float(tc_fit), resid, True, float(A), phi)


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepConfig:
    """Base instance for a phase-diagram sweep.

    ``instance`` is "thermal" (Fermi-Dirac sample, product-overlap couplings)
    or "uniform_1d" (zero-temperature 1D ladder). ``couplings`` is "dense" or
    "all_to_all". ``mode`` "resample" draws a fresh ModeSet for every cell,
    "rescale" reuses one base sample and only rescales fields and U.
    """

    trap: TrapConfig = field(default_factory=lambda: TrapConfig.from_hz(
        delta_omega_hz=C.DEFAULT_DELTA_OMEGA_HZ))
    target_N: int = 500
    T_over_TF: float = 0.4
    instance: str = "thermal"
    couplings: str = "dense"
    rescale: float = 1.0
    mode: str = "resample"
    dephasing: bool = False
    Gamma0_inv: float = C.GAMMA0_INV_PLAIN
    gamma_inv: float = C.GAMMA_INV
    rtol: float = 1e-8
    method: str = "DOP853"
    steady_window: float | None = None
    window_fraction: float = 1.0 / 3.0

    def to_dict(self):
        d = asdict(self)
        d["trap"] = self.trap.to_dict()
        return d


@dataclass
class SweepGrid:
    h_tilde_axis: np.ndarray
    NJ_axis: np.ndarray
    S_at_t: np.ndarray
    readout_time: float
    realized_N: np.ndarray
    seeds: np.ndarray
    failures: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def S_norm(self):
        return 2.0 * self.S_at_t / self.realized_N

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h_tilde_Hz", "NJ_Hz", "S_norm", "realized_N", "seed"])
            for i, h in enumerate(self.h_tilde_axis):
                for j, nj in enumerate(self.NJ_axis):
                    w.writerow([repr(float(h / C.TWO_PI)), repr(float(nj / C.TWO_PI)),
                                repr(float(self.S_norm[i, j])), int(self.realized_N[i, j]),
                                int(self.seeds[i, j])])

    def metadata(self):
        return {"schema_version": SCHEMA_VERSION, "kind": "SweepGrid",
                "readout_time_s": self.readout_time, "failures": self.failures, **self.meta}


def _cell_seed(master_seed, index):
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1)[0])


def build_instance(cfg, h_tilde, NJ, seed, base=None):
    """ModeSet-derived fields and couplings realizing (h_tilde, NJ)."""
    if base is not None:
        ms, factors = base
    else:
        if cfg.instance == "uniform_1d":
            ms = ground_state_1d(cfg.target_N, 1.0, cfg.trap)
        else:
            ms = sample_occupied_modes(cfg.trap, cfg.target_N, cfg.T_over_TF, seed)
        factors = None if cfg.couplings == "all_to_all" else coupling_matrix(ms, 1.0, cfg.rescale)
    N = ms.N
    h0 = field_inhomogeneity(ms)
    fields = ms.fields * (h_tilde / h0) if h0 > 0 else np.zeros(N)
    J = NJ / N
    if cfg.couplings == "all_to_all":
        # uniform J_ij = NJ / N for i != j
        cm = CouplingMatrix.all_to_all(N, J)
    else:
        unit = mean_coupling(factors)
        cm = CouplingMatrix(scale_U=J / unit, factors=factors.factors, rescale=cfg.rescale)
    return ms, fields, cm


def scattering_length_for(cm, trap):
    """Scattering length (a0) implied by the coupling scale U."""
    return cm.scale_U / interaction_scale(1.0, trap)


def _run_cell(args):
    cfg, h_tilde, NJ, readout_time, seed, base = args
    try:
        ms, fields, cm = build_instance(cfg, h_tilde, NJ, seed, base)
        N = ms.N
        if cfg.steady_window:
            T = cfg.steady_window
            ts = np.linspace(0.0, T, 601)
        else:
            T = readout_time
            ts = np.array([0.0, T])
        traj = evolve(ramsey_start(N), fields, cm if NJ != 0 else None, free_schedule(T),
                      rtol=cfg.rtol, sample_times=ts, method=cfg.method)
        if cfg.dephasing:
            a = scattering_length_for(cm, cfg.trap) if NJ != 0 else 0.0
            traj = apply_dephasing(traj, a, cfg.Gamma0_inv, cfg.gamma_inv)
        if cfg.steady_window:
            S = steady_state_average(traj, cfg.window_fraction)
        else:
            S = float(traj.S[-1])
        return S, N, None
    except Exception as exc:  # recorded per cell, sweep continues
        return float("nan"), 0, f"{type(exc).__name__}: {exc}"


def default_workers():
    env = os.environ.get("CHMDPT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def sweep_phase_diagram(cfg, h_grid, NJ_grid, readout_time=C.READOUT_TIME, seed=0,
                        workers=None):
    """S(readout_time) over an (h_tilde, NJ) grid, both axes in rad/s.

    Cells are independent; cell k uses a seed derived from (seed, k), so the
    result does not depend on the number of workers.
    """
    h_grid = np.asarray(h_grid, float)
    NJ_grid = np.asarray(NJ_grid, float)
    if h_grid.size == 0 or NJ_grid.size == 0:
        raise ValueError("grids must be non-empty")
    base = None
    if cfg.mode == "rescale":
        if cfg.instance == "uniform_1d":
            ms = ground_state_1d(cfg.target_N, 1.0, cfg.trap)
        else:
            ms = sample_occupied_modes(cfg.trap, cfg.target_N, cfg.T_over_TF, seed)
        f = None if cfg.couplings == "all_to_all" else coupling_matrix(ms, 1.0, cfg.rescale)
        base = (ms, f)
    tasks = []
    seeds = np.zeros((len(h_grid), len(NJ_grid)), dtype=np.int64)
    for i, h in enumerate(h_grid):
        for j, nj in enumerate(NJ_grid):
            k = i * len(NJ_grid) + j
            s = seed if cfg.mode == "rescale" else _cell_seed(seed, k)
            seeds[i, j] = s
            tasks.append((cfg, h, nj, readout_time, s, base))
    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_cell, tasks, chunksize=1))
    else:
        results = [_run_cell(t) for t in tasks]
    S = np.array([r[0] for r in results]).reshape(seeds.shape)
    Ns = np.array([r[1] for r in results]).reshape(seeds.shape)
    failures = [{"cell": k, "error": r[2]} for k, r in enumerate(results) if r[2]]
    meta = {"config": cfg.to_dict(), "master_seed": seed,
            "config_hash": stable_hash(cfg.to_dict())}
    return SweepGrid(h_grid, NJ_grid, S, readout_time, Ns, seeds, failures, meta)


# ---------------------------------------------------------------------------
# critical line


@dataclass
class CriticalLine:
    points: list
    flagged: list
    slope: float
    intercept: float
    slope_through_origin: float
    threshold: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h_tilde_Hz", "NJc_Hz"])
            for h, nj in self.points:
                w.writerow([repr(h / C.TWO_PI), repr(nj / C.TWO_PI)])


def extract_critical_line(grid, threshold=0.1, sign=+1):
    """Boundary NJ_c(h_tilde) from threshold crossings of the normalized S.

    For each h_tilde row the crossing level is ``threshold`` times the value
    at the largest |NJ| of the requested sign (the large-J plateau); NJ_c is
    the linearly interpolated first upward crossing moving away from NJ = 0.
    Rows without a crossing are flagged and skipped. Points keep the sign of
    NJ; slope and intercept describe |NJ_c| against h_tilde.
    """
    nj = np.asarray(grid.NJ_axis, float) * sign
    S = grid.S_norm
    sel = nj > 0
    order = np.argsort(nj[sel])
    xs = nj[sel][order]
    points, flagged = [], []
    for i, h in enumerate(grid.h_tilde_axis):
        row = S[i][sel][order]
        if len(xs) < 2 or not np.all(np.isfinite(row)):
            flagged.append(float(h))
            continue
        level = threshold * row[-1]
        above = row > level
        if above[0] or not above.any():
            flagged.append(float(h))
            continue
        k = int(np.argmax(above))
        x0, x1, y0, y1 = xs[k - 1], xs[k], row[k - 1], row[k]
        xc = x0 + (level - y0) * (x1 - x0) / (y1 - y0)
        points.append((float(h), float(sign * xc)))
    if len(points) >= 2:
        hh = np.array([p[0] for p in points])
        cc = np.array([p[1] for p in points]) * sign
        slope, intercept = np.polyfit(hh, cc, 1)
        through = float(hh @ cc / (hh @ hh))
    else:
        slope = intercept = through = float("nan")
    return CriticalLine(points, flagged, float(slope), float(intercept), through, threshold)


def analytic_slope(params=None):
    """d(NJ_c)/d(h_tilde) from the closed-form critical coupling."""
    from .lax import AnalyticParams
    p = params or AnalyticParams()
    return 2.0 * np.sqrt(3.0) * p.alpha / (p.beta * np.pi)


def save_sweep(grid, prefix):
    grid.to_csv(f"{prefix}.csv")
    with open(f"{prefix}.json", "w") as fh:
        json.dump(grid.metadata(), fh, indent=2, sort_keys=True, default=str)
