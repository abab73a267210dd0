"""Command-line entry point: ``chmdpt <subcommand> --config run.yaml``.

Each subcommand writes its products into the output directory. Tables go
to CSV (one ``#`` header line with schema version, config hash and seed)
or, with ``--format json``, into the JSON sidecar. Timestamps appear only
in JSON metadata, so CSV bodies are byte-stable across reruns.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import constants as C
from ._io import SCHEMA_VERSION, SchemaError, write_json
from .config import ConfigError, RunConfig, dump_config, grid_from, load_config
from .dynamics import (DiagnosticsError, IntegrationError, apply_dephasing, echo_schedule,
                       evolve, free_schedule, ramsey_start)
from .fitting import (SweepConfig, chi2_distance, extract_critical_line, fit_gap,
                      free_dephasing_signal, steady_state_average, sweep_phase_diagram)
from .lax import (AnalyticParams, RootFindingError, critical_coupling, gap_analytic, lax_spectrum,
                  steady_magnetization_analytic)
from .modes import (ConfigurationError, CouplingMatrix, ResampleError, coupling_matrix,
                    field_inhomogeneity, ground_state_1d, interaction_scale, mean_coupling,
                    sample_occupied_modes, scattering_length)
from .ramsey import mle_amplitude, simulate_shots

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INVARIANT = 0, 2, 3, 4
SUBCOMMANDS = ("modes", "evolve", "echo", "sweep", "lax", "fit", "ramsey")


class InvariantViolation(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# instance construction


def build_run_instance(cfg: RunConfig):
    """(mode_set, fields, couplings, info) described by a RunConfig."""
    trap = cfg.trap_config
    s = cfg.sampling
    if s.instance == "uniform_1d":
        ms = ground_state_1d(s.target_N, trap.delta_omega[0] or C.TWO_PI, trap)
    else:
        ms = sample_occupied_modes(trap, s.target_N, s.T_over_TF, cfg.seed, fixed_n=s.fixed_n)
    N = ms.N
    fields = ms.fields.copy()
    if s.h_tilde_hz is not None:
        h0 = field_inhomogeneity(fields)
        fields = fields * (C.TWO_PI * s.h_tilde_hz / h0) if h0 > 0 else fields
    if s.subtract_mean_field:
        fields = fields - fields.mean()

    it = cfg.interaction
    if it.NJ_hz is not None:
        J = C.TWO_PI * it.NJ_hz / N
        if it.couplings == "all_to_all":
            cm = CouplingMatrix.all_to_all(N, J)
        else:
            unit = coupling_matrix(ms, 1.0, it.rescale)
            cm = replace(unit, scale_U=J / mean_coupling(unit))
        a = cm.scale_U / interaction_scale(1.0, trap) if not cm.uniform else None
    else:
        a = it.a_a0 if it.a_a0 is not None else float(scattering_length(it.B_mT, trap))
        cm = coupling_matrix(ms, interaction_scale(a, trap), it.rescale)
        if it.couplings == "all_to_all":
            cm = CouplingMatrix.all_to_all(N, mean_coupling(cm) * N / (N - 1))
    NJ = N * mean_coupling(cm)
    info = {"realized_N": N, "h_tilde_Hz": field_inhomogeneity(fields) / C.TWO_PI,
            "NJ_Hz": NJ / C.TWO_PI, "scattering_length_a0": a}
    return ms, fields, cm, info


def _schedule(cfg, kind=None):
    sc = cfg.schedule
    kind = kind or sc.kind
    if kind == "echo":
        return echo_schedule(sc.t_total_s, sc.coupling_sign)
    return free_schedule(sc.t_total_s, sc.coupling_sign)


def _evolve(cfg, fields, cm, schedule, n_samples=None):
    n = n_samples or cfg.schedule.n_samples
    ts = np.linspace(0.0, schedule.total_time, max(n, 2))
    couplings = cm if np.any(cm.factors) and cm.scale_U != 0 else None
    return evolve(ramsey_start(len(fields)), fields, couplings, schedule, rtol=cfg.schedule.rtol,
                  sample_times=ts, method=cfg.schedule.method)


def _check_invariants(cfg, traj):
    d = traj.diagnostics
    tol = cfg.analysis.invariant_tol
    bad = {k: d[k] for k in ("norm_drift", "energy_drift") if d.get(k, 0.0) > tol}
    if bad:
        raise InvariantViolation(f"conserved quantities drifted beyond {tol}: {bad}")


def _dephase(cfg, traj, info):
    dp = cfg.dephasing
    a = abs(info["scattering_length_a0"] or 0.0)
    return apply_dephasing(traj, a, dp.Gamma0_inv_s, dp.gamma_inv_s)


# ---------------------------------------------------------------------------
# output


class Writer:
    def __init__(self, out, cfg, fmt, command):
        self.out = Path(out)
        self.cfg = cfg
        self.fmt = fmt
        self.command = command
        self.stamp = {"schema_version": SCHEMA_VERSION, "config_hash": cfg.config_hash(),
                      "seed": cfg.seed}
        self.written = []

    def table(self, name, columns):
        """Write a column dict as CSV, or as JSON with the metadata stamp."""
        keys = list(columns)
        cols = [np.asarray(columns[k]).ravel() for k in keys]
        if self.fmt == "json":
            path = self.out / f"{name}.json"
            write_json(path, {**self.stamp, "kind": "table", "name": name,
                              "columns": {k: c.tolist() for k, c in zip(keys, cols)}})
        else:
            path = self.out / f"{name}.csv"
            with open(path, "w", newline="") as fh:
                fh.write("# " + " ".join(f"{k}={v}" for k, v in self.stamp.items()) + "\n")
                w = csv.writer(fh)
                w.writerow(keys)
                for row in zip(*cols):
                    w.writerow([_fmt(v) for v in row])
        self.written.append(path.name)

    def array(self, name, values):
        """Binary matrix output; the stamp travels as extra npz members."""
        np.savez(self.out / f"{name}.npz", values=values,
                 **{k: np.asarray(v) for k, v in self.stamp.items()})
        self.written.append(f"{name}.npz")

    def document(self, name, payload):
        meta = {**self.stamp, "command": self.command,
                "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat()}
        write_json(self.out / f"{name}.json", {**payload, **meta})
        self.written.append(f"{name}.json")


def _fmt(v):
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    if isinstance(v, (np.bool_, bool)):
        return str(bool(v))
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    return str(v)


def _trajectory_columns(traj):
    return {"time_s": traj.times, "SX": traj.SX, "SY": traj.SY, "SZ": traj.SZ, "S": traj.S,
            "S_norm": traj.S_norm}


# ---------------------------------------------------------------------------
# subcommands


def cmd_modes(cfg, w):
    ms, fields, cm, info = build_run_instance(cfg)
    w.table("modes", {"n_x": ms.modes[:, 0], "n_y": ms.modes[:, 1], "n_z": ms.modes[:, 2],
                      "h_rad_s": fields})
    w.array("coupling_factors", cm.factors)
    d = ms.to_dict()
    d.pop("modes")
    d.pop("fields_rad_s")
    w.document("modeset", {"modeset": d, "coupling": cm.to_dict(), "statistics": info,
                           "mean_mode_index": ms.mean_mode_index().tolist()})


def cmd_evolve(cfg, w):
    ms, fields, cm, info = build_run_instance(cfg)
    traj = _evolve(cfg, fields, cm, _schedule(cfg))
    _check_invariants(cfg, traj)
    w.table("trajectory", _trajectory_columns(traj))
    payload = {"statistics": info, "diagnostics": traj.diagnostics}
    if cfg.dephasing.enabled:
        dtraj = _dephase(cfg, traj, info)
        w.table("trajectory_dephased", _trajectory_columns(dtraj))
        payload["dephasing"] = dtraj.meta.get("dephasing")
    if info["NJ_Hz"] == 0:
        ref = free_dephasing_signal(fields, traj.times)
        payload["max_abs_deviation_from_free_signal"] = float(np.max(np.abs(traj.S - ref)))
    w.document("evolve", payload)


def cmd_echo(cfg, w):
    ms, fields, cm, info = build_run_instance(cfg)
    traj = _evolve(cfg, fields, cm, _schedule(cfg, "echo"))
    _check_invariants(cfg, traj)
    w.table("echo_trajectory", _trajectory_columns(traj))
    N = traj.N
    payload = {"statistics": info, "diagnostics": traj.diagnostics,
               "recovery_ratio": float(traj.S[-1] / (N / 2.0)),
               "recovery_error": float(abs(traj.S[-1] - N / 2.0) / (N / 2.0))}
    if cfg.dephasing.enabled:
        dtraj = _dephase(cfg, traj, info)
        w.table("echo_trajectory_dephased", _trajectory_columns(dtraj))
        payload["recovery_ratio_dephased"] = float(dtraj.S[-1] / (N / 2.0))
    w.document("echo", payload)


def _sweep_config(cfg):
    s, it = cfg.sampling, cfg.interaction
    return SweepConfig(trap=cfg.trap_config, target_N=s.target_N, T_over_TF=s.T_over_TF,
                       instance=s.instance, couplings=it.couplings, rescale=it.rescale,
                       mode=cfg.sweep.mode, dephasing=cfg.dephasing.enabled,
                       Gamma0_inv=cfg.dephasing.Gamma0_inv_s or C.GAMMA0_INV_PLAIN,
                       gamma_inv=cfg.dephasing.gamma_inv_s, rtol=cfg.schedule.rtol,
                       method=cfg.schedule.method, steady_window=cfg.sweep.steady_window_s,
                       window_fraction=cfg.analysis.window_fraction)


def cmd_sweep(cfg, w):
    scfg = _sweep_config(cfg)
    h = grid_from(cfg.sweep.h_tilde_hz)
    nj = grid_from(cfg.sweep.NJ_hz)
    grid = sweep_phase_diagram(scfg, h, nj, cfg.analysis.readout_time_s, cfg.seed,
                               workers=cfg.resolved_threads())
    hh, jj = np.meshgrid(h / C.TWO_PI, nj / C.TWO_PI, indexing="ij")
    w.table("sweep", {"h_tilde_Hz": hh, "NJ_Hz": jj, "S_norm": grid.S_norm,
                      "realized_N": grid.realized_N, "seed": grid.seeds})
    lines = {}
    for sign, label in ((1, "positive"), (-1, "negative")):
        cl = extract_critical_line(grid, cfg.analysis.critical_threshold, sign)
        w.table(f"critical_line_{label}", {
            "h_tilde_Hz": [p[0] / C.TWO_PI for p in cl.points],
            "NJc_Hz": [p[1] / C.TWO_PI for p in cl.points]})
        lines[label] = {"slope": cl.slope, "intercept_Hz": cl.intercept / C.TWO_PI,
                        "slope_through_origin": cl.slope_through_origin,
                        "flagged_h_tilde_Hz": [f / C.TWO_PI for f in cl.flagged]}
    w.document("sweep", {"grid": grid.metadata(), "critical_lines": lines})
    if grid.failures:
        raise FloatingPointError(f"{len(grid.failures)} sweep cells failed")


def cmd_lax(cfg, w):
    ms, fields, cm, info = build_run_instance(cfg)
    if not cm.uniform:
        # the Lax construction needs uniform couplings; use the mean coupling
        cm = CouplingMatrix.all_to_all(ms.N, info["NJ_Hz"] * C.TWO_PI / ms.N)
    spec = lax_spectrum(fields, cm.uniform_value * cfg.schedule.coupling_sign,
                        ramsey_start(ms.N), cfg.analysis.pair_tolerance)
    w.table("lax_roots", {"re_rad_s": spec.roots.real, "im_rad_s": spec.roots.imag})
    p = AnalyticParams(cfg.analysis.alpha, cfg.analysis.beta)
    N = ms.N
    h_t = field_inhomogeneity(fields)
    nj = grid_from(cfg.sweep.NJ_hz)
    nj = nj[nj > 0]
    S_inf = np.array([steady_magnetization_analytic(h_t, N, x / N, p) for x in nj])
    gap = np.array([gap_analytic(h_t, N, x / N, p) for x in nj])
    w.table("analytic_curves", {"NJ_Hz": nj / C.TWO_PI, "S_inf_norm": 2 * S_inf / N,
                                "Omega_Hz": gap / C.TWO_PI})
    d = spec.to_dict()
    d.pop("roots")
    w.document("lax", {"spectrum": d, "statistics": info,
                       "NJc_Hz": N * critical_coupling(h_t, N, p) / C.TWO_PI,
                       "analytic_params": {"alpha": p.alpha, "beta": p.beta}})


def cmd_fit(cfg, w):
    ms, fields, cm, info = build_run_instance(cfg)
    traj = _evolve(cfg, fields, cm, _schedule(cfg, "free"))
    _check_invariants(cfg, traj)
    gf = fit_gap(traj, fields)
    ref = free_dephasing_signal(fields, traj.times)
    w.table("fit", {"time_s": traj.times, "S": traj.S, "S_free": ref,
                    "S_model": gf.model(traj.times, fields)})
    w.document("fit", {"statistics": info, "gap_fit": {
        "Omega_Hz": gf.Omega / C.TWO_PI, "damping_per_s": gf.damping,
        "S_infinity": gf.S_infinity, "crossover_time_s": gf.crossover_time,
        "residual": gf.residual, "converged": gf.converged},
        "chi2_to_free_signal": chi2_distance(traj, ref),
        "steady_state_S": steady_state_average(traj, cfg.analysis.window_fraction)})


def cmd_ramsey(cfg, w):
    ms, fields, cm, info = build_run_instance(cfg)
    T = cfg.analysis.readout_time_s
    traj = _evolve(cfg, fields, cm, free_schedule(T, cfg.schedule.coupling_sign), 2)
    if cfg.dephasing.enabled:
        traj = _dephase(cfg, traj, info)
    A = float(np.clip(2.0 * traj.S_perp[-1] / traj.N, 0.0, 1.0))
    r = cfg.ramsey
    rec = simulate_shots(A, r.atoms_per_shot, r.n_shots, r.noise_sigma, cfg.seed,
                         (r.min_shots, r.max_shots))
    est = mle_amplitude(rec)
    w.table("shots", {"shot_index": np.arange(rec.n_shots), "fraction_up": rec.fraction_up})
    w.document("ramsey", {"statistics": info, "true_amplitude": A,
                          "estimate": json.loads(est.to_json())})


COMMANDS = {"modes": cmd_modes, "evolve": cmd_evolve, "echo": cmd_echo, "sweep": cmd_sweep,
            "lax": cmd_lax, "fit": cmd_fit, "ramsey": cmd_ramsey}


def run_subcommand(name, cfg, out=None, fmt="csv"):
    """Run one subcommand and return its exit status."""
    out = Path(out or cfg.output.directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
        w = Writer(out, cfg, fmt, name)
        COMMANDS[name](cfg, w)
        dump_config(cfg, out / "config.resolved.json")
    except (ConfigError, ConfigurationError, SchemaError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, DiagnosticsError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (IntegrationError, RootFindingError, ResampleError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # remaining value errors come from inputs the schema cannot see
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def make_parser():
    p = argparse.ArgumentParser(prog="chmdpt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=False, help="YAML or JSON run configuration")
        s.add_argument("--seed", type=int, help="override the master seed")
        s.add_argument("--out", help="output directory")
        s.add_argument("--threads", type=int, help="worker processes for sweeps")
        s.add_argument("--format", choices=("csv", "json"), default="csv")
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.threads is not None:
            cfg = replace(cfg, threads=args.threads)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_subcommand(args.command, cfg, args.out, args.format)


if __name__ == "__main__":
    sys.exit(main())
