"""Versioned run configuration.

Frequencies are ordinary Hz in the file and converted to rad/s only where a
library object is built. Unknown keys are rejected with their full path.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields as dc_fields

import numpy as np

from . import constants as C
from ._io import SCHEMA_VERSION, stable_hash
from .modes import TrapConfig


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending field path."""


@dataclass
class TrapSection:
    omega_hz: list = field(default_factory=lambda: list(C.EXPERIMENT_TRAP_HZ))
    delta_omega_hz: list = field(default_factory=lambda: list(C.DEFAULT_DELTA_OMEGA_HZ))
    atom_mass_kg: float = C.MASS_K40
    a_bg: float = C.FESHBACH_A_BG
    B0: float = C.FESHBACH_B0
    width: float = C.B_ZERO_CROSSING - C.FESHBACH_B0
    B_zc: float = C.B_ZERO_CROSSING

    def build(self):
        return TrapConfig.from_hz(self.omega_hz, self.delta_omega_hz, atom_mass=self.atom_mass_kg,
                                  a_bg=self.a_bg, B0=self.B0, width=self.width, B_zc=self.B_zc)


@dataclass
class SamplingSection:
    target_N: int = 500
    T_over_TF: float = 0.4
    fixed_n: bool = False
    instance: str = "thermal"  # thermal | uniform_1d
    h_tilde_hz: float | None = None  # rescale fields to this inhomogeneity
    subtract_mean_field: bool = False


@dataclass
class InteractionSection:
    """Exactly one of B_mT, a_a0 or NJ_hz sets the interaction strength."""

    B_mT: float | None = None
    a_a0: float | None = None
    NJ_hz: float | None = None
    rescale: float = 1.0
    couplings: str = "dense"  # dense | all_to_all


@dataclass
class ScheduleSection:
    kind: str = "free"  # free | echo
    t_total_s: float = 0.1
    coupling_sign: int = 1
    n_samples: int = 201
    rtol: float = 1e-8
    method: str = "DOP853"


@dataclass
class DephasingSection:
    enabled: bool = False
    Gamma0_inv_s: float | None = None  # None picks the plain or echo value
    gamma_inv_s: float = C.GAMMA_INV


@dataclass
class AnalysisSection:
    readout_time_s: float = C.READOUT_TIME
    window_fraction: float = 1.0 / 3.0
    alpha: float = 1.0
    beta: float = 1.0
    invariant_tol: float = 1e-5
    pair_tolerance: float = 3.0
    critical_threshold: float = 0.1


@dataclass
class SweepSection:
    h_tilde_hz: list = field(default_factory=lambda: [2.0, 30.0, 8])  # start, stop, num
    NJ_hz: list = field(default_factory=lambda: [-40.0, 40.0, 17])
    mode: str = "resample"
    steady_window_s: float | None = None


@dataclass
class RamseySection:
    atoms_per_shot: float | None = None
    n_shots: int = 40
    noise_sigma: float = 0.05
    min_shots: int = 10
    max_shots: int = 40


@dataclass
class OutputSection:
    directory: str = "out"
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    threads: int | None = None
    trap: TrapSection = field(default_factory=TrapSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    interaction: InteractionSection = field(default_factory=lambda: InteractionSection(NJ_hz=20.0))
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    dephasing: DephasingSection = field(default_factory=DephasingSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    ramsey: RamseySection = field(default_factory=RamseySection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        """Hash of everything that can change results (not threads or paths)."""
        d = self.to_dict()
        d.pop("threads")
        d.pop("output")
        return stable_hash(d)

    def resolved_threads(self):
        env = os.environ.get("CHMDPT_THREADS")
        if env:
            return max(1, int(env))
        if self.threads:
            return int(self.threads)
        return os.cpu_count() or 1

    @property
    def trap_config(self):
        return self.trap.build()


_CHOICES = {
    ("sampling", "instance"): {"thermal", "uniform_1d"},
    ("interaction", "couplings"): {"dense", "all_to_all"},
    ("schedule", "kind"): {"free", "echo"},
    ("schedule", "method"): {"RK45", "DOP853", "RK23", "Radau", "LSODA"},
    ("sweep", "mode"): {"resample", "rescale"},
}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dc_fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = ".".join(filter(None, [path, unknown[0]]))
        raise ConfigError(f"{where}: unknown key")
    kw = {}
    defaults = cls()
    for name, value in data.items():
        sub = getattr(defaults, name)
        p = f"{path}.{name}" if path else name
        if hasattr(sub, "__dataclass_fields__"):
            kw[name] = _build(type(sub), value, p)
        else:
            kw[name] = _coerce(sub, value, p)
    return cls(**kw)


def _coerce(default, value, path):
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        return list(value)
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number or string, got a boolean")
    if isinstance(default, int) and not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer")
    if isinstance(default, float) and not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number")
    if isinstance(default, float):
        return float(value)
    return value


def _validate(cfg):
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: {cfg.schema_version!r} != {SCHEMA_VERSION}")
    given = [k for k in ("B_mT", "a_a0", "NJ_hz") if getattr(cfg.interaction, k) is not None]
    if len(given) != 1:
        raise ConfigError("interaction: exactly one of B_mT, a_a0, NJ_hz must be set"
                          f" (got {given or 'none'})")
    for (sec, key), allowed in _CHOICES.items():
        v = getattr(getattr(cfg, sec), key)
        if v not in allowed:
            raise ConfigError(f"{sec}.{key}: {v!r} not in {sorted(allowed)}")
    if cfg.sampling.target_N < 2:
        raise ConfigError("sampling.target_N: must be at least 2")
    if cfg.schedule.t_total_s <= 0:
        raise ConfigError("schedule.t_total_s: must be positive")
    if cfg.schedule.coupling_sign not in (1, -1):
        raise ConfigError("schedule.coupling_sign: must be +1 or -1")
    for name in ("h_tilde_hz", "NJ_hz"):
        g = getattr(cfg.sweep, name)
        if len(g) != 3 or int(g[2]) < 1:
            raise ConfigError(f"sweep.{name}: expected [start, stop, num]")
    bad = set(cfg.output.formats) - {"csv", "json"}
    if bad:
        raise ConfigError(f"output.formats: unsupported {sorted(bad)}")
    try:
        cfg.trap.build()
    except ValueError as exc:
        raise ConfigError(f"trap: {exc}") from exc
    return cfg


def parse_config(data):
    """RunConfig from a mapping; missing sections take defaults."""
    if not isinstance(data, dict):
        raise ConfigError("<root>: expected a mapping")
    if "schema_version" not in data:
        raise ConfigError("schema_version: missing")
    return _validate(_build(RunConfig, data, ""))


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    if str(path).endswith((".yaml", ".yml")):
        import yaml
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"<file>: {exc}") from exc
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<file>: {exc}") from exc
    return parse_config(data)


def dump_config(cfg, path=None):
    text = json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def grid_from(spec_hz):
    """rad/s axis from a [start, stop, num] Hz triple."""
    start, stop, num = spec_hz
    return C.TWO_PI * np.linspace(float(start), float(stop), int(num))
