import csv
import json

import numpy as np
import pytest

from chmdpt import cli
from chmdpt.config import ConfigError, RunConfig, dump_config, load_config, parse_config
from chmdpt.dynamics import IntegrationError
from chmdpt.fitting import free_dephasing_signal


def _base(**over):
    d = {"schema_version": 1, "seed": 3,
         "sampling": {"target_N": 60, "T_over_TF": 0.4, "h_tilde_hz": 10.0},
         "interaction": {"NJ_hz": 20.0},
         "schedule": {"t_total_s": 0.05, "n_samples": 21},
         "sweep": {"h_tilde_hz": [5, 15, 2], "NJ_hz": [-20, 20, 3]}}
    for k, v in over.items():
        d[k] = {**d.get(k, {}), **v} if isinstance(v, dict) else v
    return d


def _write(tmp_path, d, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return p


def _read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# schema_version=1 config_hash=")
    rows = list(csv.reader(lines[1:]))
    return rows[0], np.array(rows[1:], float)


def test_round_trip_identity():
    cfg = parse_config(_base())
    again = parse_config(json.loads(dump_config(cfg)))
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


def test_defaults_are_valid():
    cfg = RunConfig()
    assert parse_config(cfg.to_dict()) == cfg


def test_unknown_key_names_its_path():
    d = _base(sampling={"taget_N": 10})
    with pytest.raises(ConfigError, match=r"sampling\.taget_N"):
        parse_config(d)


def test_exactly_one_interaction_source():
    with pytest.raises(ConfigError, match="interaction"):
        parse_config(_base(interaction={"B_mT": 20.5}))
    d = _base()
    d["interaction"] = {}
    with pytest.raises(ConfigError, match="interaction"):
        parse_config(d)


def test_schema_version_required():
    d = _base()
    del d["schema_version"]
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config(d)
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config({**_base(), "schema_version": 99})


def test_type_errors_reported_with_path():
    with pytest.raises(ConfigError, match=r"sampling\.target_N"):
        parse_config(_base(sampling={"target_N": "many"}))


def test_yaml_config(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text("schema_version: 1\nseed: 2\ninteraction: {a_a0: 10.0}\n")
    cfg = load_config(p)
    assert cfg.interaction.a_a0 == 10.0 and cfg.seed == 2


def test_thread_override(monkeypatch):
    cfg = parse_config(_base(threads=3))
    monkeypatch.delenv("CHMDPT_THREADS", raising=False)
    assert cfg.resolved_threads() == 3
    monkeypatch.setenv("CHMDPT_THREADS", "5")
    assert cfg.resolved_threads() == 5


def test_bad_config_exit_code(tmp_path):
    p = _write(tmp_path, _base(bogus=1))
    assert cli.main(["evolve", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("name", cli.SUBCOMMANDS)
def test_every_subcommand_runs_and_stamps(tmp_path, name):
    p = _write(tmp_path, _base())
    out = tmp_path / name
    assert cli.main([name, "--config", str(p), "--out", str(out), "--threads", "1"]) == 0
    cfg = load_config(p)
    files = [f for f in out.iterdir() if f.name != "config.resolved.json"]
    assert files
    for f in files:
        if f.suffix == ".csv":
            head = f.read_text().splitlines()[0]
            assert f"config_hash={cfg.config_hash()}" in head and "seed=3" in head
        elif f.suffix == ".json":
            d = json.loads(f.read_text())
            assert d["schema_version"] == 1 and d["config_hash"] == cfg.config_hash()
            assert d["seed"] == 3
        elif f.suffix == ".npz":
            z = np.load(f)
            assert int(z["schema_version"]) == 1 and str(z["config_hash"]) == cfg.config_hash()


def test_seed_flag_overrides(tmp_path):
    p = _write(tmp_path, _base())
    assert cli.main(["modes", "--config", str(p), "--out", str(tmp_path / "o"),
                     "--seed", "11"]) == 0
    assert json.loads((tmp_path / "o" / "modeset.json").read_text())["seed"] == 11


def test_evolve_without_coupling_matches_free_signal(tmp_path):
    p = _write(tmp_path, _base(interaction={"NJ_hz": 0.0},
                               schedule={"rtol": 1e-12, "n_samples": 200}))
    out = tmp_path / "o"
    assert cli.main(["evolve", "--config", str(p), "--out", str(out)]) == 0
    assert cli.main(["modes", "--config", str(p), "--out", str(out)]) == 0
    _, traj = _read_csv(out / "trajectory.csv")
    _, modes = _read_csv(out / "modes.csv")
    ref = free_dephasing_signal(modes[:, 3], traj[:, 0])
    assert np.max(np.abs(traj[:, 4] - ref)) < 1e-9


def test_rerun_gives_identical_csv(tmp_path):
    p = _write(tmp_path, _base())
    for d in ("a", "b"):
        assert cli.main(["sweep", "--config", str(p), "--out", str(tmp_path / d),
                         "--threads", "1"]) == 0
        assert cli.main(["evolve", "--config", str(p), "--out", str(tmp_path / d)]) == 0
    for f in ("sweep.csv", "trajectory.csv", "critical_line_positive.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_json_format(tmp_path):
    p = _write(tmp_path, _base())
    assert cli.main(["evolve", "--config", str(p), "--out", str(tmp_path / "o"),
                     "--format", "json"]) == 0
    d = json.loads((tmp_path / "o" / "trajectory.json").read_text())
    assert len(d["columns"]["time_s"]) == 21


def test_invariant_violation_exit_code(tmp_path):
    p = _write(tmp_path, _base(analysis={"invariant_tol": 1e-30}))
    assert cli.main(["evolve", "--config", str(p), "--out", str(tmp_path / "o")]) == 4


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise IntegrationError("step size underflow", 0.01)

    monkeypatch.setattr(cli, "evolve", boom)
    p = _write(tmp_path, _base())
    assert cli.main(["evolve", "--config", str(p), "--out", str(tmp_path / "o")]) == 3


def test_echo_recovery_reported(tmp_path):
    p = _write(tmp_path, _base(schedule={"rtol": 1e-11}))
    assert cli.main(["echo", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    d = json.loads((tmp_path / "o" / "echo.json").read_text())
    assert d["recovery_error"] < 1e-6
