import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chmdpt import constants as C
from chmdpt.dynamics import (IntegrationError, Pulse, PulseSchedule, Segment, SpinState,
                             apply_dephasing, apply_pulse, dephasing_factor, dephasing_rate,
                             echo_schedule, effective_field, evolve, free_schedule,
                             init_polarized, mean_field_energy, ramsey_start, rotation_matrix)
from chmdpt.fitting import free_dephasing_signal
from chmdpt.modes import CouplingMatrix, TrapConfig, coupling_matrix, sample_occupied_modes


def _random_state(N, seed):
    v = np.random.default_rng(seed).normal(size=(N, 3))
    return SpinState(0.5 * v / np.linalg.norm(v, axis=1)[:, None])


@pytest.fixture(scope="module")
def dense_instance():
    ms = sample_occupied_modes(TrapConfig.from_hz(delta_omega_hz=(0.3, 0.6, 0.5)), 60, 0.4, 1)
    cm = coupling_matrix(ms, 1.0)
    cm = cm.scaled(C.TWO_PI * 20.0 / (ms.N * cm.matrix.mean()))
    return ms.fields, cm


def test_ramsey_start_along_x():
    s = ramsey_start(4).spins
    assert np.allclose(s, [[0.5, 0.0, 0.0]] * 4, atol=1e-15)


def test_single_spin_larmor_precession():
    h = C.TWO_PI * 3.0
    t = np.linspace(0, 0.5, 11)
    tr = evolve(ramsey_start(1), [h], None, free_schedule(0.5), rtol=1e-12, sample_times=t)
    assert np.allclose(tr.SX, 0.5 * np.cos(h * t), atol=1e-10)
    assert np.allclose(tr.SY, 0.5 * np.sin(h * t), atol=1e-10)


def test_rotation_matrix_is_orthogonal():
    R = rotation_matrix((0.0, 0.6, 0.8), 1.234)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-14)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_pulse_axis_must_be_unit():
    with pytest.raises(ValueError):
        rotation_matrix((1.0, 1.0, 0.0), np.pi)


def test_schedule_validation():
    with pytest.raises(ValueError):
        PulseSchedule([Segment(0.1)], [Pulse(0.05, (1, 0, 0), np.pi)])
    with pytest.raises(ValueError):
        PulseSchedule([Segment(-0.1)])
    with pytest.raises(ValueError):
        PulseSchedule([Segment(0.1, 2)])
    with pytest.raises(ValueError):
        PulseSchedule([Segment(0.1, 1, "sometimes")])


def test_mismatched_sizes_rejected():
    with pytest.raises(ValueError):
        evolve(ramsey_start(3), [1.0, 2.0], None, free_schedule(0.1))
    with pytest.raises(ValueError):
        evolve(ramsey_start(3), [1.0, 2.0, 3.0], CouplingMatrix.all_to_all(4, 1.0),
               free_schedule(0.1))


def test_bad_tolerance_rejected():
    with pytest.raises(ValueError):
        evolve(ramsey_start(2), [0.0, 1.0], None, free_schedule(0.1), rtol=0)


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        evolve(ramsey_start(2), [np.nan, 1.0], None, free_schedule(0.1))


def test_failed_integration_reports_time(monkeypatch):
    import chmdpt.dynamics as dyn

    class Failed:
        status, message = -1, "step size underflow"
        t = np.array([0.0, 0.03])

    monkeypatch.setattr(dyn, "solve_ivp", lambda *a, **k: Failed())
    with pytest.raises(IntegrationError) as exc:
        evolve(ramsey_start(2), [0.0, 1.0], None, free_schedule(0.1))
    assert exc.value.time == pytest.approx(0.03)


def test_dense_and_fast_path_agree():
    N = 30
    st_ = _random_state(N, 0)
    h = np.linspace(-5, 5, N)
    cm = CouplingMatrix.all_to_all(N, 0.7)
    fast = effective_field(st_, h, cm, fast_path=True)
    dense = effective_field(st_, h, cm, fast_path=False)
    assert np.allclose(fast, dense, rtol=0, atol=1e-12)
    a = evolve(st_, h, cm, free_schedule(0.5), rtol=1e-10, fast_path=True)
    b = evolve(st_, h, cm, free_schedule(0.5), rtol=1e-10, fast_path=False)
    assert np.allclose(a.S, b.S, atol=1e-7)


def test_effective_field_permutation_equivariant(dense_instance):
    h, cm = dense_instance
    N = len(h)
    st_ = _random_state(N, 2)
    perm = np.random.default_rng(5).permutation(N)
    cmp = CouplingMatrix(cm.scale_U, cm.factors[np.ix_(perm, perm)], cm.rescale)
    B = effective_field(st_, h, cm)
    Bp = effective_field(st_.spins[perm], h[perm], cmp)
    assert np.allclose(B[perm], Bp, atol=1e-12)


@given(st.integers(2, 40), st.integers(0, 10_000), st.sampled_from([1, -1]))
@settings(max_examples=15, deadline=None)
def test_invariants_random_all_to_all(N, seed, sign):
    rng = np.random.default_rng(seed)
    h = rng.normal(0, C.TWO_PI * 5, N)
    cm = CouplingMatrix.all_to_all(N, rng.normal(0, C.TWO_PI * 20) / N)
    tr = evolve(_random_state(N, seed), h, cm, free_schedule(0.05, sign), rtol=1e-10)
    d = tr.diagnostics
    assert d["norm_drift"] < 1e-8
    assert d["SZ_drift"] < 1e-8 * N
    assert d["energy_drift"] < 1e-6


def test_invariants_dense(dense_instance):
    h, cm = dense_instance
    tr = evolve(ramsey_start(len(h)), h, cm, free_schedule(0.1), rtol=1e-10)
    assert tr.diagnostics["norm_drift"] < 1e-8
    assert tr.diagnostics["energy_drift"] < 1e-6


def test_energy_definition_small_case():
    s = np.array([[0.5, 0, 0], [0, 0.5, 0], [0, 0, 0.5]])
    h = np.array([1.0, 2.0, 3.0])
    cm = CouplingMatrix.all_to_all(3, 0.4)
    pair = 0.0
    for i in range(3):
        for j in range(3):
            if i != j:
                pair += s[i] @ s[j]
    assert mean_field_energy(s, h, cm) == pytest.approx(h @ s[:, 2] - 0.4 * pair)
    assert mean_field_energy(s, h, cm) == pytest.approx(
        mean_field_energy(s, h, CouplingMatrix(0.4, cm.factors)))


def test_free_evolution_matches_closed_form():
    h = np.random.default_rng(3).normal(0, C.TWO_PI * 10, 200)
    t = np.linspace(0, 0.2, 50)
    tr = evolve(ramsey_start(200), h, None, free_schedule(0.2), rtol=1e-12, sample_times=t)
    assert np.max(np.abs(tr.S - free_dephasing_signal(h, t))) < 1e-9


def test_time_reversal_with_pi_pulses(dense_instance):
    h, cm = dense_instance
    N = len(h)
    start = _random_state(N, 7)
    tr = evolve(start, h, cm, echo_schedule(0.08), rtol=1e-11)
    # second half runs under -H in the pulsed frame, a closing pi pulse about
    # X undoes the frame change
    restored = apply_pulse(tr.final_state, (1.0, 0.0, 0.0), np.pi).spins
    assert np.allclose(restored, start.spins, atol=1e-8)


def test_sign_flip_reverses_time():
    N = 25
    h = np.random.default_rng(4).normal(0, 30, N)
    cm = CouplingMatrix.all_to_all(N, 2.0)
    start = _random_state(N, 8)
    fwd = evolve(start, h, cm, free_schedule(0.1, 1), rtol=1e-12)
    back = evolve(fwd.final_state, -h, cm, free_schedule(0.1, -1), rtol=1e-12)
    assert np.allclose(back.final_state.spins, start.spins, atol=1e-9)


def test_echo_recovers_magnetization():
    N = 80
    h = np.random.default_rng(1).normal(0, C.TWO_PI * 15, N)
    cm = CouplingMatrix.all_to_all(N, C.TWO_PI * 20 / N)
    tr = evolve(ramsey_start(N), h, cm, echo_schedule(0.1), rtol=1e-11)
    assert abs(tr.S[-1] - N / 2) / (N / 2) < 1e-7
    assert tr.S[len(tr.S) // 2] < 0.9 * N / 2


def test_pulse_before_sample_at_boundary():
    sched = echo_schedule(0.2)
    tr = evolve(init_polarized(1), [0.0], None, sched, sample_times=[0.0, 0.1, 0.2])
    assert tr.SZ[1] == pytest.approx(-0.5, abs=1e-12)
    assert tr.segment_index.tolist() == [0, 1, 1]


def test_snapshots_labelled():
    tr = evolve(ramsey_start(2), [0.0, 1.0], None, echo_schedule(0.1))
    labels = [name for name, _ in tr.per_spin_snapshots]
    assert labels == ["segment0_start", "segment0_end", "segment1_start", "segment1_end", "final"]


def test_dephasing_arithmetic():
    t = 0.1
    assert dephasing_factor(t, 0.0, 0.57, 600) == pytest.approx(np.exp(-0.1 / 0.57), abs=1e-12)
    assert dephasing_factor(t, 0.0, 0.25, 600) == pytest.approx(np.exp(-0.1 / 0.25), abs=1e-12)
    assert dephasing_rate(10.0, 0.57, 600) == pytest.approx(1 / 0.57 + 100 / 600)


def test_apply_dephasing_picks_echo_constant():
    tr = evolve(ramsey_start(3), [0.0, 0.0, 0.0], None, echo_schedule(0.1),
                sample_times=[0.0, 0.1])
    d = apply_dephasing(tr)
    assert d.S_perp[-1] / tr.S_perp[-1] == pytest.approx(np.exp(-0.1 / 0.25), rel=1e-12)
    assert np.array_equal(d.SZ, tr.SZ)


def test_residual_gradient_not_refocused():
    N = 20
    h = np.linspace(-10, 10, N)
    res = np.linspace(-3, 3, N)
    clean = evolve(ramsey_start(N), h, None, echo_schedule(0.2), rtol=1e-11)
    dirty = evolve(ramsey_start(N), h, None, echo_schedule(0.2), rtol=1e-11, residual_fields=res)
    assert clean.S[-1] == pytest.approx(N / 2, rel=1e-8)
    assert dirty.S[-1] < 0.99 * N / 2


def test_trajectory_csv(tmp_path):
    tr = evolve(ramsey_start(2), [0.0, 1.0], None, free_schedule(0.1), sample_times=[0, 0.05, 0.1])
    tr.save(tmp_path / "traj")
    lines = (tmp_path / "traj.csv").read_text().splitlines()
    assert lines[0] == "time_s,SX,SY,SZ,S,S_norm"
    assert len(lines) == 4
