import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from chmdpt import constants as C
from chmdpt.modes import (ConfigurationError, CouplingMatrix, ModeSet, TrapConfig, axial_field,
                          collective_coupling_hz, coupling_matrix, fermi_energy,
                          field_inhomogeneity, ground_state_1d, interaction_scale, mean_coupling,
                          overlap_1d, overlap_table, sample_occupied_modes, scattering_length)


@pytest.fixture(scope="module")
def trap():
    return TrapConfig.from_hz(delta_omega_hz=(0.3, 0.6, 0.5))


def test_zero_crossing_and_background(trap):
    assert scattering_length(C.B_ZERO_CROSSING, trap) == pytest.approx(0.0, abs=1e-12)
    assert scattering_length(trap.B0 + 2 * trap.width, trap) == pytest.approx(87.0, rel=1e-12)


def test_pole_is_an_error(trap):
    with pytest.raises(ConfigurationError):
        scattering_length(trap.B0, trap)


def test_inconsistent_feshbach_rejected():
    with pytest.raises(ConfigurationError):
        TrapConfig(width=0.5)


def test_interaction_scale_closed_form(trap):
    w = np.prod(trap.omega)
    expected = 4 * np.pi * 10 * C.BOHR * np.sqrt(C.MASS_K40 * w / C.HBAR)
    assert interaction_scale(10.0, trap) == pytest.approx(expected, rel=1e-12)
    assert interaction_scale(10.0, trap) == pytest.approx(54.34, rel=2e-3)


def test_fermi_energy_experiment_trap(trap):
    assert fermi_energy(30000, trap) / C.H_PLANCK == pytest.approx(42.5e3, rel=5e-3)
    assert fermi_energy(8000, trap) / fermi_energy(1000, trap) == pytest.approx(2.0, rel=1e-12)


def test_axial_field_is_linear():
    dw = (1.0, 2.0, 3.0)
    n = np.array([[1, 2, 3], [0, 0, 0], [4, 0, 1]])
    assert np.allclose(axial_field(n, dw), 2 * n @ np.array(dw))


def test_sampling_is_deterministic(trap):
    a = sample_occupied_modes(trap, 400, 0.4, seed=11)
    b = sample_occupied_modes(trap, 400, 0.4, seed=11)
    c = sample_occupied_modes(trap, 400, 0.4, seed=12)
    assert np.array_equal(a.modes, b.modes)
    assert not np.array_equal(a.modes, c.modes)


def test_sampling_atom_number_fluctuates_near_target(trap):
    Ns = [sample_occupied_modes(trap, 500, 0.4, seed=s).N for s in range(20)]
    assert abs(np.mean(Ns) - 500) < 25
    assert np.std(Ns) > 0


def test_zero_temperature_fills_lowest_modes(trap):
    ms = sample_occupied_modes(trap, 200, 0.0)
    w = np.array(trap.omega)
    chosen = ms.modes @ w
    assert ms.N == 200
    assert len(np.unique(ms.modes, axis=0)) == 200
    grid = np.stack(np.meshgrid(*[np.arange(40)] * 3, indexing="ij"), -1).reshape(-1, 3)
    all_e = np.sort(grid @ w)
    assert chosen.max() <= all_e[199] * (1 + 1e-12)


def test_fixed_n_option(trap):
    ms = sample_occupied_modes(trap, 500, 0.4, seed=3, fixed_n=True)
    assert abs(ms.N - 500) <= 10


def test_mean_mode_index_large_sample(trap):
    # per-axis mean mode index scales as E/(hbar omega_i); at N = 3e4 the
    # axis-averaged index lies in the 20-30 band
    ms = sample_occupied_modes(trap, 30000, 0.4, seed=0)
    assert 20 <= ms.mean_mode_index().mean() <= 30


def test_modeset_json_round_trip(trap):
    ms = sample_occupied_modes(trap, 100, 0.3, seed=5)
    back = ModeSet.from_dict(json.loads(ms.to_json()))
    assert np.array_equal(back.modes, ms.modes)
    assert np.allclose(back.fields, ms.fields, rtol=1e-15)
    assert back.trap == ms.trap


def test_with_inhomogeneity_hits_target(trap):
    ms = sample_occupied_modes(trap, 300, 0.4, seed=2)
    target = C.TWO_PI * 18.1
    assert field_inhomogeneity(ms.with_inhomogeneity(target)) == pytest.approx(target, rel=1e-12)


def test_ground_state_1d_uniform_ladder():
    ms = ground_state_1d(10, 2.0)
    assert np.allclose(np.diff(ms.fields), 4.0)
    assert ms.temperature == 0.0


# overlaps

def _oracle_overlaps(n_max, points=1_000_000, half_width=14.0):
    x = np.linspace(-half_width, half_width, points)
    dx = x[1] - x[0]
    out = np.zeros((n_max + 1, n_max + 1))
    for lo in range(0, points, 100_000):
        xx = x[lo:lo + 100_000]
        rows = []
        for n in range(n_max + 1):
            norm = np.exp(-0.5 * (n * np.log(2.0) + special.gammaln(n + 1) + 0.5 * np.log(np.pi)))
            rows.append((special.eval_hermite(n, xx) * np.exp(-0.5 * xx**2) * norm) ** 2)
        P = np.array(rows)
        out += (P * dx) @ P.T
    return out


def test_overlap_table_against_trapezoid():
    ref = _oracle_overlaps(30)
    assert np.allclose(overlap_table(30), ref, rtol=1e-8, atol=1e-14)


def test_overlap_low_orders_exact():
    assert overlap_1d(0, 0) == pytest.approx(1 / np.sqrt(2 * np.pi), rel=1e-13)
    assert overlap_1d(0, 1) == pytest.approx(0.5 / np.sqrt(2 * np.pi), rel=1e-13)


@given(st.integers(0, 60), st.integers(0, 60))
@settings(max_examples=40, deadline=None)
def test_overlap_symmetric_and_matches_table(n, m):
    assert overlap_1d(n, m) == overlap_1d(m, n)
    assert overlap_1d(n, m) == pytest.approx(overlap_table(60)[n, m], rel=1e-10)


def test_overlap_decay_exponent():
    dn = np.unique(np.geomspace(50, 500, 12).astype(int))
    vals = [overlap_1d(0, int(d)) for d in dn]
    slope = np.polyfit(np.log(dn), np.log(vals), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.05)


def test_coupling_matrix_structure(trap):
    ms = sample_occupied_modes(trap, 120, 0.4, seed=4)
    cm = coupling_matrix(ms, 2.0, rescale=0.5)
    M = cm.matrix
    assert np.allclose(M, M.T)
    assert np.all(np.diag(M) == 0)
    i, j = 3, 17
    n, m = ms.modes[i], ms.modes[j]
    direct = np.prod([overlap_1d(int(a), int(b)) for a, b in zip(n, m)])
    assert M[i, j] == pytest.approx(1.0 * direct, rel=1e-12)


def test_coupling_permutation_invariance(trap):
    ms = sample_occupied_modes(trap, 80, 0.4, seed=9)
    perm = np.random.default_rng(0).permutation(ms.N)
    a = coupling_matrix(ms, 1.0).matrix
    b = coupling_matrix(ms.modes[perm], 1.0).matrix
    assert np.allclose(a[np.ix_(perm, perm)], b, rtol=0, atol=0)


def test_all_to_all_mean_coupling():
    cm = CouplingMatrix.all_to_all(50, 0.2)
    assert mean_coupling(cm) == pytest.approx(0.2 * 49 / 50)
    assert collective_coupling_hz(cm) == pytest.approx(50 * 0.2 * 49 / 50 / C.TWO_PI)


def test_coupling_save_load(tmp_path, trap):
    ms = sample_occupied_modes(trap, 40, 0.4, seed=1)
    cm = coupling_matrix(ms, 3.0, 0.7)
    cm.save(tmp_path / "cm")
    back = CouplingMatrix.load(tmp_path / "cm")
    assert np.array_equal(back.factors, cm.factors)
    assert back.scale_U == cm.scale_U and back.rescale == cm.rescale
