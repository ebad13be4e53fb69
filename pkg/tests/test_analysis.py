from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pidnlab.analysis import (
    CHEMICAL_ACCURACY,
    LandscapeGrid,
    UndefinedMetric,
    approximation_ratio,
    cosine_similarity,
    energy_error,
    is_chemically_accurate,
    landscape_metrics,
    low_frequency_ratio,
    scan_landscape,
    smooth,
    speedup,
)
from pidnlab.circuits import NoiseModel, ParamCircuit, RotationGate, build_qaoa_circuit, expectation, simulate, statevector
from pidnlab.hamiltonians import GraphInstance, PauliString, WeightedPauliSum, build_maxcut, build_tfim, exact_ground_energy, generate_3regular, max_cut_value

TRIANGLE = GraphInstance(3, ((0, 1), (1, 2), (0, 2)))


@dataclass
class FakeLog:
    m: list
    e: list

    def metrics(self):
        return self.m

    def executions(self):
        return self.e


def test_triangle_plus_state_ratio():
    h = build_maxcut(TRIANGLE)
    plus = ParamCircuit(3, tuple(RotationGate(PauliString(s), None, math.pi / 2) for s in ("YII", "IYI", "IIY")), 0)
    value = expectation(simulate(plus, []), h)
    assert value == pytest.approx(1.5, abs=1e-12)
    assert max_cut_value(TRIANGLE) == 2
    assert approximation_ratio("maxcut", value, 2).value == pytest.approx(0.75, abs=1e-12)


def test_ratio_is_one_at_optimum():
    assert approximation_ratio("maxcut", 5.0, 5.0).value == 1.0
    e = exact_ground_energy(build_tfim(4, 1.0, 0.7))
    assert approximation_ratio("tfim", e, e).value == 1.0
    assert approximation_ratio("sk", -0.5, -1.0).value == 2.0


def test_spin_ratio_domain_flag():
    r = approximation_ratio("tfim", 0.0, -3.0)
    assert not r.in_domain and math.isnan(r.value)
    assert not approximation_ratio("sk", 0.4, -3.0).in_domain
    with pytest.raises(ZeroDivisionError):
        approximation_ratio("maxcut", 1.0, 0.0)
    with pytest.raises(ValueError):
        approximation_ratio("molecule", -1.0, -1.1)


def test_chemical_accuracy_boundary():
    assert energy_error(-1.1, -1.1) == 0.0
    assert is_chemically_accurate(0.0)
    assert is_chemically_accurate(1.6e-3)
    assert CHEMICAL_ACCURACY == 1.6e-3
    assert not is_chemically_accurate(np.nextafter(1.6e-3, 1.0))
    assert not is_chemically_accurate(28e-3)


def test_cosine_examples():
    assert cosine_similarity([1, 0], [1, 0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(0.70710678, abs=1e-8)
    with pytest.raises(UndefinedMetric):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(ValueError):
        cosine_similarity([1, 0], [1, 0, 0])


@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.floats(0.01, 100),
)
def test_cosine_scale_invariance(g1, g2, a):
    g1, g2 = np.array(g1), np.array(g2)
    if np.linalg.norm(g1) < 1e-3 or np.linalg.norm(g2) < 1e-3:
        return
    c = cosine_similarity(g1, g2)
    assert -1.0 <= c <= 1.0
    assert cosine_similarity(a * g1, g2) == pytest.approx(c, abs=1e-12)
    assert cosine_similarity(-a * g1, g2) == pytest.approx(-c, abs=1e-12)


def test_constant_grid_metrics():
    m = landscape_metrics(np.full((32, 32), 2.5))
    assert m.delta_e_smooth == pytest.approx(0.0, abs=1e-12)
    assert m.sigma_smooth == pytest.approx(0.0, abs=1e-12)
    assert m.r_lf == pytest.approx(1.0, abs=1e-15)
    assert low_frequency_ratio(np.zeros((16, 16))) == 1.0


def test_checkerboard_has_no_low_frequency_power():
    i, j = np.indices((64, 64))
    board = (-1.0) ** (i + j)
    assert low_frequency_ratio(board, 2) == pytest.approx(0.0, abs=1e-20)
    # one low-frequency cosine: all power inside radius 2
    wave = np.cos(2 * np.pi * 2 * i / 64)
    assert low_frequency_ratio(wave, 2) == pytest.approx(1.0, abs=1e-12)
    assert low_frequency_ratio(wave, 1) == pytest.approx(0.0, abs=1e-20)


def test_radius_validation():
    with pytest.raises(ValueError):
        low_frequency_ratio(np.ones((32, 32)), 16)
    with pytest.raises(ValueError):
        landscape_metrics(np.ones((8, 8)))
    with pytest.raises(ValueError):
        LandscapeGrid((0, 1), ((0, 1), (0, 1)), 8, np.ones((8, 8)), np.zeros(2))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5))
def test_r_lf_range_and_mean_handling(seed, shift):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(16, 16))
    r = low_frequency_ratio(g)
    assert 0.0 <= r <= 1.0
    # only the zero-frequency bin moves when a constant is added
    centred = g - g.mean()
    p_ac = np.sum(np.abs(np.fft.fft2(centred)) ** 2)
    low_ac = low_frequency_ratio(centred) * p_ac
    dc = (g.mean() + shift) ** 2 * g.size**2
    assert low_frequency_ratio(g + shift) == pytest.approx((low_ac + dc) / (p_ac + dc), rel=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_smoothing_contracts(seed):
    g = np.random.default_rng(seed).normal(size=(32, 32))
    stats = [landscape_metrics(g, s) for s in (0.0, 0.5, 1.0, 2.0, 4.0)]
    for a, b in zip(stats, stats[1:]):
        assert b.delta_e_smooth <= a.delta_e_smooth + 1e-12
        assert b.sigma_smooth <= a.sigma_smooth + 1e-12
    np.testing.assert_allclose(smooth(g, 2.0).mean(), g.mean(), atol=1e-12)


def test_smoothing_wraps_around():
    g = np.zeros((16, 16))
    g[0, 0] = 1.0
    s = smooth(g, 1.0)
    assert s[15, 0] == pytest.approx(s[1, 0], abs=1e-15)
    assert s[0, 15] == pytest.approx(s[0, 1], abs=1e-15)


def test_identity_hamiltonian_flat_grid():
    c = build_qaoa_circuit(build_maxcut(GraphInstance(2, ((0, 1),))), 1)
    obs = WeightedPauliSum.from_terms([(0.7, "II")])
    grid = scan_landscape(c, obs, [0.0, 0.0], (0, 1), NoiseModel("none", 0.0), resolution=16)
    np.testing.assert_allclose(grid.values, 0.7, atol=1e-12)


def test_ideal_grid_is_two_pi_periodic():
    c = ParamCircuit(2, (RotationGate(PauliString("XI"), 0, 1.0), RotationGate(PauliString("ZZ"), 1, 1.0)), 2)
    obs = WeightedPauliSum.from_terms([(1.0, "YI"), (0.5, "ZI")])
    grid = scan_landscape(c, obs, [0.0, 0.0], (0, 1), NoiseModel("none", 0.0), resolution=32,
                          ranges=((0.0, 4 * math.pi), (0.0, 4 * math.pi)))
    np.testing.assert_allclose(grid.values[:16], grid.values[16:], atol=1e-12)
    np.testing.assert_allclose(grid.values[:, :16], grid.values[:, 16:], atol=1e-12)


def test_noisy_grid_contracts_inside_ideal_range():
    h = build_maxcut(generate_3regular(4, 1))
    c = build_qaoa_circuit(h, 1)
    ideal = scan_landscape(c, h, [0.0, 0.0], (0, 1), NoiseModel("none", 0.0), "ideal", resolution=16)
    noisy = scan_landscape(c, h, [0.0, 0.0], (0, 1), NoiseModel("depolarizing", 1e-3), "noisy", resolution=16)
    assert noisy.values.max() < ideal.values.max()
    assert noisy.values.min() > ideal.values.min()
    assert noisy.meta["noise_kind"] == "depolarizing"


def test_scan_validation():
    c = build_qaoa_circuit(build_maxcut(TRIANGLE), 1)
    h = build_maxcut(TRIANGLE)
    with pytest.raises(ValueError):
        scan_landscape(c, h, [0.0, 0.0], (0, 0), NoiseModel("none", 0.0), resolution=16)
    with pytest.raises(ValueError):
        scan_landscape(c, h, [0.0], (0, 1), NoiseModel("none", 0.0), resolution=16)
    with pytest.raises(ValueError):
        scan_landscape(c, h, [0.0, 0.0], (0, 1), NoiseModel("none", 0.0), "exact", resolution=16)


def test_ground_state_ratio_within_tolerance():
    h = build_tfim(3, 1.0, 0.5)
    e = exact_ground_energy(h)
    ratio = approximation_ratio("tfim", e + 1e-12, e).value
    assert abs(ratio - 1.0) < 1e-9


def test_speedup_examples():
    zne = FakeLog([0.5, 0.7, 0.9], [0, 280, 560])
    pidn = FakeLog([0.5, 0.9, 0.95], [0, 100, 101])
    assert speedup(zne, pidn, 0.9).value == pytest.approx(5.6, abs=1e-12)
    assert speedup(zne, zne, 0.9).value == 1.0
    low = speedup(FakeLog([0.5], [10]), FakeLog([0.6], [10]), 0.1)
    assert low.reached and low.value == 1.0
    miss = speedup(zne, FakeLog([0.5, 0.8], [0, 5]), 0.9)
    assert not miss.reached and math.isnan(miss.value) and miss.best_pidn == 0.8


def test_speedup_energy_metric():
    zne = FakeLog([0.1, 0.01, 1e-3], [10, 20, 30])
    pidn = FakeLog([0.1, 1e-3], [10, 15])
    assert speedup(zne, pidn, 1.6e-3, "energy").value == 2.0


def test_statevector_matches_density_expectation():
    h = build_maxcut(TRIANGLE)
    c = build_qaoa_circuit(h, 1)
    theta = np.array([0.4, 0.9])
    psi = statevector(c, theta)
    rho = simulate(c, theta).matrix
    np.testing.assert_allclose(np.outer(psi, psi.conj()), rho, atol=1e-12)
