from __future__ import annotations

import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, circuit_gates, dense_pauli, dense_simulate
from pidnlab.circuits import NOISELESS, NoiseModel, ParamCircuit, RotationGate, build_qaoa_circuit, expectation, simulate
from pidnlab.estimators import ExecutionLedger, cost_and_gradient, eval_cost, gd_step, parameter_shift_gradient
from pidnlab.hamiltonians import GraphInstance, PauliString, WeightedPauliSum, build_maxcut, generate_3regular

Z1 = WeightedPauliSum.from_terms([(1.0, "Z")])
X_ROT = ParamCircuit(1, (RotationGate(PauliString("X"), 0, 1.0),), 1)
EDGE = build_maxcut(GraphInstance(2, ((0, 1),)))


def dense_cost(circuit, obs, noise=NOISELESS):
    m = sum(c * dense_pauli(p.letters) for c, p in obs.terms)
    return lambda th: float(np.real(np.trace(m @ dense_simulate(circuit_gates(circuit), circuit.n_qubits, th, noise.kind, noise.strength))))


def test_eval_cost_passthrough_and_ledger():
    c = build_qaoa_circuit(EDGE, 1)
    theta = np.array([math.pi / 2, math.pi / 8])
    ledger = ExecutionLedger()
    res = eval_cost(c, EDGE, theta, NOISELESS, None, ledger)
    assert res.value == expectation(simulate(c, theta), EDGE)
    assert res.value == pytest.approx(1.0, abs=1e-12)
    assert res.executions_charged == 1
    assert ledger.snapshot() == (1, 0)


def test_eval_cost_charges_shots_per_term():
    ledger = ExecutionLedger()
    eval_cost(build_qaoa_circuit(EDGE, 1), EDGE, [0.1, 0.2], NOISELESS, 100, ledger, seed=1)
    assert ledger.snapshot() == (1, 100)
    with pytest.raises(ValueError):
        eval_cost(X_ROT, Z1, [0.0], NOISELESS, 0)


def test_shift_rule_single_rotation():
    g = parameter_shift_gradient(X_ROT, Z1, [math.pi / 2], NOISELESS, None)
    assert g[0] == pytest.approx(-1.0, abs=1e-12)
    assert parameter_shift_gradient(X_ROT, Z1, [0.0], NOISELESS, None)[0] == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["none", "depolarizing", "dephasing"]))
def test_shift_rule_matches_finite_differences(seed, kind):
    rng = np.random.default_rng(seed)
    h = build_maxcut(generate_3regular(4, seed % 7))
    c = build_qaoa_circuit(h, 2)
    noise = NoiseModel(kind, 0.01 if kind != "none" else 0.0)
    theta = rng.uniform(-np.pi, np.pi, 4)
    grad = parameter_shift_gradient(c, h, theta, noise, None)
    fd = central_difference(dense_cost(c, h, noise), theta)
    np.testing.assert_allclose(grad, fd, atol=1e-6)


def test_gradient_ledger_counts_occurrences():
    h = build_maxcut(generate_3regular(4, 0))
    c = build_qaoa_circuit(h, 2)
    m = len(c.occurrences())
    assert m == 2 * (6 + 4)
    ledger = ExecutionLedger()
    parameter_shift_gradient(c, h, np.zeros(4), NOISELESS, None, ledger)
    assert ledger.executions == 2 * m
    cost_and_gradient(c, h, np.zeros(4), NOISELESS, 10, ledger, seed=3)
    assert ledger.executions == 2 * m + 2 * m + 1
    assert ledger.shots_total == (2 * m + 1) * 10 * 6


def test_shared_parameter_chain_rule_doubles():
    single = ParamCircuit(1, (RotationGate(PauliString("X"), 0, 0.5),), 1)
    double = ParamCircuit(1, (RotationGate(PauliString("X"), 0, 0.5),) * 2, 1)
    # two half-angle copies of the same rotation: C2(t) = C1(2t)
    g1 = parameter_shift_gradient(single, Z1, [0.6], NOISELESS, None)[0]
    g2 = parameter_shift_gradient(double, Z1, [0.3], NOISELESS, None)[0]
    assert g2 == pytest.approx(2 * g1, abs=1e-12)


def test_sampled_gradient_is_deterministic_and_unbiased():
    c = build_qaoa_circuit(EDGE, 1)
    theta = np.array([0.7, 0.3])
    a = parameter_shift_gradient(c, EDGE, theta, NOISELESS, 200, seed=9, key=("step", 0))
    b = parameter_shift_gradient(c, EDGE, theta, NOISELESS, 200, seed=9, key=("step", 0))
    np.testing.assert_array_equal(a, b)
    exact = parameter_shift_gradient(c, EDGE, theta, NOISELESS, None)
    mean = np.mean([parameter_shift_gradient(c, EDGE, theta, NOISELESS, 200, seed=s) for s in range(200)], axis=0)
    assert np.max(np.abs(mean - exact)) < 0.02


def test_gd_step():
    np.testing.assert_array_equal(gd_step([1.0, 2.0], [0.0, 0.0], 0.3), [1.0, 2.0])
    np.testing.assert_allclose(gd_step([1.0, 1.0], [1.0, -1.0], 0.1), [0.9, 1.1])
    with pytest.raises(ValueError):
        gd_step([1.0], [1.0, 2.0], 0.1)
    with pytest.raises(ValueError):
        gd_step([1.0], [1.0], 0.0)


@given(st.floats(0.01, 0.9), st.integers(1, 40))
def test_gd_on_quadratic_contracts_geometrically(eta, steps):
    theta0 = np.array([1.5, -2.0])
    theta = theta0
    for _ in range(steps):
        theta = gd_step(theta, theta, eta)
    np.testing.assert_allclose(theta, (1 - eta) ** steps * theta0, rtol=1e-10)


def test_ledger_concurrent_increments():
    ledger = ExecutionLedger()

    def work():
        for _ in range(1000):
            ledger.charge(1, 2)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert ledger.snapshot() == (8000, 16000)
    with pytest.raises(ValueError):
        ledger.charge(-1)
