from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import X, Z, circuit_gates, dense_pauli, dense_simulate, kraus_channel
from pidnlab.circuits import (
    DensityState,
    NoiseModel,
    ParamCircuit,
    RotationGate,
    StateError,
    TemplateFormatError,
    build_qaoa_circuit,
    build_trotter_ansatz,
    expectation,
    format_template,
    parse_template,
    sample_expectation,
    simulate,
)
from pidnlab.hamiltonians import GraphInstance, PauliString, WeightedPauliSum, build_maxcut, generate_3regular

EDGE = build_maxcut(GraphInstance(2, ((0, 1),)))


def obs(letters: str, c: float = 1.0) -> WeightedPauliSum:
    return WeightedPauliSum.from_terms([(c, letters)])


def single_rotation(letters: str, coef: float = 1.0, prep=()) -> ParamCircuit:
    gates = [RotationGate(PauliString(p), None, a) for p, a in prep]
    gates.append(RotationGate(PauliString(letters), 0, coef))
    return ParamCircuit(len(letters), tuple(gates), 1)


def test_rotation_gate_validation():
    with pytest.raises(ValueError):
        RotationGate(PauliString("II"), 0, 1.0)
    with pytest.raises(ValueError):
        ParamCircuit(2, (RotationGate(PauliString("XX"), 3, 1.0),), 2)
    with pytest.raises(ValueError):
        ParamCircuit(2, (RotationGate(PauliString("XXX"), 0, 1.0),), 1)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel("amplitude", 0.1)
    with pytest.raises(ValueError):
        NoiseModel("dephasing", 1.5)
    assert not NoiseModel("depolarizing", 0.0).active


def test_qaoa_single_edge_structure():
    c = build_qaoa_circuit(EDGE, 1)
    trainable = [g for g in c.gates if g.trainable]
    assert c.n_params == 2
    assert [g.generator.letters for g in trainable] == ["ZZ", "XI", "IX"]
    assert [g.param_index for g in trainable] == [0, 1, 1]
    assert trainable[0].coefficient == 2 * -0.5
    assert all(g.coefficient == 2.0 for g in trainable[1:])
    with pytest.raises(ValueError):
        build_qaoa_circuit(EDGE, 0)


def test_qaoa_zero_parameters_give_plus_state():
    h = build_maxcut(generate_3regular(6, 0))
    c = build_qaoa_circuit(h, 2)
    rho = simulate(c, np.zeros(4)).matrix
    np.testing.assert_allclose(rho, np.full((64, 64), 1 / 64), atol=1e-12)
    for _, p in h.non_identity_terms:
        assert expectation(simulate(c, np.zeros(4)), WeightedPauliSum(6, ((1.0, p),))) == pytest.approx(0, abs=1e-12)


def test_qaoa_single_edge_optimum_statevector():
    c = build_qaoa_circuit(EDGE, 1)
    theta = np.array([math.pi / 2, math.pi / 8])
    rho = dense_simulate(circuit_gates(c), 2, theta)
    ref = float(np.real(np.trace(rho @ (0.5 * (np.eye(4) - dense_pauli("ZZ"))))))
    assert ref == pytest.approx(1.0, abs=1e-12)
    assert expectation(simulate(c, theta), EDGE) == pytest.approx(1.0, abs=1e-12)


def test_template_sharing_and_identity(tmp_path):
    c = parse_template("qubits 2\nparams 1\nrot 0 1.0 XY\nrot 0 -1.0 YX\n")
    assert c.n_params == 1 and len(c.gates) == 2
    empty = parse_template("qubits 3\nparams 1\nref 101\n")
    rho = simulate(empty, [0.7]).matrix
    assert rho[0b101, 0b101] == pytest.approx(1.0)
    path = tmp_path / "t.txt"
    path.write_text(format_template(c))
    assert build_trotter_ansatz(path) == c


def test_template_exchange_rotation():
    # exp(-i theta (X0Y1 - Y0X1)/2) at theta = pi/2 swaps |01> and |10>
    c = parse_template("qubits 2\nparams 1\nref 01\nrot 0 1.0 XY\nrot 0 -1.0 YX\n")
    rho = simulate(c, [math.pi / 2]).matrix
    assert abs(rho[0b10, 0b10]) == pytest.approx(1.0, abs=1e-12)


def test_template_errors():
    with pytest.raises(TemplateFormatError, match="line 3"):
        parse_template("qubits 2\nparams 1\nfoo 0 1 XX\n")
    with pytest.raises(TemplateFormatError, match="line 3"):
        parse_template("qubits 2\nparams 1\nrot 4 1.0 XX\n")


def test_constant_rotation_slot_is_not_a_parameter():
    c = parse_template("qubits 1\nparams 1\nrot c 1.5707963267948966 Y\nrot 0 1.0 Z\n")
    assert c.n_params == 1
    assert [g.trainable for g in c.gates] == [False, True]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["none", "depolarizing", "dephasing"]), st.floats(0, 0.2))
def test_simulate_matches_dense_oracle(seed, kind, p):
    rng = np.random.default_rng(seed)
    n = 3
    gates = []
    for _ in range(6):
        letters = "".join(rng.choice(list("IXYZ"), size=n))
        if set(letters) == {"I"}:
            letters = "X" + letters[1:]
        gates.append((letters, int(rng.integers(2)), float(rng.normal())))
    c = ParamCircuit(n, tuple(RotationGate(PauliString(l), i, a) for l, i, a in gates), 2)
    theta = rng.uniform(-np.pi, np.pi, 2)
    noise = NoiseModel(kind, p)
    np.testing.assert_allclose(simulate(c, theta, noise).matrix, dense_simulate(gates, n, theta, kind, p), atol=1e-12)


def test_noiseless_matches_pure_state_projector():
    c = build_qaoa_circuit(build_maxcut(generate_3regular(4, 1)), 2)
    theta = np.array([0.3, -0.7, 1.1, 0.2])
    rho = dense_simulate(circuit_gates(c), 4, theta)
    w, v = np.linalg.eigh(rho)
    psi = v[:, -1]
    np.testing.assert_allclose(simulate(c, theta).matrix, np.outer(psi, psi.conj()), atol=1e-10)


@pytest.mark.parametrize("p", [1e-3, 1e-2, 0.2])
def test_depolarized_flip(p):
    c = single_rotation("X")
    val = expectation(simulate(c, [math.pi], NoiseModel("depolarizing", p)), obs("Z"))
    assert val == pytest.approx(-(1 - 4 * p / 3), abs=1e-12)


@pytest.mark.parametrize("p", [1e-3, 1e-2, 0.2])
def test_dephased_plus_state(p):
    c = ParamCircuit(1, (RotationGate(PauliString("Y"), None, math.pi / 2),), 0)
    val = expectation(simulate(c, [], NoiseModel("dephasing", p)), obs("X"))
    assert val == pytest.approx(1 - 2 * p, abs=1e-12)


def test_p_zero_noise_is_noiseless():
    c = build_qaoa_circuit(EDGE, 2)
    theta = np.array([0.4, 0.1, -0.3, 0.9])
    a = simulate(c, theta, NoiseModel("depolarizing", 0.0)).matrix
    np.testing.assert_allclose(a, simulate(c, theta).matrix, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 500), st.sampled_from(["depolarizing", "dephasing"]))
def test_state_invariants_after_noisy_simulation(seed, kind):
    rng = np.random.default_rng(seed)
    c = build_qaoa_circuit(build_maxcut(generate_3regular(4, seed)), 2)
    state = simulate(c, rng.uniform(-3, 3, 4), NoiseModel(kind, 0.05))
    state.check(psd=True)
    assert abs(np.trace(state.matrix) - 1) < 1e-10
    assert np.max(np.abs(state.matrix - state.matrix.conj().T)) < 1e-10


def test_state_check_flags_violations():
    with pytest.raises(StateError):
        DensityState(1, np.diag([0.7, 0.7]).astype(complex)).check()
    with pytest.raises(StateError):
        DensityState(1, np.array([[1, 0.3], [0.1, 0]], dtype=complex)).check()
    with pytest.raises(StateError):
        DensityState(1, np.diag([1.5, -0.5]).astype(complex)).check(psd=True)


def test_depolarizing_contracts_toward_maximally_mixed():
    prep = (RotationGate(PauliString("Y"), None, 0.7), RotationGate(PauliString("Z"), None, 0.4))
    noise = NoiseModel("depolarizing", 0.05)
    dist = []
    for k in range(4):
        idle = tuple(RotationGate(PauliString("X"), None, 0.0) for _ in range(k))
        rho = simulate(ParamCircuit(1, prep + idle, 0), [], noise).matrix
        dist.append(np.linalg.norm(rho - np.eye(2) / 2))
    assert all(b < a for a, b in zip(dist, dist[1:]))


def test_expectation_basics():
    zero = DensityState(1, np.diag([1, 0]).astype(complex))
    assert expectation(zero, obs("Z")) == 1.0
    assert expectation(zero, obs("X")) == 0.0
    bell = np.zeros(4, dtype=complex)
    bell[[0, 3]] = 1 / np.sqrt(2)
    state = DensityState(2, np.outer(bell, bell.conj()))
    assert expectation(state, obs("ZZ")) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        expectation(state, obs("Z"))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.text(alphabet="IXYZ", min_size=3, max_size=3))
def test_expectation_matches_dense_trace(seed, letters):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    ref = np.real(np.trace(dense_pauli(letters) @ rho))
    assert expectation(DensityState(3, rho), obs(letters)) == pytest.approx(ref, abs=1e-12)


def test_sampling_eigenstate_is_exact():
    zero = DensityState(1, np.diag([1, 0]).astype(complex))
    one = DensityState(1, np.diag([0, 1]).astype(complex))
    for shots in (1, 7, 100):
        assert sample_expectation(zero, obs("Z"), shots, 3) == 1.0
        assert sample_expectation(one, obs("Z"), shots, 3) == -1.0
    with pytest.raises(ValueError):
        sample_expectation(zero, obs("Z"), 0, 3)


def test_sampling_identity_terms_are_exact_constants():
    plus = DensityState(1, np.full((2, 2), 0.5, dtype=complex))
    h = WeightedPauliSum.from_terms([(2.0, "I"), (1.0, "Z")])
    vals = [sample_expectation(plus, h, 10, s) for s in range(20)]
    assert all(1.0 <= v <= 3.0 for v in vals)
    assert sample_expectation(plus, WeightedPauliSum.from_terms([(2.0, "I")]), 10, 0) == 2.0


def test_sampling_converges_and_is_deterministic():
    plus = DensityState(1, np.full((2, 2), 0.5, dtype=complex))
    assert abs(sample_expectation(plus, obs("Z"), 10**6, 42)) < 5e-3
    assert sample_expectation(plus, obs("Z"), 100, 5) == sample_expectation(plus, obs("Z"), 100, 5)


def test_sampling_variance_law_at_zero_mean():
    plus = DensityState(1, np.full((2, 2), 0.5, dtype=complex))
    reps, shots = 200, 100
    vals = np.array([sample_expectation(plus, obs("Z"), shots, s) for s in range(reps)])
    target = 1.0 / shots
    # standard error of a sample variance: sigma^2 sqrt(2 / (R - 1)) for near-normal draws
    se = target * np.sqrt(2.0 / (reps - 1))
    assert abs(vals.var(ddof=1) - target) < 3 * se


def test_theta_length_checked():
    c = build_qaoa_circuit(EDGE, 1)
    with pytest.raises(ValueError):
        simulate(c, [0.1])


def test_kraus_oracle_sanity():
    rho = np.diag([1, 0]).astype(complex)
    out = kraus_channel(X @ rho @ X, 0, 1, "depolarizing", 0.3)
    assert np.real(np.trace(Z @ out)) == pytest.approx(-(1 - 0.4))
