"""Parameterized multi-Pauli rotation circuits and exact density-matrix simulation.

Every gate is ``exp(-i * angle / 2 * P)`` for a Pauli string ``P``; the angle is
``coefficient * theta[param_index]``, or just ``coefficient`` for constant
(non-trainable) rotations.  With noise enabled, a single-qubit Pauli channel
of strength ``p`` hits every support qubit after each gate.

Internally, consecutive gates that act on the same support are fused into one
superoperator block.  Folded copies ``G G^dag G`` therefore cost one block
application, and the parameter-shift sweep reuses forward states and
back-propagated observables instead of re-simulating every shifted circuit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .hamiltonians import (
    MAX_DENSE_QUBITS,
    PauliString,
    SizeError,
    WeightedPauliSum,
    parity_signs,
)
from .rng import substream

STATE_TOL = 1e-10
# forward-state cache budget for the adjoint parameter-shift sweep
ADJOINT_MEMORY_BYTES = 768 * 2**20


class TemplateFormatError(ValueError):
    """Malformed circuit-template file."""


class StateError(RuntimeError):
    """A simulated state violated trace/Hermiticity invariants."""


@dataclass(frozen=True)
class RotationGate:
    generator: PauliString
    param_index: int | None
    coefficient: float
    # index of the base-circuit gate this one was folded from; None = itself
    origin: int | None = None

    def __post_init__(self):
        if self.generator.is_identity:
            raise ValueError("rotation generator must have at least one non-I letter")

    @property
    def trainable(self) -> bool:
        return self.param_index is not None

    def angle(self, theta: np.ndarray) -> float:
        if self.param_index is None:
            return self.coefficient
        return self.coefficient * float(theta[self.param_index])

    def inverse(self) -> "RotationGate":
        return RotationGate(self.generator, self.param_index, -self.coefficient, self.origin)


@dataclass(frozen=True)
class ParamCircuit:
    n_qubits: int
    gates: tuple[RotationGate, ...]
    n_params: int
    reference: str | None = None

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        if self.n_params < 0:
            raise ValueError("n_params must be non-negative")
        for g in self.gates:
            if g.generator.n_qubits != self.n_qubits:
                raise ValueError(f"gate {g.generator} does not act on {self.n_qubits} qubits")
            if g.param_index is not None and not 0 <= g.param_index < self.n_params:
                raise ValueError(f"param_index {g.param_index} outside [0, {self.n_params})")
        if self.reference is not None:
            if len(self.reference) != self.n_qubits or set(self.reference) - {"0", "1"}:
                raise ValueError(f"bad reference bitstring {self.reference!r}")

    def occurrences(self) -> list[int]:
        """Indices of base trainable gates (one per shift-rule occurrence)."""
        return [i for i, g in enumerate(self.gates) if g.trainable and g.origin in (None, i)]


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "none"
    strength: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "depolarizing", "dephasing"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"noise strength {self.strength} outside [0, 1]")

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.strength > 0.0

    def pauli_probabilities(self) -> tuple[float, float, float, float]:
        p = self.strength
        if self.kind == "depolarizing":
            return (1.0 - p, p / 3, p / 3, p / 3)
        if self.kind == "dephasing":
            return (1.0 - p, 0.0, 0.0, p)
        return (1.0, 0.0, 0.0, 0.0)


NOISELESS = NoiseModel()


@dataclass(frozen=True)
class DensityState:
    n_qubits: int
    matrix: np.ndarray = field(repr=False)

    def check(self, tol: float = STATE_TOL, psd: bool = False) -> None:
        m = self.matrix
        dim = 1 << self.n_qubits
        if m.shape != (dim, dim):
            raise StateError(f"matrix shape {m.shape} does not match {self.n_qubits} qubits")
        if abs(np.trace(m) - 1.0) > tol:
            raise StateError(f"trace {np.trace(m)} deviates from 1")
        if np.max(np.abs(m - m.conj().T)) > tol:
            raise StateError("matrix is not Hermitian")
        if psd and np.linalg.eigvalsh(m)[0] < -1e-9:
            raise StateError("matrix has negative eigenvalues")


# --- circuit builders ---------------------------------------------------------


def plus_state_prep(n: int) -> list[RotationGate]:
    """Constant ``RY(pi/2)`` on every qubit: ``|0> -> |+>``."""
    out = []
    for q in range(n):
        letters = ["I"] * n
        letters[q] = "Y"
        out.append(RotationGate(PauliString("".join(letters)), None, math.pi / 2))
    return out


def build_qaoa_circuit(cost: WeightedPauliSum, p_layers: int) -> ParamCircuit:
    """QAOA on ``|+>^n``: per layer, ``exp(-i gamma H_C)`` then ``exp(-i beta sum X)``.

    Parameters are ordered ``(gamma_1, beta_1, gamma_2, beta_2, ...)``.  Every
    non-identity cost term becomes one rotation with coefficient ``2 h_k``.
    """
    if p_layers < 1:
        raise ValueError("p_layers must be >= 1")
    n = cost.n_qubits
    gates = plus_state_prep(n)
    for layer in range(p_layers):
        for h, ps in cost.non_identity_terms:
            gates.append(RotationGate(ps, 2 * layer, 2.0 * h))
        for q in range(n):
            letters = ["I"] * n
            letters[q] = "X"
            gates.append(RotationGate(PauliString("".join(letters)), 2 * layer + 1, 2.0))
    return ParamCircuit(n, tuple(gates), 2 * p_layers)


def parse_template(text: str) -> ParamCircuit:
    n = k = None
    ref = None
    gates: list[RotationGate] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        head = parts[0]
        try:
            if head == "qubits" and len(parts) == 2:
                n = int(parts[1])
            elif head == "params" and len(parts) == 2:
                k = int(parts[1])
            elif head == "ref" and len(parts) == 2:
                ref = parts[1]
            elif head == "rot" and len(parts) == 4:
                if n is None or k is None:
                    raise TemplateFormatError("'qubits' and 'params' must precede rotations")
                idx = None if parts[1] == "c" else int(parts[1])
                if idx is not None and not 0 <= idx < k:
                    raise TemplateFormatError(f"param index {idx} out of range [0, {k})")
                ps = PauliString(parts[3])
                if ps.n_qubits != n:
                    raise TemplateFormatError(f"rotation on {ps.n_qubits} qubits, expected {n}")
                gates.append(RotationGate(ps, idx, float(parts[2])))
            else:
                raise TemplateFormatError(f"unknown directive {line!r}")
        except (TemplateFormatError, ValueError) as exc:
            raise TemplateFormatError(f"line {lineno}: {exc}") from None
    if n is None or k is None:
        raise TemplateFormatError("template must declare 'qubits' and 'params'")
    try:
        return ParamCircuit(n, tuple(gates), k, ref)
    except ValueError as exc:
        raise TemplateFormatError(str(exc)) from None


def build_trotter_ansatz(template_path: str | Path) -> ParamCircuit:
    return parse_template(Path(template_path).read_text(encoding="utf-8"))


def format_template(circuit: ParamCircuit) -> str:
    lines = [f"qubits {circuit.n_qubits}", f"params {circuit.n_params}"]
    if circuit.reference is not None:
        lines.append(f"ref {circuit.reference}")
    for g in circuit.gates:
        idx = "c" if g.param_index is None else str(g.param_index)
        lines.append(f"rot {idx} {g.coefficient!r} {g.generator.letters}")
    return "\n".join(lines) + "\n"


# --- superoperator machinery --------------------------------------------------

_PAULI_1Q = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _local_pauli(letters: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for c in letters:
        out = np.kron(out, _PAULI_1Q[c])
    return out


@lru_cache(maxsize=64)
def _channel_superop(k: int, probs: tuple[float, float, float, float]) -> np.ndarray:
    """Superoperator (row-major vec) of the Pauli channel on all ``k`` qubits."""
    one = sum(p * np.kron(_PAULI_1Q[c], _PAULI_1Q[c].conj()) for p, c in zip(probs, "IXYZ"))
    # reorder single-qubit (a, b) superop into the k-qubit (a_1..a_k, b_1..b_k) layout
    out = np.ones((1, 1), dtype=complex)
    for _ in range(k):
        out = np.kron(out, one)
    perm = _interleave_perm(k)
    return out[np.ix_(perm, perm)]


@lru_cache(maxsize=16)
def _interleave_perm(k: int) -> np.ndarray:
    """Map (a_1..a_k, b_1..b_k) vec index to the kron order (a_1 b_1 ... a_k b_k)."""
    dim = 1 << k
    idx = np.empty(dim * dim, dtype=np.int64)
    for a in range(dim):
        for b in range(dim):
            kron_index = 0
            for j in range(k):
                abit = (a >> (k - 1 - j)) & 1
                bbit = (b >> (k - 1 - j)) & 1
                kron_index = (kron_index << 2) | (abit << 1) | bbit
            idx[a * dim + b] = kron_index
    return idx


def _rotation_superop(p_local: np.ndarray, angle: float) -> np.ndarray:
    dim = p_local.shape[0]
    u = math.cos(angle / 2) * np.eye(dim) - 1j * math.sin(angle / 2) * p_local
    return np.kron(u, u.conj())


@dataclass
class _Block:
    support: tuple[int, ...]
    gate_ids: list[int]
    local_paulis: list[np.ndarray]


def _blocks(circuit: ParamCircuit) -> list[_Block]:
    cached = circuit.__dict__.get("_blocks")
    if cached is not None:
        return cached
    blocks: list[_Block] = []
    for i, g in enumerate(circuit.gates):
        support = g.generator.support
        local = _local_pauli("".join(g.generator.letters[q] for q in support))
        if blocks and blocks[-1].support == support:
            blocks[-1].gate_ids.append(i)
            blocks[-1].local_paulis.append(local)
        else:
            blocks.append(_Block(support, [i], [local]))
    object.__setattr__(circuit, "_blocks", blocks)
    return blocks


def _block_superop(block: _Block, angles: np.ndarray, noise: NoiseModel) -> np.ndarray:
    k = len(block.support)
    chan = _channel_superop(k, noise.pauli_probabilities()) if noise.active else None
    # single-qubit channels on each support qubit commute, so the k-qubit
    # product channel applies them all at once
    total = None
    for gid, p_local in zip(block.gate_ids, block.local_paulis):
        m = _rotation_superop(p_local, angles[gid])
        if chan is not None:
            m = chan @ m
        total = m if total is None else m @ total
    return total


def _apply_local(rho: np.ndarray, superop: np.ndarray, support: tuple[int, ...], n: int) -> np.ndarray:
    """Apply a ``4^k x 4^k`` superoperator on ``support`` to a ``(2,)*2n`` tensor."""
    k = len(support)
    axes = list(support) + [n + q for q in support]
    op = superop.reshape((2,) * (4 * k))
    out = np.tensordot(op, rho, axes=(list(range(2 * k, 4 * k)), axes))
    return np.moveaxis(out, list(range(2 * k)), axes)


def gate_angles(circuit: ParamCircuit, theta: np.ndarray) -> np.ndarray:
    return np.array([g.angle(theta) for g in circuit.gates], dtype=float)


def _check_theta(circuit: ParamCircuit, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (circuit.n_params,):
        raise ValueError(f"theta has shape {theta.shape}, circuit expects ({circuit.n_params},)")
    if circuit.n_qubits > MAX_DENSE_QUBITS:
        raise SizeError(f"{circuit.n_qubits} qubits exceeds the simulation cap")
    return theta


def initial_tensor(circuit: ParamCircuit) -> np.ndarray:
    n = circuit.n_qubits
    dim = 1 << n
    rho = np.zeros((dim, dim), dtype=complex)
    idx = int(circuit.reference, 2) if circuit.reference else 0
    rho[idx, idx] = 1.0
    return rho.reshape((2,) * (2 * n))


def _run_blocks(circuit: ParamCircuit, angles: np.ndarray, noise: NoiseModel, keep: bool = False):
    n = circuit.n_qubits
    rho = initial_tensor(circuit)
    history = []
    for block in _blocks(circuit):
        if keep:
            history.append(rho)
        rho = _apply_local(rho, _block_superop(block, angles, noise), block.support, n)
    return rho, history


def simulate_angles(circuit: ParamCircuit, angles: np.ndarray, noise: NoiseModel = NOISELESS) -> DensityState:
    """Simulate with explicit per-gate angles (bypasses the parameter map)."""
    rho, _ = _run_blocks(circuit, np.asarray(angles, dtype=float), noise)
    dim = 1 << circuit.n_qubits
    state = DensityState(circuit.n_qubits, np.ascontiguousarray(rho).reshape(dim, dim))
    state.check()
    return state


def simulate(circuit: ParamCircuit, theta, noise: NoiseModel = NOISELESS) -> DensityState:
    theta = _check_theta(circuit, theta)
    return simulate_angles(circuit, gate_angles(circuit, theta), noise)


# --- observables ---------------------------------------------------------------


def pauli_expectation(state: DensityState, ps: PauliString) -> float:
    """``Tr(P rho)`` by index arithmetic, without building ``P``."""
    if ps.n_qubits != state.n_qubits:
        raise ValueError("qubit-count mismatch")
    x_mask, z_mask, n_y = ps.masks()
    c = np.arange(1 << state.n_qubits)
    val = (1j**n_y) * np.sum(parity_signs(c, z_mask) * state.matrix[c, c ^ x_mask])
    if abs(val.imag) > 1e-9:
        raise StateError(f"imaginary expectation residue {val.imag:.3e}")
    return float(val.real)


def term_expectations(state: DensityState, obs: WeightedPauliSum) -> np.ndarray:
    return np.array([pauli_expectation(state, p) for _, p in obs.non_identity_terms])


def expectation(state: DensityState, obs: WeightedPauliSum) -> float:
    if obs.n_qubits != state.n_qubits:
        raise ValueError("qubit-count mismatch")
    coeffs = np.array([c for c, _ in obs.non_identity_terms])
    return float(obs.constant + coeffs @ term_expectations(state, obs)) if len(coeffs) else obs.constant


def sample_terms(exact: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Per-term means of ``shots`` independent +/-1 outcomes."""
    p_plus = np.clip((1.0 + exact) / 2.0, 0.0, 1.0)
    plus = rng.binomial(shots, p_plus)
    return (2.0 * plus - shots) / shots


def sample_expectation(state: DensityState, obs: WeightedPauliSum, shots: int, seed: int | np.random.Generator) -> float:
    """Finite-shot estimate: independent Bernoulli sampling for every non-identity term."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "shots")
    coeffs = np.array([c for c, _ in obs.non_identity_terms])
    if not len(coeffs):
        return obs.constant
    est = sample_terms(term_expectations(state, obs), shots, rng)
    return float(obs.constant + coeffs @ est)


def _dual_tensor(obs: WeightedPauliSum) -> np.ndarray:
    n = obs.n_qubits
    return np.ascontiguousarray(obs.to_matrix().T).reshape((2,) * (2 * n))


def _contract(dual: np.ndarray, rho: np.ndarray) -> float:
    val = np.vdot(dual.conj(), rho)
    return float(val.real)


def shifted_expectations(
    circuit: ParamCircuit,
    theta,
    obs: WeightedPauliSum,
    noise: NoiseModel,
    shift: float = math.pi / 2,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Exact cost plus ``C(+shift)`` and ``C(-shift)`` for every base occurrence.

    A base occurrence and all gates folded from it are shifted together; the
    shift enters each copy with the sign of its coefficient relative to the
    base gate.  Returns ``(cost, plus, minus)`` with one entry per
    ``circuit.occurrences()``.
    """
    theta = _check_theta(circuit, theta)
    occ = circuit.occurrences()
    angles = gate_angles(circuit, theta)
    deltas = _shift_deltas(circuit, occ)
    n = circuit.n_qubits
    blocks = _blocks(circuit)
    state_bytes = 16 * 4**n
    if state_bytes * len(blocks) > ADJOINT_MEMORY_BYTES:
        return _shifted_direct(circuit, angles, obs, noise, deltas, shift)

    rho, history = _run_blocks(circuit, angles, noise, keep=True)
    dual = _dual_tensor(obs)
    cost = _contract(dual, rho)
    plus = np.zeros(len(occ))
    minus = np.zeros(len(occ))
    by_block: dict[int, list[int]] = {}
    gate_to_block = {gid: b for b, blk in enumerate(blocks) for gid in blk.gate_ids}
    for j, base in enumerate(occ):
        by_block.setdefault(gate_to_block[base], []).append(j)
    for b in range(len(blocks) - 1, -1, -1):
        blk = blocks[b]
        for j in by_block.get(b, ()):
            for sign, out in ((1.0, plus), (-1.0, minus)):
                shifted = angles + sign * shift * deltas[j]
                m = _block_superop(blk, shifted, noise)
                out[j] = _contract(dual, _apply_local(history[b], m, blk.support, n))
        m = _block_superop(blk, angles, noise)
        dual = _apply_local(dual, m.T, blk.support, n)
    return cost, plus, minus


def _shift_deltas(circuit: ParamCircuit, occ: list[int]) -> list[np.ndarray]:
    """Per-gate angle offsets (in units of the shift) for each base occurrence."""
    out = []
    for base in occ:
        c_base = circuit.gates[base].coefficient
        d = np.zeros(len(circuit.gates))
        for i, g in enumerate(circuit.gates):
            if i == base or g.origin == base:
                d[i] = g.coefficient / c_base
        out.append(d)
    return out


def _shifted_direct(circuit, angles, obs, noise, deltas, shift):
    cost = expectation(simulate_angles(circuit, angles, noise), obs)
    plus = np.array([expectation(simulate_angles(circuit, angles + shift * d, noise), obs) for d in deltas])
    minus = np.array([expectation(simulate_angles(circuit, angles - shift * d, noise), obs) for d in deltas])
    return cost, plus, minus


def shifted_states(circuit: ParamCircuit, theta, noise: NoiseModel, shift: float = math.pi / 2):
    """Yield ``(occurrence, sign, DensityState)`` for every shifted configuration."""
    theta = _check_theta(circuit, theta)
    occ = circuit.occurrences()
    angles = gate_angles(circuit, theta)
    for j, d in enumerate(_shift_deltas(circuit, occ)):
        for sign in (1.0, -1.0):
            yield j, sign, simulate_angles(circuit, angles + sign * shift * d, noise)


def statevector(circuit: ParamCircuit, theta) -> np.ndarray:
    """Noiseless pure-state simulation with dense matrix exponentials (test oracle)."""
    from scipy.linalg import expm

    theta = np.asarray(theta, dtype=float)
    n = circuit.n_qubits
    psi = np.zeros(1 << n, dtype=complex)
    psi[int(circuit.reference, 2) if circuit.reference else 0] = 1.0
    for g in circuit.gates:
        psi = expm(-0.5j * g.angle(theta) * g.generator.to_matrix()) @ psi
    return psi


def occurrence_coefficients(circuit: ParamCircuit) -> list[tuple[int, float]]:
    """``(param_index, coefficient)`` of each base occurrence."""
    return [(circuit.gates[i].param_index, circuit.gates[i].coefficient) for i in circuit.occurrences()]

