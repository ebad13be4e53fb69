"""Cost and parameter-shift gradient estimation with execution accounting.

One *execution* is one full-Hamiltonian expectation estimate of one circuit
configuration at one noise level.  Sampled estimates additionally charge
``shots * (number of non-identity terms)`` to the shot counter.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .circuits import (
    NoiseModel,
    ParamCircuit,
    expectation,
    sample_terms,
    shifted_expectations,
    shifted_states,
    simulate,
    term_expectations,
)
from .hamiltonians import WeightedPauliSum
from .rng import substream

HALF_PI = math.pi / 2


@dataclass
class ExecutionLedger:
    executions: int = 0
    shots_total: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def charge(self, executions: int, shots: int = 0) -> None:
        if executions < 0 or shots < 0:
            raise ValueError("ledger counters only increase")
        with self._lock:
            self.executions += executions
            self.shots_total += shots

    def snapshot(self) -> tuple[int, int]:
        with self._lock:
            return self.executions, self.shots_total


@dataclass(frozen=True)
class CostEvaluation:
    value: float
    executions_charged: int


def _shots_for(obs: WeightedPauliSum, shots: int | None) -> int:
    return 0 if shots is None else shots * len(obs.non_identity_terms)


def _sampled_value(state, obs, shots, rng) -> float:
    coeffs = np.array([c for c, _ in obs.non_identity_terms])
    if not len(coeffs):
        return obs.constant
    return float(obs.constant + coeffs @ sample_terms(term_expectations(state, obs), shots, rng))


def eval_cost(
    circuit: ParamCircuit,
    obs: WeightedPauliSum,
    theta,
    noise: NoiseModel,
    shots: int | None,
    ledger: ExecutionLedger | None = None,
    seed: int = 0,
    key: tuple = (),
) -> CostEvaluation:
    """One expectation estimate; ``shots=None`` means exact."""
    if shots is not None and shots < 1:
        raise ValueError("shots must be >= 1 or None for exact")
    state = simulate(circuit, theta, noise)
    if shots is None:
        value = expectation(state, obs)
    else:
        value = _sampled_value(state, obs, shots, substream(seed, "cost", *key))
    if ledger is not None:
        ledger.charge(1, _shots_for(obs, shots))
    return CostEvaluation(value, 1)


def _accumulate(circuit: ParamCircuit, plus: np.ndarray, minus: np.ndarray) -> np.ndarray:
    grad = np.zeros(circuit.n_params)
    for j, base in enumerate(circuit.occurrences()):
        g = circuit.gates[base]
        grad[g.param_index] += 0.5 * g.coefficient * (plus[j] - minus[j])
    return grad


def shift_values(
    circuit: ParamCircuit,
    obs: WeightedPauliSum,
    theta,
    noise: NoiseModel,
    shots: int | None,
    seed: int = 0,
    key: tuple = (),
) -> tuple[float, np.ndarray, np.ndarray]:
    """Unshifted cost and the +/- shifted costs of every base occurrence (no charging)."""
    if shots is None:
        return shifted_expectations(circuit, theta, obs, noise, HALF_PI)
    m = len(circuit.occurrences())
    plus, minus = np.zeros(m), np.zeros(m)
    for j, sign, state in shifted_states(circuit, theta, noise, HALF_PI):
        rng = substream(seed, "shift", *key, j, 0 if sign > 0 else 1)
        (plus if sign > 0 else minus)[j] = _sampled_value(state, obs, shots, rng)
    cost = _sampled_value(simulate(circuit, theta, noise), obs, shots, substream(seed, "cost", *key))
    return cost, plus, minus


def parameter_shift_gradient(
    circuit: ParamCircuit,
    obs: WeightedPauliSum,
    theta,
    noise: NoiseModel,
    shots: int | None,
    ledger: ExecutionLedger | None = None,
    seed: int = 0,
    key: tuple = (),
) -> np.ndarray:
    """Two-term shift rule per gate occurrence, chain-rule factor ``c / 2``."""
    _, plus, minus = shift_values(circuit, obs, theta, noise, shots, seed, key)
    if ledger is not None:
        m = len(plus)
        ledger.charge(2 * m, 2 * m * _shots_for(obs, shots))
    return _accumulate(circuit, plus, minus)


def cost_and_gradient(
    circuit: ParamCircuit,
    obs: WeightedPauliSum,
    theta,
    noise: NoiseModel,
    shots: int | None,
    ledger: ExecutionLedger | None = None,
    seed: int = 0,
    key: tuple = (),
) -> tuple[float, np.ndarray]:
    """Cost and shift-rule gradient together; charges ``2m + 1`` executions."""
    cost, plus, minus = shift_values(circuit, obs, theta, noise, shots, seed, key)
    if ledger is not None:
        n_exec = 2 * len(plus) + 1
        ledger.charge(n_exec, n_exec * _shots_for(obs, shots))
    return cost, _accumulate(circuit, plus, minus)


def gd_step(theta, gradient, eta: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    if theta.shape != gradient.shape:
        raise ValueError("theta and gradient shapes differ")
    if eta <= 0:
        raise ValueError("eta must be positive")
    return theta - eta * gradient
