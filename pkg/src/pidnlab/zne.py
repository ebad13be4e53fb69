"""Zero-noise extrapolation by local gate folding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .circuits import NoiseModel, ParamCircuit, RotationGate
from .estimators import ExecutionLedger, _accumulate, _shots_for, eval_cost, shift_values
from .hamiltonians import WeightedPauliSum

FIT_DEGREE = {"linear": 1, "quadratic": 2}


@dataclass(frozen=True)
class ZneConfig:
    lambdas: tuple[int, ...] = (1, 3, 5)
    fit: str = "linear"
    shots: int | None = None

    def __post_init__(self):
        lams = tuple(int(x) for x in self.lambdas)
        object.__setattr__(self, "lambdas", lams)
        if not lams or lams[0] != 1:
            raise ValueError("lambdas must start at 1")
        if any(b <= a for a, b in zip(lams, lams[1:])):
            raise ValueError("lambdas must be strictly increasing")
        if any(x % 2 == 0 for x in lams):
            raise ValueError("lambdas must be odd")
        if self.fit not in FIT_DEGREE:
            raise ValueError(f"unknown fit {self.fit!r}")
        if FIT_DEGREE[self.fit] >= len(lams):
            raise ValueError(f"{self.fit} fit needs more than {len(lams)} noise levels")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be >= 1 or None")


@dataclass(frozen=True)
class ZneResult:
    value: float
    raw: tuple[tuple[float, float], ...]
    fit_coefficients: tuple[float, ...]
    fit: str = "linear"
    noise_free: bool = field(default=False)


def fold_circuit(circuit: ParamCircuit, lam: int) -> ParamCircuit:
    """Replace every trainable gate ``G`` by ``G (G^dag G)^((lam - 1) / 2)``.

    Folded copies record the position of their base gate in ``origin`` so the
    shift rule can move them coherently.  Constant gates are left alone.
    """
    lam = int(lam)
    if lam < 1 or lam % 2 == 0:
        raise ValueError(f"fold factor must be an odd positive integer, got {lam}")
    if lam == 1:
        return circuit
    k = (lam - 1) // 2
    gates: list[RotationGate] = []
    new_pos: dict[int, int] = {}
    for i, g in enumerate(circuit.gates):
        if not g.trainable:
            gates.append(g)
            continue
        base_old = i if g.origin is None else g.origin
        if base_old == i:
            new_pos[i] = len(gates)
        origin = new_pos[base_old]
        first = RotationGate(g.generator, g.param_index, g.coefficient, origin)
        gates.append(first)
        inv = first.inverse()
        for _ in range(k):
            gates.extend((inv, first))
    return ParamCircuit(circuit.n_qubits, tuple(gates), circuit.n_params, circuit.reference)


def _design(lams, degree: int) -> np.ndarray:
    lams = np.asarray(lams, dtype=float)
    if len(np.unique(lams)) != len(lams):
        raise ValueError("extrapolation points need distinct noise factors")
    if len(lams) < degree + 1:
        raise ValueError(f"degree-{degree} fit needs at least {degree + 1} points")
    return np.vander(lams, degree + 1, increasing=True)


def extrapolation_weights(lams, fit: str = "linear") -> np.ndarray:
    """Row ``w`` with ``value_at_zero = w @ values`` (least squares is linear in the data)."""
    return np.linalg.pinv(_design(lams, FIT_DEGREE[fit]))[0]


def extrapolate(points, fit: str = "linear") -> tuple[float, np.ndarray]:
    """Least-squares polynomial fit; returns the intercept and ascending coefficients."""
    if fit not in FIT_DEGREE:
        raise ValueError(f"unknown fit {fit!r}")
    lams = [float(p[0]) for p in points]
    vals = np.array([float(p[1]) for p in points])
    coeffs = np.linalg.pinv(_design(lams, FIT_DEGREE[fit])) @ vals
    return float(coeffs[0]), coeffs


def _charge(ledger, obs, cfg, n_exec):
    if ledger is not None:
        ledger.charge(n_exec, n_exec * _shots_for(obs, cfg.shots))


def zne_cost_and_gradient(
    circuit: ParamCircuit,
    obs: WeightedPauliSum,
    theta,
    noise: NoiseModel,
    cfg: ZneConfig,
    ledger: ExecutionLedger | None = None,
    seed: int = 0,
    key: tuple = (),
    with_gradient: bool = True,
) -> tuple[ZneResult, np.ndarray | None, dict]:
    """Per-lambda cost (and shift-rule gradient), both extrapolated to zero noise.

    Charges ``L`` executions for the costs and ``2 m L`` more for the gradient.
    The returned dict carries the raw per-lambda gradients.
    """
    raw_costs, raw_grads = [], []
    for lam in cfg.lambdas:
        folded = fold_circuit(circuit, lam)
        if with_gradient:
            cost, plus, minus = shift_values(folded, obs, theta, noise, cfg.shots, seed, (*key, "lam", lam))
            raw_grads.append(_accumulate(folded, plus, minus))
        else:
            cost = eval_cost(folded, obs, theta, noise, cfg.shots, None, seed, (*key, "lam", lam)).value
        raw_costs.append(cost)
    m = len(circuit.occurrences())
    n_exec = len(cfg.lambdas) * (2 * m + 1 if with_gradient else 1)
    _charge(ledger, obs, cfg, n_exec)
    value, coeffs = extrapolate(list(zip(cfg.lambdas, raw_costs)), cfg.fit)
    result = ZneResult(
        value,
        tuple((float(l), float(c)) for l, c in zip(cfg.lambdas, raw_costs)),
        tuple(float(c) for c in coeffs),
        cfg.fit,
        not noise.active,
    )
    grad = None
    if with_gradient:
        w = extrapolation_weights(cfg.lambdas, cfg.fit)
        grad = w @ np.array(raw_grads)
    return result, grad, {"raw_gradients": raw_grads}


def zne_cost(circuit, obs, theta, noise, cfg: ZneConfig, ledger=None, seed: int = 0, key: tuple = ()) -> ZneResult:
    """``C_ZNE``: evaluate every folded circuit once and extrapolate; charges ``L``."""
    result, _, _ = zne_cost_and_gradient(circuit, obs, theta, noise, cfg, ledger, seed, key, with_gradient=False)
    return result


def zne_gradient(circuit, obs, theta, noise, cfg: ZneConfig, ledger=None, seed: int = 0, key: tuple = ()) -> np.ndarray:
    """Extrapolated shift-rule gradient; charges ``2 m L`` executions."""
    grads = []
    for lam in cfg.lambdas:
        folded = fold_circuit(circuit, lam)
        _, plus, minus = shift_values(folded, obs, theta, noise, cfg.shots, seed, (*key, "lam", lam))
        grads.append(_accumulate(folded, plus, minus))
    m = len(circuit.occurrences())
    _charge(ledger, obs, cfg, 2 * m * len(cfg.lambdas))
    return extrapolation_weights(cfg.lambdas, cfg.fit) @ np.array(grads)
