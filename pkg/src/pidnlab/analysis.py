"""Metrics: approximation ratios, energy error, gradient cosine similarity,
landscape scans with smoothing/spectral statistics, and execution speedup."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .circuits import NOISELESS, NoiseModel, ParamCircuit, expectation, simulate
from .estimators import eval_cost
from .hamiltonians import WeightedPauliSum
from .zne import ZneConfig, zne_cost

CHEMICAL_ACCURACY = 1.6e-3
EVALUATORS = ("ideal", "noisy", "zne")


class UndefinedMetric(ValueError):
    """A metric whose inputs place it outside its domain."""


@dataclass(frozen=True)
class RatioResult:
    value: float
    in_domain: bool = True


def approximation_ratio(problem_kind: str, h_value: float, reference: float) -> RatioResult:
    """MaxCut: ``<H>/C_max``.  SK/TFIM: ``E_gs/<H>``; ``<H> >= 0`` is flagged out of domain."""
    if problem_kind == "maxcut":
        if reference == 0:
            raise ZeroDivisionError("C_max is zero")
        return RatioResult(h_value / reference)
    if problem_kind in ("sk", "tfim"):
        if h_value >= 0:
            return RatioResult(math.nan, in_domain=False)
        return RatioResult(reference / h_value)
    raise ValueError(f"no approximation ratio for problem kind {problem_kind!r}")


def energy_error(e: float, e_ref: float) -> float:
    return e - e_ref


def is_chemically_accurate(delta_e: float, threshold: float = CHEMICAL_ACCURACY) -> bool:
    return delta_e <= threshold


def cosine_similarity(g1, g2) -> float:
    """``g1.g2 / (|g1| |g2|)``; raises :class:`UndefinedMetric` for a zero vector."""
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    if g1.shape != g2.shape:
        raise ValueError("vectors differ in shape")
    n1, n2 = np.linalg.norm(g1), np.linalg.norm(g2)
    if n1 == 0 or n2 == 0:
        raise UndefinedMetric("cosine similarity of a zero vector")
    return float(np.clip(g1 @ g2 / (n1 * n2), -1.0, 1.0))


# --- landscapes ---------------------------------------------------------------


@dataclass
class LandscapeGrid:
    axes: tuple[int, int]
    ranges: tuple[tuple[float, float], tuple[float, float]]
    resolution: int
    values: np.ndarray
    frozen_theta: np.ndarray
    evaluator: str = "ideal"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.resolution < 16:
            raise ValueError("landscape grids need N >= 16")
        if self.values.shape != (self.resolution, self.resolution):
            raise ValueError("values must be N x N")

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(_axis(lo, hi, self.resolution) for lo, hi in self.ranges)


@dataclass(frozen=True)
class LandscapeMetrics:
    delta_e_smooth: float
    sigma_smooth: float
    r_lf: float


def _axis(lo: float, hi: float, n: int) -> np.ndarray:
    # half-open: the grid tiles one period without repeating the endpoint
    return lo + (hi - lo) * np.arange(n) / n


def scan_landscape(
    circuit: ParamCircuit,
    obs: WeightedPauliSum,
    frozen_theta,
    axes: tuple[int, int],
    noise: NoiseModel,
    evaluator: str = "ideal",
    resolution: int = 64,
    ranges=((0.0, 2 * math.pi), (0.0, 2 * math.pi)),
    shots: int | None = None,
    zne: ZneConfig = ZneConfig(),
    seed: int = 0,
    progress: Callable[[int], None] | None = None,
) -> LandscapeGrid:
    """``<obs>`` over a 2-D slice; ``ideal`` ignores ``noise``; ``shots`` applies to noisy and zne."""
    i, j = axes
    if i == j:
        raise ValueError("landscape axes must be distinct")
    if evaluator not in EVALUATORS:
        raise ValueError(f"unknown evaluator {evaluator!r}")
    theta = np.array(frozen_theta, dtype=float)
    if theta.shape != (circuit.n_params,):
        raise ValueError("frozen_theta has the wrong length")
    xs = _axis(*ranges[0], resolution)
    ys = _axis(*ranges[1], resolution)
    values = np.empty((resolution, resolution))
    zcfg = ZneConfig(zne.lambdas, zne.fit, shots)
    for a, x in enumerate(xs):
        for b, y in enumerate(ys):
            theta[i], theta[j] = x, y
            key = ("grid", a, b)
            if evaluator == "ideal":
                values[a, b] = expectation(simulate(circuit, theta, NOISELESS), obs)
            elif evaluator == "noisy":
                values[a, b] = eval_cost(circuit, obs, theta, noise, shots, None, seed, key).value
            else:
                values[a, b] = zne_cost(circuit, obs, theta, noise, zcfg, None, seed, key).value
        if progress is not None:
            progress(a)
    meta = dict(noise_kind=noise.kind, noise_strength=noise.strength, shots=shots, seed=seed,
                lambdas=list(zcfg.lambdas), fit=zcfg.fit)
    return LandscapeGrid((i, j), (tuple(ranges[0]), tuple(ranges[1])), resolution, values,
                         np.array(frozen_theta, dtype=float), evaluator, meta)


def smooth(values: np.ndarray, sigma_cells: float = 2.0) -> np.ndarray:
    """Circular Gaussian convolution, kernel truncated at 4 sigma."""
    if sigma_cells < 0:
        raise ValueError("sigma_cells must be non-negative")
    if sigma_cells == 0:
        return np.array(values, dtype=float)
    return gaussian_filter(np.asarray(values, dtype=float), sigma_cells, mode="wrap", truncate=4.0)


def low_frequency_ratio(values: np.ndarray, radius: int = 2) -> float:
    """Share of 2-D DFT power with ``max(|kx|, |ky|) <= radius``, zero frequency included."""
    values = np.asarray(values, dtype=float)
    n0, n1 = values.shape
    if radius < 0 or radius >= min(n0, n1) / 2:
        raise ValueError("low-frequency radius must satisfy 0 <= r < N/2")
    power = np.abs(np.fft.fft2(values)) ** 2
    kx = np.abs(np.fft.fftfreq(n0) * n0)
    ky = np.abs(np.fft.fftfreq(n1) * n1)
    low = np.maximum(kx[:, None], ky[None, :]) <= radius
    total = power.sum()
    if total == 0:
        return 1.0
    return float(power[low].sum() / total)


def landscape_metrics(grid: LandscapeGrid | np.ndarray, sigma_cells: float = 2.0, lowfreq_radius: int = 2) -> LandscapeMetrics:
    values = grid.values if isinstance(grid, LandscapeGrid) else np.asarray(grid, dtype=float)
    if min(values.shape) < 16:
        raise ValueError("landscape grids need N >= 16")
    r_lf = low_frequency_ratio(values, lowfreq_radius)
    s = smooth(values, sigma_cells)
    return LandscapeMetrics(float(s.max() - s.min()), float(s.std()), r_lf)


# --- speedup ------------------------------------------------------------------


@dataclass(frozen=True)
class SpeedupResult:
    value: float
    reached: bool
    executions_zne: int | None = None
    executions_pidn: int | None = None
    best_zne: float | None = None
    best_pidn: float | None = None


def _meets(value: float, target: float, metric: str) -> bool:
    if metric == "AR":
        return value >= target
    if metric == "energy":
        return value <= target
    raise ValueError(f"unknown metric {metric!r}")


def first_reaching(metrics: Sequence[float], executions: Sequence[int], target: float, metric: str) -> int | None:
    for v, e in zip(metrics, executions):
        if v is not None and not (isinstance(v, float) and math.isnan(v)) and _meets(v, target, metric):
            return int(e)
    return None


def speedup(log_zne, log_pidn, target: float, metric: str = "AR") -> SpeedupResult:
    """Executions to reach ``target`` under ZNE divided by the same under PIDN.

    Logs expose ``metrics()`` and ``executions()`` sequences (see ``workflow.RunLog``).
    """
    ez = first_reaching(log_zne.metrics(), log_zne.executions(), target, metric)
    ep = first_reaching(log_pidn.metrics(), log_pidn.executions(), target, metric)
    pick = max if metric == "AR" else min
    best_z = pick(log_zne.metrics()) if log_zne.metrics() else None
    best_p = pick(log_pidn.metrics()) if log_pidn.metrics() else None
    if ez is None or ep is None:
        return SpeedupResult(math.nan, False, ez, ep, best_z, best_p)
    return SpeedupResult(ez / ep, True, ez, ep, best_z, best_p)
