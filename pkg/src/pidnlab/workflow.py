"""Optimization drivers: noisy and ZNE gradient descent, and the three-stage
surrogate pipeline (ZNE warm-up, surrogate fit, surrogate-driven updates)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from .analysis import UndefinedMetric, approximation_ratio, cosine_similarity
from .circuits import NOISELESS, NoiseModel, ParamCircuit, build_qaoa_circuit, build_trotter_ansatz, expectation, simulate
from .estimators import ExecutionLedger, cost_and_gradient, eval_cost, gd_step
from .hamiltonians import (
    GraphInstance,
    WeightedPauliSum,
    build_maxcut,
    build_sk,
    build_tfim,
    exact_ground_energy,
    load_hamiltonian,
    max_cut_value,
)
from .rng import substream
from .surrogate import (
    SurrogateModel,
    TrainConfig,
    TrajectoryRecord,
    forward,
    init_model,
    input_gradient,
    surrogate_step,
    train,
)
from .zne import ZneConfig, zne_cost_and_gradient

LOG_FORMAT = "pidnlab-runlog/1"
MODES = ("noisy", "zne", "pidn")


# --- problems -----------------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    """A Hamiltonian to optimize plus what is needed to score a cost value.

    ``objective`` is the observable whose expectation gradient descent
    minimizes; for MaxCut it is ``-H`` so that descent maximizes the cut.
    """

    kind: str
    hamiltonian: WeightedPauliSum
    objective: WeightedPauliSum
    reference: float
    name: str = ""

    @property
    def metric_name(self) -> str:
        return "energy" if self.kind == "molecule" else "AR"

    def metric(self, cost: float) -> float:
        """AR for spin problems, ``E - E_gs`` for molecules; ``nan`` when undefined."""
        if self.kind == "molecule":
            return cost - self.reference
        h_value = -cost if self.kind == "maxcut" else cost
        r = approximation_ratio(self.kind, h_value, self.reference)
        return r.value if r.in_domain else math.nan

    def qaoa(self, p_layers: int) -> ParamCircuit:
        if self.kind == "molecule":
            raise ValueError("molecular problems use a circuit template, not QAOA")
        return build_qaoa_circuit(self.hamiltonian, p_layers)


def maxcut_problem(graph: GraphInstance, name: str = "") -> Problem:
    h = build_maxcut(graph)
    return Problem("maxcut", h, -h, max_cut_value(graph), name)


def sk_problem(n: int, seed: int) -> Problem:
    h = build_sk(n, seed)
    return Problem("sk", h, h, exact_ground_energy(h), f"sk-n{n}-s{seed}")


def tfim_problem(n: int, J: float = 1.0, h: float = 1.0) -> Problem:
    ham = build_tfim(n, J, h)
    return Problem("tfim", ham, ham, exact_ground_energy(ham), f"tfim-n{n}")


def molecule_problem(path: str | Path) -> Problem:
    h = load_hamiltonian(path)
    return Problem("molecule", h, h, exact_ground_energy(h), Path(path).stem)


# --- configuration and logs ---------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    mode: str = "zne"
    t_init: int = 45
    eta: float = 0.05
    max_steps: int = 100
    budget: int | None = None
    zne: ZneConfig = ZneConfig()
    train: TrainConfig = TrainConfig()
    noise: NoiseModel = NOISELESS
    shots: int | None = None
    seed: int = 0
    init_scale: float = 0.1
    init_theta: tuple[float, ...] | None = None
    step_mode: str = "gradient"
    refit_every: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.mode == "pidn":
            if self.t_init < 2:
                raise ValueError("pidn needs t_init >= 2")
            if self.t_init > self.max_steps:
                raise ValueError("t_init must not exceed max_steps")
        if self.budget is not None and self.budget < 1:
            raise ValueError("budget must be positive")
        if self.step_mode not in ("gradient", "head"):
            raise ValueError("step_mode must be 'gradient' or 'head'")

    @property
    def zne_effective(self) -> ZneConfig:
        """ZNE settings with the per-lambda shot budget defaulting to ``shots``."""
        if self.zne.shots is None and self.shots is not None:
            return replace(self.zne, shots=self.shots)
        return self.zne

    def to_dict(self) -> dict:
        d = asdict(self)
        d["zne"]["lambdas"] = list(self.zne.lambdas)
        if self.init_theta is not None:
            d["init_theta"] = list(self.init_theta)
        return d


@dataclass
class StepRecord:
    step: int
    theta: list[float]
    c_noisy: float
    c_zne: float | None
    c_hat: float | None
    gradient: list[float]
    executions: int
    shots: int
    tag: str
    c_ideal: float | None = None
    metric: float | None = None


@dataclass
class RunLog:
    header: dict
    records: list[StepRecord] = field(default_factory=list)

    def metrics(self) -> list[float]:
        return [r.metric for r in self.records]

    def executions(self) -> list[int]:
        return [r.executions for r in self.records]

    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.records])

    def gradients(self) -> np.ndarray:
        return np.array([r.gradient for r in self.records])

    def tags(self) -> list[str]:
        return [r.tag for r in self.records]

    def dumps(self) -> str:
        lines = [json.dumps({"header": self.header}, sort_keys=True)]
        lines += [json.dumps(asdict(r), sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "RunLog":
        lines = Path(path).read_text().splitlines()
        header = json.loads(lines[0])["header"]
        return cls(header, [StepRecord(**json.loads(line)) for line in lines[1:] if line.strip()])


def _header(problem: Problem, circuit: ParamCircuit, cfg: RunConfig, extra: dict | None = None) -> dict:
    h = dict(
        format=LOG_FORMAT, version=__version__, problem=problem.kind, instance=problem.name,
        reference=problem.reference, metric=problem.metric_name, n_qubits=circuit.n_qubits,
        n_params=circuit.n_params, occurrences=len(circuit.occurrences()), config=cfg.to_dict(),
    )
    h.update(extra or {})
    return h


def initial_theta(cfg: RunConfig, n_params: int) -> np.ndarray:
    if cfg.init_theta is not None:
        theta = np.array(cfg.init_theta, dtype=float)
        if theta.shape != (n_params,):
            raise ValueError("init_theta has the wrong length")
        return theta
    return substream(cfg.seed, "init").uniform(-cfg.init_scale, cfg.init_scale, n_params)


def ideal_cost(problem: Problem, circuit: ParamCircuit, theta) -> float:
    """Uncharged noiseless monitor used only for scoring progress."""
    return expectation(simulate(circuit, theta, NOISELESS), problem.objective)


def _f(x) -> float | None:
    return None if x is None else float(x)


class _Recorder:
    def __init__(self, problem, circuit, ledger, log):
        self.problem, self.circuit, self.ledger, self.log = problem, circuit, ledger, log

    def add(self, step, theta, c_noisy, c_zne, c_hat, grad, tag):
        c_ideal = ideal_cost(self.problem, self.circuit, theta)
        ex, sh = self.ledger.snapshot()
        self.log.records.append(StepRecord(
            step, [float(x) for x in theta], float(c_noisy), _f(c_zne), _f(c_hat),
            [float(x) for x in grad], ex, sh, tag, c_ideal, float(self.problem.metric(c_ideal)),
        ))

    def over_budget(self, budget) -> bool:
        return budget is not None and self.ledger.executions >= budget


# --- drivers --------------------------------------------------------------------


def run_noisy(problem: Problem, circuit: ParamCircuit, cfg: RunConfig, theta0=None, ledger=None, start_step: int = 0) -> RunLog:
    """Shift-rule gradient descent on the noisy cost; ``2m + 1`` executions per step."""
    ledger = ledger or ExecutionLedger()
    log = RunLog(_header(problem, circuit, cfg))
    rec = _Recorder(problem, circuit, ledger, log)
    theta = initial_theta(cfg, circuit.n_params) if theta0 is None else np.array(theta0, dtype=float)
    for t in range(start_step, cfg.max_steps):
        cost, grad = cost_and_gradient(circuit, problem.objective, theta, cfg.noise, cfg.shots, ledger, cfg.seed, ("shots", "noisy", t))
        rec.add(t, theta, cost, None, None, grad, "baseline")
        theta = gd_step(theta, grad, cfg.eta)
        if rec.over_budget(cfg.budget):
            break
    return log


def _zne_steps(problem, circuit, cfg, theta, ledger, rec, steps: Iterable[int], tag: str, key: str, records=None):
    for t in steps:
        res, grad, _ = zne_cost_and_gradient(circuit, problem.objective, theta, cfg.noise, cfg.zne_effective, ledger, cfg.seed, ("shots", key, t))
        nxt = gd_step(theta, grad, cfg.eta)
        rec.add(t, theta, res.raw[0][1], res.value, None, grad, tag)
        if records is not None:
            records.append(TrajectoryRecord(t, theta.copy(), res.raw[0][1], res.value, grad.copy(), nxt.copy()))
        theta = nxt
        if rec.over_budget(cfg.budget):
            break
    return theta


def run_zne(problem: Problem, circuit: ParamCircuit, cfg: RunConfig, theta0=None, ledger=None, start_step: int = 0) -> RunLog:
    """Gradient descent on ZNE-extrapolated costs and gradients; ``L (2m + 1)`` per step."""
    ledger = ledger or ExecutionLedger()
    log = RunLog(_header(problem, circuit, cfg))
    rec = _Recorder(problem, circuit, ledger, log)
    theta = initial_theta(cfg, circuit.n_params) if theta0 is None else np.array(theta0, dtype=float)
    _zne_steps(problem, circuit, cfg, theta, ledger, rec, range(start_step, cfg.max_steps), "baseline", "zne")
    return log


class SurrogateTrainingError(RuntimeError):
    def __init__(self, message: str, stage1_log: RunLog):
        super().__init__(message)
        self.stage1_log = stage1_log


@dataclass
class PidnResult:
    log: RunLog
    model: SurrogateModel | None
    records: list[TrajectoryRecord]
    loss_curve: list[tuple[float, float, float]]


def run_pidn(problem: Problem, circuit: ParamCircuit, cfg: RunConfig, ledger=None) -> PidnResult:
    """Stage I: ZNE descent for ``t_init`` steps.  Stage II: fit the surrogate.
    Stage III: one noisy execution per step, update from the surrogate."""
    ledger = ledger or ExecutionLedger()
    log = RunLog(_header(problem, circuit, cfg))
    rec = _Recorder(problem, circuit, ledger, log)
    theta = initial_theta(cfg, circuit.n_params)
    records: list[TrajectoryRecord] = []
    theta = _zne_steps(problem, circuit, cfg, theta, ledger, rec, range(cfg.t_init), "stage1", "zne", records)
    if len(records) < cfg.t_init or cfg.t_init == cfg.max_steps:
        # budget ran out during Stage I, or no Stage III requested
        return PidnResult(log, None, records, [])
    try:
        result = train(init_model(circuit.n_params, cfg.train), records, cfg.train)
    except (FloatingPointError, ValueError) as exc:
        raise SurrogateTrainingError(f"surrogate training failed: {exc}", log) from exc
    model, curve = result.model, list(result.loss_curve)

    thetas = [r.theta for r in records]
    costs = [r.c_noisy for r in records]
    for t in range(cfg.t_init, cfg.max_steps):
        if cfg.refit_every and (t - cfg.t_init) % cfg.refit_every == 0 and t > cfg.t_init:
            # optional: spend one ZNE step on fresh supervision and warm-start refit
            res, grad, _ = zne_cost_and_gradient(circuit, problem.objective, theta, cfg.noise, cfg.zne_effective, ledger, cfg.seed, ("shots", "refit", t))
            nxt = gd_step(theta, grad, cfg.eta)
            records.append(TrajectoryRecord(t, theta.copy(), res.raw[0][1], res.value, grad.copy(), nxt.copy()))
            refit = train(model, records, replace(cfg.train, epochs=max(1, cfg.train.epochs // 10)), fit_norm=False)
            model = refit.model
            curve += refit.loss_curve
            rec.add(t, theta, res.raw[0][1], res.value, None, grad, "stage3")
            thetas.append(theta.copy())
            costs.append(res.raw[0][1])
            theta = nxt
        else:
            # same shot budget as the lambda=1 point the surrogate was trained on
            c_noisy = eval_cost(circuit, problem.objective, theta, cfg.noise, cfg.zne_effective.shots, ledger, cfg.seed, ("shots", "stage3", t)).value
            thetas.append(theta.copy())
            costs.append(c_noisy)
            prefix = (np.array(thetas), np.array(costs))
            c_hat, _ = forward(model, prefix)
            nxt = surrogate_step(model, prefix, cfg.eta, cfg.step_mode)
            grad = input_gradient(model, prefix) if cfg.step_mode == "gradient" else (theta - nxt) / cfg.eta
            rec.add(t, theta, c_noisy, None, c_hat, grad, "stage3")
            theta = nxt
        if rec.over_budget(cfg.budget):
            break
    return PidnResult(log, model, records, curve)


def reference_continuation(problem: Problem, circuit: ParamCircuit, cfg: RunConfig, source: RunLog) -> RunLog:
    """Independent ZNE descent from ``theta_{t_init}`` for as many steps as Stage III ran.

    Uses its own ledger, so the source run's accounting is untouched.
    """
    stage3 = [r for r in source.records if r.tag == "stage3"]
    if not stage3:
        raise ValueError("source log has no Stage III steps")
    start = stage3[0].step
    ref_cfg = replace(cfg, mode="zne", max_steps=start + len(stage3), budget=None)
    return run_zne(problem, circuit, ref_cfg, theta0=stage3[0].theta, ledger=ExecutionLedger(), start_step=start)


# --- fidelity measures ----------------------------------------------------------


def _cos_or_nan(a, b) -> float:
    try:
        return cosine_similarity(a, b)
    except UndefinedMetric:
        return math.nan


def stage1_replay_cosines(model: SurrogateModel, records: list[TrajectoryRecord]) -> list[float]:
    """Surrogate input gradient versus recorded ``g_ZNE`` along the training prefixes."""
    thetas = np.array([r.theta for r in records])
    costs = np.array([r.c_noisy for r in records])
    return [_cos_or_nan(input_gradient(model, (thetas[: t + 1], costs[: t + 1])), r.g_zne) for t, r in enumerate(records)]


def tracking_cosines(log: RunLog, reference: RunLog, tag: str = "stage3") -> list[float]:
    """Step-aligned gradient cosine similarity between a run and its reference continuation."""
    ref = {r.step: r for r in reference.records}
    return [_cos_or_nan(r.gradient, ref[r.step].gradient) for r in log.records if r.tag == tag and r.step in ref]


def unmitigated_tracking(problem: Problem, circuit: ParamCircuit, cfg: RunConfig) -> list[float]:
    """Noisy descent versus noiseless descent from the same start; per-step gradient cosines."""
    noisy = run_noisy(problem, circuit, replace(cfg, mode="noisy"))
    ideal = run_noisy(problem, circuit, replace(cfg, mode="noisy", noise=NOISELESS, shots=None))
    return [_cos_or_nan(a.gradient, b.gradient) for a, b in zip(noisy.records, ideal.records)]


def final_zne_metric(problem: Problem, circuit: ParamCircuit, cfg: RunConfig, theta) -> float:
    """Score terminal parameters with one ZNE cost evaluation (uncharged)."""
    res, _, _ = zne_cost_and_gradient(circuit, problem.objective, theta, cfg.noise, cfg.zne_effective, None, cfg.seed, ("final",), with_gradient=False)
    return problem.metric(res.value)


def load_problem_circuit(kind: str, n: int, seed: int, p_layers: int, hamiltonian: str | None = None, template: str | None = None,
                         graph: str | None = None, J: float = 1.0, h: float = 1.0) -> tuple[Problem, ParamCircuit]:
    from .hamiltonians import generate_3regular, load_graph

    if kind == "maxcut3reg":
        g = load_graph(graph) if graph else generate_3regular(n, seed)
        prob = maxcut_problem(g, f"3reg-n{g.n_vertices}-s{seed}")
        return prob, prob.qaoa(p_layers)
    if kind == "sk":
        prob = sk_problem(n, seed)
        return prob, prob.qaoa(p_layers)
    if kind == "tfim":
        prob = tfim_problem(n, J, h)
        return prob, prob.qaoa(p_layers)
    if kind == "molecule":
        if not (hamiltonian and template):
            raise ValueError("molecule problems need a hamiltonian file and a circuit template")
        prob = molecule_problem(hamiltonian)
        circ = build_trotter_ansatz(template)
        if circ.n_qubits != prob.hamiltonian.n_qubits:
            raise ValueError("template and Hamiltonian qubit counts differ")
        return prob, circ
    raise ValueError(f"unknown problem kind {kind!r}")
