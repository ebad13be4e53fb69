"""Command-line experiment driver.

Configuration is a flat JSON object of ``key: value`` pairs; command-line
flags override file values, which override built-in defaults.  Every output
file starts with a header carrying the resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import EVALUATORS, landscape_metrics, scan_landscape, speedup
from .circuits import NoiseModel
from .hamiltonians import build_sk, build_tfim, format_graph, format_pauli_sum, generate_3regular
from .rng import substream
from .surrogate import TrainConfig, save_model
from .workflow import (
    RunConfig,
    final_zne_metric,
    load_problem_circuit,
    reference_continuation,
    run_noisy,
    run_pidn,
    run_zne,
    stage1_replay_cosines,
    tracking_cosines,
    unmitigated_tracking,
)
from .zne import ZneConfig

OUTPUT_FORMAT = "pidnlab-output/1"

DEFAULTS: dict = {
    "mode": "zne",
    "problem": "maxcut3reg",
    "n": 8,
    "seed": 1,
    "p_layers": 3,
    "hamiltonian": None,
    "template": None,
    "graph": None,
    "tfim.J": 1.0,
    "tfim.h": 1.0,
    "noise.kind": "dephasing",
    "noise.strength": 1e-3,
    "shots": None,
    "eta": 0.05,
    "t_init": 45,
    "max_steps": 100,
    "budget": None,
    "zne.lambdas": [1, 3, 5],
    "zne.fit": "linear",
    "zne.shots": None,
    "train.beta": 1.0,
    "train.epochs": 3000,
    "train.lr": 1e-3,
    "train.fd_step": 1e-3,
    "train.hidden": 64,
    "train.scalar_width": 64,
    "train.fusion": 64,
    "train.window": None,
    "train.gru_uses_cost": True,
    "step_mode": "gradient",
    "target": 0.9,
    "landscape.grid": 64,
    "landscape.sigma": 2.0,
    "landscape.radius": 2,
    "landscape.axes": [0, 1],
    "landscape.shots": None,
    "landscape.steps": 20,
    "sweep.study": "rlf",
    "sweep.levels": [1e-6, 1e-5, 1e-4, 1e-3],
    "out": "out",
}

# flag name -> config key
FLAG_KEYS = {
    "seed": "seed", "out": "out", "mode": "mode", "noise_kind": "noise.kind",
    "noise_strength": "noise.strength", "shots": "shots", "eta": "eta", "t_init": "t_init",
    "beta": "train.beta", "lambdas": "zne.lambdas", "fit": "zne.fit", "max_steps": "max_steps",
    "budget": "budget", "problem": "problem", "n": "n", "p_layers": "p_layers",
    "hamiltonian": "hamiltonian", "template": "template", "graph": "graph", "epochs": "train.epochs",
    "hidden": "train.hidden", "step_mode": "step_mode", "target": "target", "grid": "landscape.grid",
    "sigma": "landscape.sigma", "radius": "landscape.radius", "levels": "sweep.levels",
    "study": "sweep.study", "zne_shots": "zne.shots", "landscape_shots": "landscape.shots",
}


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _shots(text: str) -> int | None:
    return None if text.lower() in ("exact", "none") else int(text)


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        loaded = json.loads(Path(args.config).read_text())
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(loaded)
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    return cfg


def run_config(cfg: dict, mode: str | None = None) -> RunConfig:
    train = TrainConfig(
        beta=float(cfg["train.beta"]), epochs=int(cfg["train.epochs"]), lr=float(cfg["train.lr"]),
        fd_step=float(cfg["train.fd_step"]), seed=int(cfg["seed"]), hidden=int(cfg["train.hidden"]),
        scalar_width=int(cfg["train.scalar_width"]), fusion=int(cfg["train.fusion"]),
        window=cfg["train.window"], gru_uses_cost=bool(cfg["train.gru_uses_cost"]),
    )
    zne_shots = cfg["zne.shots"] if cfg["zne.shots"] is not None else cfg["shots"]
    return RunConfig(
        mode=mode or cfg["mode"], t_init=int(cfg["t_init"]), eta=float(cfg["eta"]),
        max_steps=int(cfg["max_steps"]), budget=cfg["budget"],
        zne=ZneConfig(tuple(cfg["zne.lambdas"]), cfg["zne.fit"], zne_shots), train=train,
        noise=noise_model(cfg), shots=cfg["shots"], seed=int(cfg["seed"]), step_mode=cfg["step_mode"],
    )


def noise_model(cfg: dict, strength: float | None = None) -> NoiseModel:
    return NoiseModel(cfg["noise.kind"], float(cfg["noise.strength"] if strength is None else strength))


def problem_and_circuit(cfg: dict):
    return load_problem_circuit(
        cfg["problem"], int(cfg["n"]), int(cfg["seed"]), int(cfg["p_layers"]),
        cfg["hamiltonian"], cfg["template"], cfg["graph"], float(cfg["tfim.J"]), float(cfg["tfim.h"]),
    )


# --- output helpers -------------------------------------------------------------


class Outputs:
    """Tracks written files so a failed command can remove its partial results."""

    def __init__(self, root: str | Path, cfg: dict, command: str):
        self.root = Path(root)
        self.cfg = cfg
        self.command = command
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.root / name
        self.written.append(p)
        return p

    def header_lines(self, columns: list[str] | None = None) -> list[str]:
        lines = [f"# format: {OUTPUT_FORMAT}", f"# version: {__version__}", f"# command: {self.command}",
                 f"# config: {json.dumps(self.cfg, sort_keys=True)}"]
        if columns:
            lines.append("# columns: " + "\t".join(columns))
        return lines

    def table(self, name: str, columns: list[str], rows) -> Path:
        lines = self.header_lines(columns)
        lines += ["\t".join(_fmt(v) for v in row) for row in rows]
        p = self.path(name)
        p.write_text("\n".join(lines) + "\n")
        return p

    def json(self, name: str, payload: dict) -> Path:
        body = {"format": OUTPUT_FORMAT, "version": __version__, "command": self.command, "config": self.cfg}
        body.update(payload)
        p = self.path(name)
        p.write_text(json.dumps(body, sort_keys=True, indent=1) + "\n")
        return p

    def runlog(self, name: str, log) -> Path:
        log.header["cli"] = {"format": OUTPUT_FORMAT, "command": self.command, "config": self.cfg}
        p = self.path(name)
        log.save(p)
        return p

    def cleanup(self) -> None:
        for p in self.written:
            if p.exists():
                p.unlink()


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def _nanmean(xs) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.mean(xs)) if xs else math.nan


# --- subcommands ----------------------------------------------------------------


def _execute(cfg: dict, mode: str):
    problem, circuit = problem_and_circuit(cfg)
    rc = run_config(cfg, mode)
    if mode == "noisy":
        return problem, circuit, rc, run_noisy(problem, circuit, rc), None
    if mode == "zne":
        return problem, circuit, rc, run_zne(problem, circuit, rc), None
    res = run_pidn(problem, circuit, rc)
    return problem, circuit, rc, res.log, res


def _summary(problem, log) -> dict:
    last = log.records[-1]
    return dict(
        metric=problem.metric_name, final_metric=last.metric, final_ideal_cost=last.c_ideal,
        steps=len(log.records), executions=last.executions, shots=last.shots, reference=problem.reference,
    )


def cmd_run(cfg: dict, out: Outputs) -> None:
    mode = cfg["mode"]
    problem, circuit, rc, log, res = _execute(cfg, mode)
    out.runlog("runlog.jsonl", log)
    summary = _summary(problem, log)
    out.table("plot.tsv", ["executions", problem.metric_name],
              [(r.executions, r.metric) for r in log.records])
    if mode == "pidn" and res.model is not None:
        save_model(res.model, out.path("surrogate.npz"))
        ref = reference_continuation(problem, circuit, rc, log)
        out.runlog("reference.jsonl", ref)
        cos = tracking_cosines(log, ref)
        replay = stage1_replay_cosines(res.model, res.records[: rc.t_init])
        steps = [r.step for r in log.records if r.tag == "stage3"]
        rows = [(t, "stage1", c) for t, c in enumerate(replay)] + [(t, "stage3", c) for t, c in zip(steps, cos)]
        out.table("cosine.tsv", ["step", "stage", "cosine"], rows)
        out.table("loss.tsv", ["epoch", "total", "l_data", "l_phys"],
                  [(i, *vals) for i, vals in enumerate(res.loss_curve)])
        summary.update(mean_cos_stage1=_nanmean(replay), mean_cos_stage3=_nanmean(cos))
    out.json("summary.json", summary)


def _landscape_trajectory(circuit, obs, theta0, axes, noise, evaluator, steps, eta, zcfg, seed):
    from .estimators import cost_and_gradient
    from .zne import zne_cost_and_gradient
    from .circuits import NOISELESS

    theta = np.array(theta0, dtype=float)
    pts = []
    for t in range(steps + 1):
        pts.append((t, theta[axes[0]], theta[axes[1]]))
        if t == steps:
            break
        if evaluator == "zne":
            _, g, _ = zne_cost_and_gradient(circuit, obs, theta, noise, zcfg, None, seed, ("traj", t))
        else:
            nm = NOISELESS if evaluator == "ideal" else noise
            _, g = cost_and_gradient(circuit, obs, theta, nm, zcfg.shots, None, seed, ("traj", t))
        mask = np.zeros_like(theta)
        mask[list(axes)] = 1.0
        theta = theta - eta * g * mask
    return pts


def landscape_study(cfg: dict, noise: NoiseModel, evaluators=EVALUATORS):
    problem, circuit = problem_and_circuit(cfg)
    axes = tuple(int(a) for a in cfg["landscape.axes"])
    frozen = substream(int(cfg["seed"]), "landscape").uniform(0.0, 2 * math.pi, circuit.n_params)
    zcfg = ZneConfig(tuple(cfg["zne.lambdas"]), cfg["zne.fit"], cfg["landscape.shots"])
    grids, metrics = {}, {}
    for ev in evaluators:
        grids[ev] = scan_landscape(circuit, problem.hamiltonian, frozen, axes, noise, ev,
                                   int(cfg["landscape.grid"]), shots=cfg["landscape.shots"], zne=zcfg,
                                   seed=int(cfg["seed"]))
        metrics[ev] = landscape_metrics(grids[ev], float(cfg["landscape.sigma"]), int(cfg["landscape.radius"]))
    return problem, circuit, frozen, axes, zcfg, grids, metrics


def cmd_landscape(cfg: dict, out: Outputs) -> None:
    noise = noise_model(cfg)
    problem, circuit, frozen, axes, zcfg, grids, metrics = landscape_study(cfg, noise)
    for ev, grid in grids.items():
        xs, ys = grid.coordinates()
        rows = [(xs[a], ys[b], grid.values[a, b]) for a in range(grid.resolution) for b in range(grid.resolution)]
        out.table(f"grid_{ev}.tsv", [f"theta{axes[0]}", f"theta{axes[1]}", "value"], rows)
    out.table("metrics.tsv", ["evaluator", "delta_e_smooth", "sigma_smooth", "r_lf"],
              [(ev, m.delta_e_smooth, m.sigma_smooth, m.r_lf) for ev, m in metrics.items()])
    rows = []
    steps = int(cfg["landscape.steps"])
    for ev in EVALUATORS:
        pts = _landscape_trajectory(circuit, problem.objective, frozen, axes, noise, ev, steps, float(cfg["eta"]), zcfg, int(cfg["seed"]))
        for t, x, y in pts:
            tag = "start" if t == 0 else ("end" if t == steps else "mid")
            rows.append((ev, t, x, y, tag))
    out.table("trajectories.tsv", ["evaluator", "step", f"theta{axes[0]}", f"theta{axes[1]}", "tag"], rows)


def cmd_sweep(cfg: dict, out: Outputs) -> None:
    study = cfg["sweep.study"]
    levels = [float(x) for x in cfg["sweep.levels"]]
    rows = []
    if study == "rlf":
        for p in levels:
            m = landscape_study(cfg, noise_model(cfg, p), ("noisy",))[-1]["noisy"]
            rows.append((p, m.r_lf, m.delta_e_smooth, m.sigma_smooth))
        out.table("sweep.tsv", ["strength", "r_lf", "delta_e_smooth", "sigma_smooth"], rows)
    elif study == "cosine":
        problem, circuit = problem_and_circuit(cfg)
        for p in levels:
            rc = replace(run_config(cfg, "noisy"), noise=noise_model(cfg, p))
            cos = unmitigated_tracking(problem, circuit, rc)
            rows.append((p, _nanmean(cos), min(cos)))
        out.table("sweep.tsv", ["strength", "mean_cosine", "min_cosine"], rows)
    elif study == "energy":
        problem, circuit = problem_and_circuit(cfg)
        for p in levels:
            base = replace(run_config(cfg), noise=noise_model(cfg, p))
            zlog = run_zne(problem, circuit, replace(base, mode="zne"))
            pres = run_pidn(problem, circuit, replace(base, mode="pidn"))
            fz = final_zne_metric(problem, circuit, base, zlog.records[-1].theta)
            fp = final_zne_metric(problem, circuit, base, pres.log.records[-1].theta)
            rows.append((p, fz, fp))
        out.table("sweep.tsv", ["strength", f"final_{problem.metric_name}_zne", f"final_{problem.metric_name}_pidn"], rows)
    else:
        raise ConfigError(f"unknown sweep study {study!r}")


def cmd_ablate(cfg: dict, out: Outputs) -> None:
    problem, circuit = problem_and_circuit(cfg)
    base = run_config(cfg, "pidn")
    traces, finals, means, phys = {}, {}, {}, {}
    for label, beta in (("with", base.train.beta), ("without", 0.0)):
        rc = replace(base, train=replace(base.train, beta=beta))
        res = run_pidn(problem, circuit, rc)
        ref = reference_continuation(problem, circuit, rc, res.log)
        traces[label] = (
            [r.step for r in res.log.records if r.tag == "stage3"], tracking_cosines(res.log, ref))
        means[label] = _nanmean(traces[label][1])
        finals[label] = final_zne_metric(problem, circuit, rc, res.log.records[-1].theta)
        phys[label] = res.loss_curve[-1][2] if res.loss_curve else math.nan
        out.runlog(f"runlog_{label}.jsonl", res.log)
    steps = traces["with"][0]
    out.table("ablation_traces.tsv", ["step", "cosine_with", "cosine_without"],
              list(zip(steps, traces["with"][1], traces["without"][1])))
    out.table("ablation.tsv",
              ["instance", f"{problem.metric_name}_with", f"{problem.metric_name}_without",
               "mean_cosine_with", "mean_cosine_without", "final_l_phys_with", "final_l_phys_without"],
              [(problem.name, finals["with"], finals["without"], means["with"], means["without"], phys["with"], phys["without"])])


def cmd_gen(cfg: dict, out: Outputs, kind: str) -> None:
    n, seed = int(cfg["n"]), int(cfg["seed"])
    header = out.header_lines()
    header = [h[2:] for h in header]
    if kind == "maxcut3reg":
        p = out.path(f"maxcut3reg_n{n}_s{seed}.graph")
        p.write_text(format_graph(generate_3regular(n, seed), header))
    elif kind == "sk":
        p = out.path(f"sk_n{n}_s{seed}.pauli")
        p.write_text(format_pauli_sum(build_sk(n, seed), header))
    elif kind == "tfim":
        p = out.path(f"tfim_n{n}.pauli")
        p.write_text(format_pauli_sum(build_tfim(n, float(cfg["tfim.J"]), float(cfg["tfim.h"])), header))
    else:
        raise ConfigError(f"unknown instance kind {kind!r}")


def cmd_compare(cfg: dict, out: Outputs) -> None:
    """ZNE and PIDN runs on one instance plus the execution speedup to ``target``."""
    problem, circuit, rc, zlog, _ = _execute(cfg, "zne")
    _, _, _, plog, _ = _execute(cfg, "pidn")
    s = speedup(zlog, plog, float(cfg["target"]), problem.metric_name)
    out.runlog("runlog_zne.jsonl", zlog)
    out.runlog("runlog_pidn.jsonl", plog)
    out.json("speedup.json", dict(speedup=s.value, reached=s.reached, executions_zne=s.executions_zne,
                                  executions_pidn=s.executions_pidn, best_zne=s.best_zne, best_pidn=s.best_pidn))


# --- argument parsing -----------------------------------------------------------


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="flat JSON key/value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--mode", choices=("noisy", "zne", "pidn"))
    p.add_argument("--noise-kind", choices=("none", "depolarizing", "dephasing"))
    p.add_argument("--noise-strength", type=float)
    p.add_argument("--shots", type=_shots, help="shots per term, or 'exact'")
    p.add_argument("--eta", type=float)
    p.add_argument("--t-init", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--lambdas", type=_int_list, help="comma-separated odd fold factors")
    p.add_argument("--fit", choices=("linear", "quadratic"))
    p.add_argument("--max-steps", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--problem", choices=("maxcut3reg", "sk", "tfim", "molecule"))
    p.add_argument("--n", type=int)
    p.add_argument("--p-layers", type=int)
    p.add_argument("--hamiltonian")
    p.add_argument("--template")
    p.add_argument("--graph")
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--step-mode", choices=("gradient", "head"))
    p.add_argument("--zne-shots", type=_shots)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="pidnlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="one optimization run")
    ls = sub.add_parser("landscape", parents=[common], help="2-D landscape scans and metrics")
    ls.add_argument("--grid", type=int)
    ls.add_argument("--sigma", type=float)
    ls.add_argument("--radius", type=int)
    ls.add_argument("--landscape-shots", type=_shots)
    sw = sub.add_parser("sweep", parents=[common], help="noise-strength sweeps")
    sw.add_argument("--study", choices=("rlf", "cosine", "energy"))
    sw.add_argument("--levels", type=_float_list)
    sw.add_argument("--grid", type=int)
    sw.add_argument("--landscape-shots", type=_shots)
    sub.add_parser("ablate", parents=[common], help="physics-loss ablation")
    cp = sub.add_parser("compare", parents=[common], help="ZNE vs PIDN execution speedup")
    cp.add_argument("--target", type=float)
    gen = sub.add_parser("gen", parents=[common], help="write problem instance files")
    gen.add_argument("kind", choices=("maxcut3reg", "sk", "tfim"))
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Outputs(cfg["out"], cfg, args.command)
    try:
        if args.command == "run":
            cmd_run(cfg, out)
        elif args.command == "landscape":
            cmd_landscape(cfg, out)
        elif args.command == "sweep":
            cmd_sweep(cfg, out)
        elif args.command == "ablate":
            cmd_ablate(cfg, out)
        elif args.command == "compare":
            cmd_compare(cfg, out)
        else:
            cmd_gen(cfg, out, args.kind)
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        out.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for p in out.written:
        if not p.exists() or p.stat().st_size == 0:
            print(f"error: missing output {p}", file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
