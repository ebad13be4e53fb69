"""Noise-free surrogate run on the bundled H2 (STO-3G) Hamiltonian.

Stage I stops before chemical accuracy; the surrogate carries the descent
across the threshold and, having never seen the minimum, past it again.

    python3 demos/h2_chemical_accuracy.py
"""

from __future__ import annotations

from pathlib import Path

from pidnlab.analysis import CHEMICAL_ACCURACY
from pidnlab.surrogate import TrainConfig
from pidnlab.workflow import RunConfig, load_problem_circuit, run_pidn

data = Path(__file__).resolve().parents[1] / "data"
problem, circuit = load_problem_circuit("molecule", 0, 0, 0, str(data / "h2_sto3g.pauli"), str(data / "h2_double.template"))
cfg = RunConfig(mode="pidn", t_init=5, eta=0.2, max_steps=30, seed=1, train=TrainConfig(seed=1))
res = run_pidn(problem, circuit, cfg)

print(f"exact ground energy {problem.reference:.6f} Ha")
for r in res.log.records:
    flag = "*" if r.metric <= CHEMICAL_ACCURACY else " "
    print(f"{r.step:3d} {r.tag}  E {r.c_ideal:.6f}  dE {r.metric:.2e} {flag}")
