"""Gradient descent on a small 3-regular MaxCut instance with and without ZNE.

    python3 demos/zne_vs_noisy.py
"""

from __future__ import annotations

from dataclasses import replace

from pidnlab.circuits import NoiseModel
from pidnlab.workflow import RunConfig, load_problem_circuit, run_noisy, run_zne

problem, circuit = load_problem_circuit("maxcut3reg", 6, 2, 2)
cfg = RunConfig(mode="zne", eta=0.05, max_steps=20, noise=NoiseModel("dephasing", 1e-2), seed=1)

zne = run_zne(problem, circuit, cfg)
noisy = run_noisy(problem, circuit, replace(cfg, mode="noisy"))

print("step  AR(noisy)  AR(zne)   |C_noisy-C_ideal|  |C_zne-C_ideal|")
for a, b in zip(noisy.records, zne.records):
    print(f"{a.step:4d}  {a.metric:.4f}     {b.metric:.4f}    {abs(a.c_noisy - a.c_ideal):.2e}           {abs(b.c_zne - b.c_ideal):.2e}")
print(f"executions: noisy {noisy.records[-1].executions}, zne {zne.records[-1].executions}")
