#!/usr/bin/env python3
"""Gossip training with momentum vs its baselines on one fleet.

Runs dfedavgm (plain and quantized), dsgd, fedavg, and sgd on the same
heterogeneous quadratic fleet with matched seeds, then prints suboptimality
and cumulative bits side by side.  Charts land in demo_out/.
"""
import os

from dfedsim import (
    LocalTrainerConfig,
    QuantizerSpec,
    RunConfig,
    build_ring,
    make_quadratic,
    metropolis_hastings,
    run_experiment,
)
from dfedsim.engine import records_to_csv
from dfedsim.plots import render_curves

OUT = "demo_out"
os.makedirs(OUT, exist_ok=True)

m, d, T = 16, 12, 300
problem = make_quadratic(m, d, heterogeneity=0.6, noise_sigma=1.0, seed=5,
                         mu=0.25, L=1.0)
ring = metropolis_hastings(build_ring(m))
print(f"fleet: m={m}, d={d}, ring (lam={ring.lam:.3f}), min f = {problem.min_f:.4f}\n")

heavy = LocalTrainerConfig(eta=0.01, theta=0.9, K=5)
single = LocalTrainerConfig(eta=0.03, theta=0.0, K=1)
configs = {
    "dfedavgm": RunConfig(algorithm="dfedavgm", T=T, trainer=heavy, seed=0, mixing=ring),
    "dfedavgm_q8": RunConfig(algorithm="dfedavgm_quantized", T=T, trainer=heavy,
                             seed=0, mixing=ring,
                             quantizer=QuantizerSpec(s=4e-3, b=8, rule="stochastic", seed=1)),
    "dsgd": RunConfig(algorithm="dsgd", T=T, trainer=single, seed=0, mixing=ring),
    "fedavg": RunConfig(algorithm="fedavg", T=T, trainer=heavy, seed=0),
    "sgd": RunConfig(algorithm="sgd", T=T, trainer=heavy, seed=0),
}

results = {}
for name, cfg in configs.items():
    results[name] = run_experiment(cfg, problem)
    path = os.path.join(OUT, f"{name}.csv")
    with open(path, "w") as fh:
        fh.write(records_to_csv(results[name].records))

print(f"{'algorithm':14s} {'f gap @T':>12s} {'consensus @T':>14s} {'bits @T':>14s}")
for name, res in results.items():
    rec = res.records[-1]
    print(f"{name:14s} {rec.f_avg - problem.min_f:12.5f} "
          f"{rec.consensus:14.3e} {rec.bits_total:14,d}")

print("\nNote the quantized run: same trajectory quality at one quarter of")
print("the bits, because each coordinate travels as 8 bits instead of 32.")

for name in results:
    render_curves([os.path.join(OUT, f"{name}.csv")], OUT, stem=name)
print(f"\ncharts written to {OUT}/")
