"""Canned comparison experiments: communication-bit sweeps, local-epoch
sweeps, and the three-way algorithm comparison.

Each preset runs a small, fully seeded study on a synthetic quadratic fleet
and writes, per variant and seed, the usual round-record CSV plus two curve
files (loss vs round, loss vs cumulative bits) and a ``summary.json``.

The algorithm comparison mirrors the usual benchmarking protocol for these
methods: the centrally-aggregated baseline and the one-step gossip baseline
run at 10x the gossip trainer's learning rate (gossip training needs the
smaller rate for numerical stability), so the baselines trade a higher noise
floor for faster initial progress.  The headline number is bits-to-target:
cumulative communication spent before the fleet-average suboptimality first
drops below the preset's target gap.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .config import _atomic_write
from .engine import RunConfig, records_to_csv, run_experiment
from .local_training import LocalTrainerConfig
from .problems import make_quadratic
from .quantization import QuantizerSpec
from .topology import build_ring, metropolis_hastings

PRESET_NAMES = ("bits_sweep", "epochs_sweep", "algo_compare")


class UnknownPresetError(ValueError):
    pass


@dataclass(frozen=True)
class PresetRun:
    variant: str
    seed: int
    records: list
    min_f: float


def _gap_curves(runs: list[PresetRun]):
    round_rows = ["t,variant,seed,f_gap"]
    bits_rows = ["bits,variant,seed,f_gap"]
    for run in runs:
        for r in run.records:
            gap = r.f_avg - run.min_f
            round_rows.append(f"{r.t},{run.variant},{run.seed},{gap!r}")
            bits_rows.append(f"{r.bits_total},{run.variant},{run.seed},{gap!r}")
    return "\n".join(round_rows) + "\n", "\n".join(bits_rows) + "\n"


def _bits_to_target(run: PresetRun, target: float, window: int = 25):
    """Cumulative bits when the windowed-mean gap first stays at or below
    target.  The moving average makes "reaching" mean sustained attainment
    rather than a single noisy dip below the line."""
    gaps = np.array([r.f_avg - run.min_f for r in run.records])
    if gaps.shape[0] < window:
        return None
    means = np.convolve(gaps, np.ones(window) / window, mode="valid")
    for i, v in enumerate(means):
        if v <= target:
            return run.records[i + window - 1].bits_total
    return None


def _write_bundle(out_dir: str, runs: list[PresetRun], summary: dict) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    for run in runs:
        variant_dir = os.path.join(out_dir, run.variant)
        os.makedirs(variant_dir, exist_ok=True)
        _atomic_write(os.path.join(variant_dir, f"seed{run.seed}.csv"),
                      records_to_csv(run.records))
    round_csv, bits_csv = _gap_curves(runs)
    _atomic_write(os.path.join(out_dir, "loss_vs_round.csv"), round_csv)
    _atomic_write(os.path.join(out_dir, "loss_vs_bits.csv"), bits_csv)
    _atomic_write(os.path.join(out_dir, "summary.json"),
                  json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _delta_step(problem, trainer, sigma_mult=6.0):
    """Quantizer step sized so K-step deltas stay inside the code range."""
    probe = run_experiment(
        RunConfig(algorithm="dfedavgm", T=30, trainer=trainer, seed=9,
                  mixing=metropolis_hastings(build_ring(problem.m))),
        problem,
    )
    reach = trainer.K * trainer.eta / (1.0 - trainer.theta)
    return 2.5 * reach * (probe.max_local_grad_norm + sigma_mult * problem.sigma_l)


def algo_compare(out_dir: str, *, seeds=(0, 1, 2)) -> dict:
    """Gossip training vs central aggregation vs one-step gossip, matched seeds."""
    m, rounds = 20, 600
    problem = make_quadratic(m, 20, heterogeneity=0.5, noise_sigma=5.0, seed=11,
                             mu=0.25, L=1.0, center_scale=1.0)
    ring = metropolis_hastings(build_ring(m))
    eta_gossip = 0.002
    eta_baseline = 10.0 * eta_gossip
    target_gap = 0.01
    variants = {
        "dfedavgm": RunConfig(
            algorithm="dfedavgm", T=rounds, seed=0, mixing=ring,
            trainer=LocalTrainerConfig(eta=eta_gossip, theta=0.9, K=5),
        ),
        "fedavg": RunConfig(
            algorithm="fedavg", T=rounds, seed=0,
            trainer=LocalTrainerConfig(eta=eta_baseline, theta=0.9, K=5),
        ),
        "dsgd": RunConfig(
            algorithm="dsgd", T=rounds, seed=0, mixing=ring,
            trainer=LocalTrainerConfig(eta=eta_baseline, theta=0.0, K=1),
        ),
    }
    runs, outcomes = [], {}
    for variant, base in variants.items():
        for seed in seeds:
            cfg = RunConfig(algorithm=base.algorithm, T=base.T, trainer=base.trainer,
                            seed=seed, mixing=base.mixing, quantizer=base.quantizer)
            result = run_experiment(cfg, problem)
            run = PresetRun(variant, seed, result.records, problem.min_f)
            runs.append(run)
            outcomes.setdefault(variant, {})[str(seed)] = _bits_to_target(run, target_gap)
    summary = {
        "preset": "algo_compare",
        "m": m, "rounds": rounds, "target_gap": target_gap,
        "eta_gossip": eta_gossip, "eta_baseline": eta_baseline,
        "bits_to_target": outcomes,
    }
    return _write_bundle(out_dir, runs, summary)


def bits_sweep(out_dir: str, *, seeds=(0, 1, 2)) -> dict:
    """Vary the payload width b with the local epoch fixed to one."""
    m, rounds = 12, 400
    problem = make_quadratic(m, 16, heterogeneity=0.4, noise_sigma=1.0, seed=7,
                             mu=0.25, L=1.0, center_scale=1.0)
    ring = metropolis_hastings(build_ring(m))
    trainer = LocalTrainerConfig(eta=0.02, theta=0.0, K=1)
    delta = _delta_step(problem, trainer)
    runs, finals = [], {}
    for b in (4, 8, 16, None):  # None = full-precision 32-bit send
        variant = "unquantized" if b is None else f"b{b}"
        for seed in seeds:
            if b is None:
                cfg = RunConfig(algorithm="dfedavgm", T=rounds, trainer=trainer,
                                seed=seed, mixing=ring)
            else:
                spec = QuantizerSpec(s=delta / (2 ** (b - 1) - 1), b=b,
                                     rule="stochastic", seed=101)
                cfg = RunConfig(algorithm="dfedavgm_quantized", T=rounds,
                                trainer=trainer, seed=seed, mixing=ring,
                                quantizer=spec)
            result = run_experiment(cfg, problem)
            run = PresetRun(variant, seed, result.records, problem.min_f)
            runs.append(run)
            tail = np.mean([r.f_avg - problem.min_f for r in result.records[rounds // 2:]])
            finals.setdefault(variant, {})[str(seed)] = float(tail)
    summary = {
        "preset": "bits_sweep", "m": m, "rounds": rounds,
        "final_gap": finals,
        "mean_final_gap": {v: float(np.mean(list(d.values()))) for v, d in finals.items()},
    }
    return _write_bundle(out_dir, runs, summary)


def epochs_sweep(out_dir: str, *, seeds=(0, 1, 2)) -> dict:
    """Vary the local epoch count K with the payload fixed to 16 bits."""
    m, rounds = 12, 300
    problem = make_quadratic(m, 16, heterogeneity=0.0, noise_sigma=0.5, seed=5,
                             mu=0.25, L=1.0, center_scale=1.0)
    ring = metropolis_hastings(build_ring(m))
    threshold = 0.05
    runs, hit = [], {}
    for k in (1, 2, 5):
        variant = f"K{k}"
        trainer = LocalTrainerConfig(eta=0.02, theta=0.0, K=k)
        spec = QuantizerSpec(s=_delta_step(problem, trainer) / (2 ** 15 - 1),
                             b=16, rule="stochastic", seed=303)
        for seed in seeds:
            cfg = RunConfig(algorithm="dfedavgm_quantized", T=rounds, trainer=trainer,
                            seed=seed, mixing=ring, quantizer=spec)
            result = run_experiment(cfg, problem)
            run = PresetRun(variant, seed, result.records, problem.min_f)
            runs.append(run)
            rounds_to = next(
                (r.t for r in result.records if r.f_avg - problem.min_f <= threshold),
                None,
            )
            hit.setdefault(variant, {})[str(seed)] = rounds_to
    summary = {
        "preset": "epochs_sweep", "m": m, "rounds": rounds, "threshold": threshold,
        "rounds_to_threshold": hit,
    }
    return _write_bundle(out_dir, runs, summary)


def run_preset(name: str, out_dir: str, *, seeds=(0, 1, 2)) -> dict:
    if name == "algo_compare":
        return algo_compare(out_dir, seeds=seeds)
    if name == "bits_sweep":
        return bits_sweep(out_dir, seeds=seeds)
    if name == "epochs_sweep":
        return epochs_sweep(out_dir, seeds=seeds)
    raise UnknownPresetError(f"unknown preset {name!r}; pick one of {PRESET_NAMES}")
