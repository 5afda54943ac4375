"""YAML experiment configs: schema, validation, and the run loop behind the
``run`` subcommand.

A config holds a list of experiments; each experiment fully determines its
runs (problem, topology, algorithm, trainer, horizon, seeds).  Validation is
eager and exhaustive: every offending field is reported, not just the first.

Per run the runner writes ``seed<k>.csv`` (round records), ``seed<k>.json``
(a sidecar with the problem constants, the evaluated bound constants, and
final metrics), and one ``summary.json`` per experiment after all runs
finish.  Output is deterministic byte-for-byte except the wall_ms column.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import yaml

from .engine import ALGORITHMS, DECENTRALIZED, RunConfig, RunResult, records_to_csv, run_experiment
from .local_training import DivergenceError, LocalTrainerConfig, stepsize_conditions
from .problems import PROBLEM_KINDS
from .quantization import QuantizationRangeError, QuantizerSpec
from .theory import BoundInapplicableError, pl_bound, theorem1_bound, theorem1_constants
from .topology import build_random_connected, build_ring, averaging_matrix, metropolis_hastings

TOPOLOGY_KINDS = ("ring", "random", "complete")

WORKERS_ENV = "DFEDSIM_WORKERS"


class ConfigValidationError(ValueError):
    """Carries the full list of field-level validation messages."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid config:\n" + "\n".join(f"  - {e}" for e in errors))
        self.errors = errors


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: problem + topology + algorithm + horizon + seeds."""

    name: str
    algorithm: str
    rounds: int
    problem: dict
    trainer: dict
    output: str
    repetitions: int = 1
    base_seed: int = 0
    topology: dict | None = None
    quantizer: dict | None = None
    checkpoint_every: int | None = None

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "algorithm": self.algorithm,
            "rounds": self.rounds,
            "problem": dict(self.problem),
            "trainer": dict(self.trainer),
            "output": self.output,
            "repetitions": self.repetitions,
            "base_seed": self.base_seed,
        }
        if self.topology is not None:
            out["topology"] = dict(self.topology)
        if self.quantizer is not None:
            out["quantizer"] = dict(self.quantizer)
        if self.checkpoint_every is not None:
            out["checkpoint_every"] = self.checkpoint_every
        return out

    def seeds(self) -> list[int]:
        return [self.base_seed + r for r in range(self.repetitions)]


def _check(errors, where, cond, message):
    if not cond:
        errors.append(f"{where}: {message}")
    return cond


def _validate_experiment(raw: dict, where: str, errors: list[str]) -> ExperimentSpec | None:
    if not isinstance(raw, dict):
        errors.append(f"{where}: experiment must be a mapping, got {type(raw).__name__}")
        return None
    known = {"name", "algorithm", "rounds", "problem", "trainer", "output",
             "repetitions", "base_seed", "topology", "quantizer", "checkpoint_every"}
    for key in raw:
        _check(errors, f"{where}.{key}", key in known, "unknown field")

    name = raw.get("name")
    _check(errors, f"{where}.name", isinstance(name, str) and name != "", "name must be a nonempty string")
    algorithm = raw.get("algorithm")
    _check(errors, f"{where}.algorithm", algorithm in ALGORITHMS, f"must be one of {ALGORITHMS}")
    rounds = raw.get("rounds")
    _check(errors, f"{where}.rounds", isinstance(rounds, int) and rounds >= 0, "rounds must be an integer >= 0")
    output = raw.get("output")
    _check(errors, f"{where}.output", isinstance(output, str) and output != "", "output directory required")
    reps = raw.get("repetitions", 1)
    _check(errors, f"{where}.repetitions", isinstance(reps, int) and reps >= 1, "repetitions must be >= 1")
    base_seed = raw.get("base_seed", 0)
    _check(errors, f"{where}.base_seed", isinstance(base_seed, int) and base_seed >= 0, "base_seed must be >= 0")

    problem = raw.get("problem")
    if _check(errors, f"{where}.problem", isinstance(problem, dict), "problem section required"):
        kind = problem.get("kind")
        _check(errors, f"{where}.problem.kind", kind in PROBLEM_KINDS,
               f"must be one of {tuple(PROBLEM_KINDS)}")

    trainer = raw.get("trainer")
    if _check(errors, f"{where}.trainer", isinstance(trainer, dict), "trainer section required"):
        eta = trainer.get("eta")
        _check(errors, f"{where}.trainer.eta", isinstance(eta, (int, float)) and eta > 0, "eta > 0 required")
        theta = trainer.get("theta", 0.0)
        _check(errors, f"{where}.trainer.theta",
               isinstance(theta, (int, float)) and 0 <= theta < 1, "0 <= theta < 1 is required")
        k = trainer.get("K", 1)
        _check(errors, f"{where}.trainer.K", isinstance(k, int) and k >= 1, "K must be an integer >= 1")

    topology = raw.get("topology")
    if algorithm in DECENTRALIZED:
        if _check(errors, f"{where}.topology", isinstance(topology, dict),
                  f"{algorithm} needs a topology section"):
            t_kind = topology.get("kind")
            _check(errors, f"{where}.topology.kind", t_kind in TOPOLOGY_KINDS,
                   f"must be one of {TOPOLOGY_KINDS}")
            if t_kind == "random":
                prob = topology.get("edge_prob")
                _check(errors, f"{where}.topology.edge_prob",
                       isinstance(prob, (int, float)) and 0 < prob <= 1, "edge_prob in (0, 1] required")
    elif topology is not None:
        errors.append(f"{where}.topology: {algorithm} takes no topology")

    quantizer = raw.get("quantizer")
    if algorithm == "dfedavgm_quantized":
        if _check(errors, f"{where}.quantizer", isinstance(quantizer, dict),
                  "dfedavgm_quantized needs a quantizer section"):
            s = quantizer.get("s")
            _check(errors, f"{where}.quantizer.s", isinstance(s, (int, float)) and s > 0, "s > 0 required")
            b = quantizer.get("b")
            _check(errors, f"{where}.quantizer.b", isinstance(b, int) and 1 <= b <= 32, "b in [1, 32] required")
            rule = quantizer.get("rule", "deterministic")
            _check(errors, f"{where}.quantizer.rule", rule in ("deterministic", "stochastic"),
                   "rule must be deterministic|stochastic")
    elif quantizer is not None:
        errors.append(f"{where}.quantizer: only dfedavgm_quantized takes a quantizer")

    ck = raw.get("checkpoint_every")
    if ck is not None:
        _check(errors, f"{where}.checkpoint_every", isinstance(ck, int) and ck >= 1,
               "checkpoint_every must be an integer >= 1")

    if errors:
        return None
    return ExperimentSpec(
        name=name, algorithm=algorithm, rounds=rounds, problem=dict(problem),
        trainer=dict(trainer), output=output, repetitions=reps, base_seed=base_seed,
        topology=dict(topology) if topology else None,
        quantizer=dict(quantizer) if quantizer else None,
        checkpoint_every=ck,
    )


def parse_config(data: dict) -> list[ExperimentSpec]:
    """Validate a parsed YAML mapping; raises with every offending field."""
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ConfigValidationError(["top level must be a mapping with an 'experiments' list"])
    experiments = data.get("experiments", [])
    if not isinstance(experiments, list):
        raise ConfigValidationError(["experiments: must be a list"])
    specs = []
    for idx, raw in enumerate(experiments):
        spec = _validate_experiment(raw, f"experiments[{idx}]", errors)
        if spec is not None:
            specs.append(spec)
    if errors:
        raise ConfigValidationError(errors)
    return specs


def load_config(path: str) -> list[ExperimentSpec]:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return parse_config(data if data is not None else {})


# ---------------------------------------------------------------------------
# assembling runnable objects from spec dicts
# ---------------------------------------------------------------------------


def build_problem(spec: dict):
    kwargs = {k: v for k, v in spec.items() if k != "kind"}
    if "layout" in kwargs:
        kwargs["layout"] = tuple(kwargs["layout"])
    return PROBLEM_KINDS[spec["kind"]](**kwargs)


def build_mixing(spec: dict, m: int):
    kind = spec["kind"]
    if kind == "ring":
        return metropolis_hastings(build_ring(m))
    if kind == "random":
        return metropolis_hastings(
            build_random_connected(m, spec["edge_prob"], spec.get("seed", 0))
        )
    if kind == "complete":
        return averaging_matrix(m)
    raise ValueError(f"unknown topology kind {kind!r}")


def build_run_config(spec: ExperimentSpec, seed: int, problem) -> RunConfig:
    trainer = LocalTrainerConfig(
        eta=float(spec.trainer["eta"]),
        theta=float(spec.trainer.get("theta", 0.0)),
        K=int(spec.trainer.get("K", 1)),
    )
    mixing = build_mixing(spec.topology, problem.m) if spec.topology else None
    quantizer = None
    if spec.quantizer:
        quantizer = QuantizerSpec(
            s=float(spec.quantizer["s"]),
            b=int(spec.quantizer["b"]),
            rule=spec.quantizer.get("rule", "deterministic"),
            seed=int(spec.quantizer.get("seed", 0)),
        )
    return RunConfig(
        algorithm=spec.algorithm, T=spec.rounds, trainer=trainer,
        seed=seed, mixing=mixing, quantizer=quantizer,
    )


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _sidecar(spec: ExperimentSpec, seed: int, problem, config: RunConfig, result: RunResult) -> dict:
    """Per-run JSON: config echo, problem constants, bound constants, finals."""
    side: dict = {
        "experiment": spec.to_dict(),
        "seed": seed,
        "lambda": config.mixing.lam if config.mixing else None,
        "problem_constants": {
            "L": problem.L, "nu": problem.nu, "min_f": problem.min_f,
            "sigma_l": problem.sigma_l, "sigma_g": problem.sigma_g,
        },
        "measured_B": result.max_local_grad_norm,
        "final": {
            "f_avg": result.records[-1].f_avg,
            "grad_norm_sq": result.records[-1].grad_norm_sq,
            "consensus": result.records[-1].consensus,
            "bits_total": result.records[-1].bits_total,
        },
    }
    tr = config.trainer
    if problem.L is not None and problem.sigma_l is not None and problem.sigma_g is not None:
        lam = config.mixing.lam if config.mixing else 0.0
        consts = theorem1_constants(
            tr.K, tr.eta, tr.theta, problem.L,
            problem.sigma_l, problem.sigma_g, result.max_local_grad_norm, lam,
        )
        small, stable = stepsize_conditions(tr.eta, tr.K, problem.L)
        theory: dict = {
            "gamma": consts.gamma, "alpha": consts.alpha, "beta": consts.beta,
            "C1": consts.C1, "C2": consts.C2,
            "stepsize_small_enough": small, "stepsize_stable": stable,
        }
        if problem.min_f is not None and config.T >= 1:
            f0 = result.records[0].f_avg
            try:
                theory["min_grad_bound"] = theorem1_bound(consts, f0, problem.min_f, config.T)
            except BoundInapplicableError:
                theory["min_grad_bound"] = None
            if problem.nu is not None:
                try:
                    theory["gap_bound"] = pl_bound(consts, problem.nu, f0, problem.min_f, config.T)
                except (BoundInapplicableError, ValueError):
                    theory["gap_bound"] = None
        side["theory"] = theory
    return side


def _execute_run(task: dict) -> dict:
    """One (experiment, seed) run; module-level so worker pools can pickle it."""
    spec = ExperimentSpec(**task["spec"])
    seed = task["seed"]
    out_dir = task["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    problem = build_problem(spec.problem)
    config = build_run_config(spec, seed, problem)
    status = {"experiment": spec.name, "seed": seed, "status": "ok"}
    try:
        ck_dir = None
        if spec.checkpoint_every:
            ck_dir = os.path.join(out_dir, f"seed{seed}_checkpoints")
            os.makedirs(ck_dir, exist_ok=True)
        result = run_experiment(
            config, problem,
            checkpoint_every=spec.checkpoint_every, checkpoint_dir=ck_dir,
        )
    except (DivergenceError, QuantizationRangeError) as exc:
        _atomic_write(os.path.join(out_dir, f"seed{seed}.csv"),
                      records_to_csv(exc.records or []))
        status.update(status="diverged", error=str(exc))
        return status
    _atomic_write(os.path.join(out_dir, f"seed{seed}.csv"), records_to_csv(result.records))
    _atomic_write(
        os.path.join(out_dir, f"seed{seed}.json"),
        json.dumps(_sidecar(spec, seed, problem, config, result), indent=2, sort_keys=True) + "\n",
    )
    status["final_f_avg"] = result.records[-1].f_avg
    status["bits_total"] = result.records[-1].bits_total
    return status


def run_from_config(path: str, out_root: str | None = None, workers: int | None = None) -> int:
    """Execute every (experiment x seed); returns the process exit code."""
    try:
        specs = load_config(path)
    except ConfigValidationError as exc:
        print(str(exc))
        return 1
    except (OSError, yaml.YAMLError) as exc:
        print(f"cannot read config {path}: {exc}")
        return 3

    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    tasks = []
    for spec in specs:
        out_dir = spec.output if out_root is None else os.path.join(out_root, spec.output)
        for seed in spec.seeds():
            tasks.append({"spec": spec.to_dict(), "seed": seed, "out_dir": out_dir})

    try:
        if workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                statuses = list(pool.map(_execute_run, tasks))
        else:
            statuses = [_execute_run(t) for t in tasks]

        summary = {
            "runs": statuses,
            "experiments": [s.name for s in specs],
            "failures": [s for s in statuses if s["status"] != "ok"],
        }
        summary_dir = out_root if out_root is not None else "."
        os.makedirs(summary_dir, exist_ok=True)
        _atomic_write(os.path.join(summary_dir, "summary.json"),
                      json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"I/O failure: {exc}")
        return 3
    if summary["failures"]:
        for f in summary["failures"]:
            print(f"run failed: {f['experiment']} seed {f['seed']}: {f['error']}")
        return 2
    return 0
