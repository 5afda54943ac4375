"""Synchronous round engine for gossip training and its baselines.

Every algorithm starts all clients at x^0 = 0 and runs T communication
rounds.  Per round:

  dfedavgm             each client runs the K-step heavy-ball loop, sends its
                       final local model z(i) to its neighbors, and replaces
                       its model with the mixing-weighted neighbor average
                       x'(i) = sum_l w_il z(l).
  dfedavgm_quantized   as above, but clients send the quantized model delta
                       q(i) = Q[z(i) - x(i)]; receivers rebuild each sender's
                       model from its replica plus the decoded delta and
                       average those: x' = W (x + decode(q)).
  dsgd                 one stochastic gradient step, then neighbor averaging;
                       coincides bitwise with dfedavgm at K = 1, theta = 0.
  fedavg               full-participation central aggregation: local loops,
                       then everyone adopts the uniform average (realized as
                       multiplication by P = 11^T/m, which is the same
                       computation the gossip step performs when W = P).
  sgd                  one model trained on the pooled gradient (the mean of
                       the per-client oracles); no communication.

Communication accounting is exact and integral: 32*d bits per edge-direction
for full-precision sends, (32 + d*b) per edge-direction when quantized,
2*32*d per client per round for the up/down central exchange, 0 for sgd.
Metrics are computed at the average model x_bar with the exact pooled
gradient, never a stochastic estimate.
"""
from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .local_training import DivergenceError, LocalTrainerConfig, run_local, warn_if_stepsize_violated
from .quantization import QuantizationRangeError, QuantizerSpec, payload_bits, quantize_vector
from .rng import stream
from .theory import consensus_distance
from .topology import MixingMatrix

ALGORITHMS = ("dfedavgm", "dfedavgm_quantized", "dsgd", "fedavg", "sgd")
DECENTRALIZED = ("dfedavgm", "dfedavgm_quantized", "dsgd")

CSV_HEADER = "t,f_avg,grad_norm_sq,consensus,bits_total,wall_ms"
CHECKPOINT_MAGIC = b"DFEDSNAP"


@dataclass
class ClientState:
    """One client's current model and its cumulative bits sent."""

    index: int
    x: np.ndarray
    bits_sent: int = 0


@dataclass(frozen=True)
class RoundRecord:
    """Metrics of the fleet after round t (t = 0 is the initial state)."""

    t: int
    f_avg: float
    grad_norm_sq: float
    consensus: float
    bits_total: int
    wall_ms: float


@dataclass(frozen=True)
class RunConfig:
    """What to run: algorithm, horizon, trainer, topology, quantizer, seed."""

    algorithm: str
    T: int
    trainer: LocalTrainerConfig
    seed: int
    mixing: MixingMatrix | None = None
    quantizer: QuantizerSpec | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; pick one of {ALGORITHMS}")
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if (self.quantizer is not None) != (self.algorithm == "dfedavgm_quantized"):
            raise ValueError("quantizer must be present iff algorithm is dfedavgm_quantized")
        if self.algorithm in DECENTRALIZED and self.mixing is None:
            raise ValueError(f"{self.algorithm} needs a mixing matrix")
        if self.algorithm not in DECENTRALIZED and self.mixing is not None:
            raise ValueError(f"{self.algorithm} takes no topology")


@dataclass
class RunResult:
    """Round records plus the final fleet and the probe-region gradient bound."""

    records: list[RoundRecord]
    final_x: np.ndarray
    max_local_grad_norm: float
    history: np.ndarray | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# round transitions
# ---------------------------------------------------------------------------


def _stack(states: list[ClientState]) -> np.ndarray:
    return np.stack([s.x for s in states])


def round_dfedavgm(states, mixing, trainer, problem, t, seed):
    """Local heavy-ball loops, then neighbor averaging of the z vectors."""
    z = np.stack([
        run_local(s.x, s.index, t, trainer, problem, seed).z for s in states
    ])
    x_new = mixing.w @ z
    d = problem.d
    return [
        ClientState(s.index, x_new[s.index],
                    s.bits_sent + 32 * d * int(mixing.degrees[s.index]))
        for s in states
    ]


def round_dfedavgm_quantized(states, mixing, trainer, quantizer, problem, t, seed):
    """Local loops, quantized-delta exchange, gossip on the corrected models.

    The new fleet is W (X + decode(Q(Z - X))): receivers reconstruct each
    sender's model from the replica they already hold plus the quantized
    delta, then average.  (Mixing the deltas alone would leave the base
    models unmixed, so the s -> 0 limit would not recover the unquantized
    algorithm and consensus would not contract.)
    """
    d = problem.d
    corrected = np.empty((len(states), d))
    for s in states:
        z = run_local(s.x, s.index, t, trainer, problem, seed).z
        try:
            qv = quantize_vector(z - s.x, quantizer, round_index=t, client=s.index)
        except QuantizationRangeError as exc:
            raise QuantizationRangeError(
                exc.value, exc.coordinate, quantizer.lo, quantizer.hi,
                context=f"round {t}, client {s.index}",
            ) from exc
        corrected[s.index] = s.x + qv.decode()
    x_new = mixing.w @ corrected
    per_client = payload_bits(d, quantizer.b, 1)
    return [
        ClientState(s.index, x_new[s.index],
                    s.bits_sent + per_client * int(mixing.degrees[s.index]))
        for s in states
    ]


def round_dsgd(states, mixing, eta, problem, t, seed):
    """One stochastic gradient step per client, then neighbor averaging."""
    z = np.empty((len(states), problem.d))
    for s in states:
        g = problem.stochastic_grad(s.index, s.x, stream(seed, s.index, t))
        z[s.index] = s.x - eta * g
    x_new = mixing.w @ z
    d = problem.d
    return [
        ClientState(s.index, x_new[s.index],
                    s.bits_sent + 32 * d * int(mixing.degrees[s.index]))
        for s in states
    ]


def round_fedavg(states, trainer, problem, t, seed):
    """Full participation: local loops, central uniform average, broadcast."""
    m = len(states)
    z = np.stack([
        run_local(s.x, s.index, t, trainer, problem, seed).z for s in states
    ])
    p = np.full((m, m), 1.0 / m)
    x_new = p @ z
    d = problem.d
    return [
        ClientState(s.index, x_new[s.index], s.bits_sent + 2 * 32 * d)
        for s in states
    ]


def round_sgd(state, trainer, problem, t, seed):
    """K heavy-ball steps of one model on the pooled stochastic gradient."""
    rngs = [stream(seed, i, t) for i in range(problem.m)]
    eta, theta = trainer.eta, trainer.theta
    y_prev = y = state.x
    for k in range(trainer.K):
        g = np.mean(
            np.stack([problem.stochastic_grad(i, y, rngs[i]) for i in range(problem.m)]),
            axis=0,
        )
        if theta:
            y_next = y - eta * g + theta * (y - y_prev)
        else:
            y_next = y - eta * g
        if not np.all(np.isfinite(y_next)):
            raise DivergenceError(t, 0, k)
        y_prev, y = y, y_next
    return ClientState(0, y, state.bits_sent)


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------


def run_experiment(
    config: RunConfig,
    problem,
    *,
    init_x: np.ndarray | None = None,
    collect_states: bool = False,
    checkpoint_every: int | None = None,
    checkpoint_dir=None,
    track_grad_bound: bool = True,
) -> RunResult:
    """Run T rounds and record fleet metrics after every round.

    Deterministic given the config (wall_ms excepted).  On divergence the
    raised error carries the records produced so far in ``.records``.
    """
    m = 1 if config.algorithm == "sgd" else problem.m
    d = problem.d
    if init_x is None:
        init = np.zeros(d)
    else:
        init = np.asarray(init_x, dtype=float)
    states = [ClientState(i, init.copy()) for i in range(m)]
    if problem.L is not None:
        warn_if_stepsize_violated(config.trainer.eta, config.trainer.K, problem.L)

    records: list[RoundRecord] = []
    history = [] if collect_states else None
    max_grad = 0.0

    def observe(t, wall_ms):
        nonlocal max_grad
        x = _stack(states)
        x_bar = x.mean(axis=0)
        g = problem.global_grad(x_bar)
        records.append(RoundRecord(
            t=t,
            f_avg=problem.global_loss(x_bar),
            grad_norm_sq=float(g @ g),
            consensus=consensus_distance(x),
            bits_total=sum(s.bits_sent for s in states),
            wall_ms=wall_ms,
        ))
        if track_grad_bound:
            for s in states:
                if config.algorithm == "sgd":
                    norm = float(np.linalg.norm(problem.global_grad(s.x)))
                else:
                    norm = float(np.linalg.norm(problem.grad(s.index, s.x)))
                max_grad = max(max_grad, norm)
        if history is not None:
            history.append(x)

    observe(0, 0.0)
    try:
        for t in range(config.T):
            tic = time.perf_counter()
            if config.algorithm == "dfedavgm":
                states = round_dfedavgm(states, config.mixing, config.trainer, problem, t, config.seed)
            elif config.algorithm == "dfedavgm_quantized":
                states = round_dfedavgm_quantized(
                    states, config.mixing, config.trainer, config.quantizer, problem, t, config.seed
                )
            elif config.algorithm == "dsgd":
                states = round_dsgd(states, config.mixing, config.trainer.eta, problem, t, config.seed)
            elif config.algorithm == "fedavg":
                states = round_fedavg(states, config.trainer, problem, t, config.seed)
            else:
                states = [round_sgd(states[0], config.trainer, problem, t, config.seed)]
            observe(t + 1, (time.perf_counter() - tic) * 1e3)
            if checkpoint_every and checkpoint_dir is not None and (t + 1) % checkpoint_every == 0:
                save_checkpoint(f"{checkpoint_dir}/round{t + 1:06d}.bin", _stack(states))
    except (DivergenceError, QuantizationRangeError) as exc:
        exc.records = records  # partial results stay inspectable
        raise
    return RunResult(
        records=records,
        final_x=_stack(states),
        max_local_grad_norm=max_grad,
        history=np.stack(history) if history else None,
    )


def expected_total_bits(algorithm: str, T: int, d: int, *, mixing=None, m=None, b=None) -> int:
    """Closed-form cumulative bit count after T rounds."""
    if algorithm == "sgd":
        return 0
    if algorithm == "fedavg":
        return T * 2 * 32 * d * m
    directed_edges = int(mixing.degrees.sum())
    if algorithm in ("dfedavgm", "dsgd"):
        return T * 32 * d * directed_edges
    if algorithm == "dfedavgm_quantized":
        return T * (32 + d * b) * directed_edges
    raise ValueError(f"unknown algorithm {algorithm!r}")


# ---------------------------------------------------------------------------
# record and checkpoint serialization
# ---------------------------------------------------------------------------


def records_to_csv(records) -> str:
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.t},{r.f_avg!r},{r.grad_norm_sq!r},{r.consensus!r},"
            f"{r.bits_total},{r.wall_ms!r}"
        )
    return "\n".join(lines) + "\n"


def records_from_csv(text: str) -> list[RoundRecord]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"unexpected CSV header: {lines[0] if lines else '<empty>'!r}")
    out = []
    for ln in lines[1:]:
        t, f_avg, gns, cons, bits, wall = ln.split(",")
        out.append(RoundRecord(
            t=int(t), f_avg=float(f_avg), grad_norm_sq=float(gns),
            consensus=float(cons), bits_total=int(bits), wall_ms=float(wall),
        ))
    return out


def records_to_jsonl(records) -> str:
    return "\n".join(json.dumps(asdict(r)) for r in records) + "\n"


def save_checkpoint(path, x: np.ndarray) -> None:
    """Fleet snapshot: 16-byte header (8-byte magic, uint32 m, uint32 d,
    little-endian) followed by m rows of d float64 values, little-endian."""
    m, d = x.shape
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", m, d))
        fh.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def load_checkpoint(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        m, d = struct.unpack("<II", fh.read(8))
        body = np.frombuffer(fh.read(m * d * 8), dtype="<f8")
    return body.reshape(m, d).astype(float)
