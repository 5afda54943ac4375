"""The K-step heavy-ball inner loop a client runs between communications.

Starting from the round's model x, with y^0 = y^{-1} = x, each step applies

    y^{k+1} = y^k - eta * g~(y^k) + theta * (y^k - y^{k-1}),

where g~ is an unbiased stochastic gradient of the client's objective.  The
momentum buffer resets at every communication round (the y^{-1} = y^0
initialization); carrying it across rounds would be a different algorithm.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .rng import stream


class DivergenceError(RuntimeError):
    """Non-finite iterate encountered during local training."""

    def __init__(self, round_index: int, client: int, step: int):
        super().__init__(
            f"non-finite iterate at round {round_index}, client {client}, step {step}"
        )
        self.round_index = round_index
        self.client = client
        self.step = step
        self.records = None  # populated by the round engine on abort


@dataclass(frozen=True)
class LocalTrainerConfig:
    """Learning rate eta > 0, momentum 0 <= theta < 1, K >= 1 inner steps."""

    eta: float
    theta: float = 0.0
    K: int = 1

    def __post_init__(self):
        if not (self.eta > 0.0 and np.isfinite(self.eta)):
            raise ValueError(f"eta must be positive and finite, got {self.eta}")
        if not (0.0 <= self.theta < 1.0):
            raise ValueError(f"0 <= theta < 1 is required, got {self.theta}")
        if int(self.K) < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")


@dataclass(frozen=True, eq=False)
class LocalTrajectory:
    """Iterates y^0..y^K (rows) and, optionally, the gradients that drove them."""

    y: np.ndarray                 # (K+1, d)
    grads: np.ndarray | None      # (K, d) when logging was requested

    @property
    def z(self) -> np.ndarray:
        """Final local model y^K, the vector sent to neighbors."""
        return self.y[-1]


def run_local(
    x_start: np.ndarray,
    client: int,
    round_index: int,
    cfg: LocalTrainerConfig,
    problem,
    seed: int,
    *,
    log_gradients: bool = False,
) -> LocalTrajectory:
    """Run K heavy-ball steps from x_start on client ``client``.

    Gradient draws come from the stream keyed by (seed, client, round_index);
    step k consumes the stream's k-th draw, so trajectories are bitwise
    reproducible and independent of cross-client scheduling.
    """
    x_start = np.asarray(x_start, dtype=float)
    if x_start.shape != (problem.d,):
        raise ValueError(
            f"x_start has shape {x_start.shape}, problem dimension is {problem.d}"
        )
    rng = stream(seed, client, round_index)
    eta, theta = cfg.eta, cfg.theta
    y_prev = y = x_start
    ys = [x_start]
    gs = [] if log_gradients else None
    for k in range(cfg.K):
        g = problem.stochastic_grad(client, y, rng)
        if theta:
            y_next = y - eta * g + theta * (y - y_prev)
        else:
            y_next = y - eta * g
        if not np.all(np.isfinite(y_next)):
            raise DivergenceError(round_index, client, k)
        if gs is not None:
            gs.append(g)
        y_prev, y = y, y_next
        ys.append(y)
    return LocalTrajectory(
        y=np.stack(ys),
        grads=np.stack(gs) if gs else None,
    )


def trajectory_to_csv(traj: LocalTrajectory, round_index: int, client: int, problem) -> str:
    """Diagnostic dump: one row per inner step with iterate norm, local loss,
    and step length."""
    rows = ["round,client,k,y_norm,f_i,step_norm"]
    for k in range(traj.y.shape[0]):
        step = 0.0 if k == 0 else float(np.linalg.norm(traj.y[k] - traj.y[k - 1]))
        rows.append(
            f"{round_index},{client},{k},{np.linalg.norm(traj.y[k])!r},"
            f"{problem.loss(client, traj.y[k])!r},{step!r}"
        )
    return "\n".join(rows) + "\n"


def stepsize_conditions(eta: float, K: int, L: float) -> tuple[bool, bool]:
    """The two admissibility conditions on the inner-loop stepsize:
    eta <= 1/(8 L K), and 64 L^2 K^2 eta^2 + 64 L K eta < 1.
    """
    small = 0.0 < eta <= 1.0 / (8.0 * L * K)
    stable = 64.0 * L**2 * K**2 * eta**2 + 64.0 * L * K * eta < 1.0
    return small, stable


def warn_if_stepsize_violated(eta: float, K: int, L: float) -> None:
    """Warn (never raise): exploratory nonconvex runs may still be useful."""
    small, stable = stepsize_conditions(eta, K, L)
    if not (small and stable):
        warnings.warn(
            f"stepsize eta={eta} violates the admissibility conditions for "
            f"K={K}, L={L} (eta <= 1/(8LK): {small}; "
            f"64L^2K^2eta^2 + 64LKeta < 1: {stable}); convergence bounds "
            "do not apply",
            RuntimeWarning,
            stacklevel=2,
        )


@dataclass(frozen=True)
class DriftProbe:
    """Monte-Carlo drift statistics against their closed-form ceilings.

    step_measured[k] is the mean squared displacement ||y^{k+1} - y^k||^2 and
    drift_measured[k] the mean squared drift ||y^k - x||^2, both averaged over
    clients and seeds.  The ceilings use the measured gradient bound B:

      step_bound    (2 eta^2 sigma_l^2 + 2 eta^2 B^2) / (1 - theta)^2
      drift_bound   C1 eta^2 + 32 K^2 eta^2 mean_i ||grad f(x_i)||^2,
                    C1 = 8 K sigma_l^2 + 32 K^2 sigma_g^2
                         + 64 K^2 theta^2 (sigma_l^2 + B^2) / (1-theta)^2
    """

    step_measured: np.ndarray
    step_bound: float
    drift_measured: np.ndarray
    drift_bound: float
    B: float
    sigma_l: float
    sigma_g: float


def drift_bound_probe(
    problem,
    cfg: LocalTrainerConfig,
    x_starts: np.ndarray,
    *,
    seeds,
    round_index: int = 0,
    sigma_l: float | None = None,
    sigma_g: float | None = None,
) -> DriftProbe:
    """Measure inner-loop displacement and drift over clients x seeds.

    ``x_starts`` is an (m, d) array of round-start models x(i).  sigma_l and
    sigma_g default to the problem's declared values; B is measured as the
    largest full local-gradient norm seen anywhere along the trajectories.
    """
    x_starts = np.asarray(x_starts, dtype=float)
    m = problem.m
    sig_l = problem.sigma_l if sigma_l is None else sigma_l
    sig_g = problem.sigma_g if sigma_g is None else sigma_g
    if sig_l is None or sig_g is None:
        raise ValueError("problem declares no sigma_l/sigma_g; pass them explicitly")

    step_sq = np.zeros(cfg.K)
    drift_sq = np.zeros(cfg.K + 1)
    big_b = 0.0
    count = 0
    for seed in seeds:
        for i in range(m):
            traj = run_local(x_starts[i], i, round_index, cfg, problem, seed)
            diffs = traj.y[1:] - traj.y[:-1]
            step_sq += np.sum(diffs**2, axis=1)
            drift = traj.y - x_starts[i]
            drift_sq += np.sum(drift**2, axis=1)
            for y in traj.y:
                big_b = max(big_b, float(np.linalg.norm(problem.grad(i, y))))
        count += 1
    step_sq /= count * m
    drift_sq /= count * m

    eta, theta, K = cfg.eta, cfg.theta, cfg.K
    step_bound = (2.0 * eta**2 * sig_l**2 + 2.0 * eta**2 * big_b**2) / (1.0 - theta) ** 2
    c1 = (
        8.0 * K * sig_l**2
        + 32.0 * K**2 * sig_g**2
        + 64.0 * K**2 * theta**2 * (sig_l**2 + big_b**2) / (1.0 - theta) ** 2
    )
    grad_term = float(np.mean([
        np.sum(problem.global_grad(x_starts[i]) ** 2) for i in range(m)
    ]))
    drift_bound = c1 * eta**2 + 32.0 * K**2 * eta**2 * grad_term
    return DriftProbe(
        step_measured=step_sq,
        step_bound=float(step_bound),
        drift_measured=drift_sq,
        drift_bound=float(drift_bound),
        B=big_b,
        sigma_l=float(sig_l),
        sigma_g=float(sig_g),
    )
