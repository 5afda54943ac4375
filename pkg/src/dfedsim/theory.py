"""Closed-form convergence constants and bounds for the gossip trainer.

Everything here is a faithful transcription of the bound algebra — the 8/32/64
coefficients are kept exactly as derived, with no tightening — so simulation
output can be compared against what the analysis predicts.

Core quantities, for K inner steps, stepsize eta, momentum theta, smoothness
L, noise bounds sigma_l / sigma_g / B, and mixing constant lam:

  gamma = eta (K - theta)/(1 - theta)
          - 64 (1 - theta) L^2 K^4 eta^3 / (K - theta) - 64 L K^2 eta^2

  C1 = 8 K sigma_l^2 + 32 K^2 sigma_g^2
       + 64 K^2 theta^2 (sigma_l^2 + B^2)/(1 - theta)^2
  C2 = C1 + 32 K^2 B^2

  alpha = ((1 - theta) L^2 K^2 eta^3/(K - theta) + L eta^2) * C1 / gamma
  beta  = (64 (1 - theta) L^4 K^4 eta^5/(K - theta) + 64 L^3 K^2 eta^4)
          * C2 / ((1 - lam) gamma)

The min-gradient bound over T rounds is 2(f(x1) - min f)/(gamma T) + alpha
+ beta; under gradient domination with constant nu the suboptimality bound is
(1 - nu gamma)^T (f(x0) - min f) + (alpha + beta)/(2 nu).  Both need
gamma > 0 to mean anything; when the stepsize is too large for that, the
bounds report "inapplicable" instead of a negative number.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class BoundInapplicableError(ValueError):
    """gamma <= 0: the chosen stepsize is outside the bound's regime."""


@dataclass(frozen=True)
class TheoryConstants:
    """Evaluated bound constants plus the inputs they came from."""

    gamma: float
    alpha: float
    beta: float
    C1: float
    C2: float
    K: int
    eta: float
    theta: float
    L: float
    sigma_l: float
    sigma_g: float
    B: float
    lam: float
    stepsize_small_enough: bool  # eta <= 1/(8 L K)
    stepsize_stable: bool        # 64 L^2 K^2 eta^2 + 64 L K eta < 1

    @property
    def usable(self) -> bool:
        return self.gamma > 0.0


def theorem1_constants(K, eta, theta, L, sigma_l, sigma_g, B, lam) -> TheoryConstants:
    """Evaluate gamma, alpha, beta, C1, C2 for the given run parameters."""
    for name, v in (("K", K), ("eta", eta), ("theta", theta), ("L", L),
                    ("sigma_l", sigma_l), ("sigma_g", sigma_g), ("B", B), ("lam", lam)):
        if not np.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v}")
    if not (0.0 <= theta < 1.0):
        raise ValueError(f"0 <= theta < 1 is required, got {theta}")
    if not (0.0 <= lam < 1.0):
        raise ValueError(f"0 <= lam < 1 is required, got {lam}")
    K = int(K)
    if K < 1:
        raise ValueError(f"K must be a positive integer, got {K}")

    one_minus = 1.0 - theta
    k_gap = K - theta
    gamma = (
        eta * k_gap / one_minus
        - 64.0 * one_minus * L**2 * K**4 * eta**3 / k_gap
        - 64.0 * L * K**2 * eta**2
    )
    c1 = (
        8.0 * K * sigma_l**2
        + 32.0 * K**2 * sigma_g**2
        + 64.0 * K**2 * theta**2 * (sigma_l**2 + B**2) / one_minus**2
    )
    c2 = c1 + 32.0 * K**2 * B**2
    alpha = (one_minus * L**2 * K**2 * eta**3 / k_gap + L * eta**2) * c1 / gamma
    beta = (
        (64.0 * one_minus * L**4 * K**4 * eta**5 / k_gap + 64.0 * L**3 * K**2 * eta**4)
        * c2
        / ((1.0 - lam) * gamma)
    )
    small, stable = (
        0.0 < eta <= 1.0 / (8.0 * L * K),
        64.0 * L**2 * K**2 * eta**2 + 64.0 * L * K * eta < 1.0,
    )
    return TheoryConstants(
        gamma=gamma, alpha=alpha, beta=beta, C1=c1, C2=c2,
        K=K, eta=eta, theta=theta, L=L,
        sigma_l=sigma_l, sigma_g=sigma_g, B=B, lam=lam,
        stepsize_small_enough=small, stepsize_stable=stable,
    )


def theorem1_bound(constants: TheoryConstants, f_x1: float, min_f: float, T: int) -> float:
    """Ceiling on min_{1<=t<=T} ||grad f(x_bar^t)||^2 after T rounds."""
    if constants.gamma <= 0.0:
        raise BoundInapplicableError(
            f"gamma = {constants.gamma} <= 0; stepsize too large for the bound"
        )
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return 2.0 * (f_x1 - min_f) / (constants.gamma * T) + constants.alpha + constants.beta


def pl_bound(constants: TheoryConstants, nu: float, f_x0: float, min_f: float, T: int) -> float:
    """Suboptimality ceiling after T rounds under gradient domination."""
    if constants.gamma <= 0.0:
        raise BoundInapplicableError(
            f"gamma = {constants.gamma} <= 0; stepsize too large for the bound"
        )
    q = nu * constants.gamma
    if q >= 1.0:
        raise ValueError(f"nu * gamma = {q} >= 1: contraction factor invalid")
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    return (
        (1.0 - q) ** T * (f_x0 - min_f)
        + constants.alpha / (2.0 * nu)
        + constants.beta / (2.0 * nu)
    )


def optimal_stepsize_pl(nu: float, K: int, T: float) -> float:
    """Horizon-tuned stepsize 1/(nu K T ln T) for gradient-dominated targets."""
    if T < 3:
        raise ValueError(f"T must be >= 3 (need ln T > 1), got {T}")
    return 1.0 / (nu * K * T * math.log(T))


@dataclass(frozen=True)
class CommSaving:
    """Outcome of the quantization-pays-off test."""

    saves: bool
    epsilon_floor: float
    bit_limit: float


def comm_saving_check(
    b, d, epsilon, theta, L, B, s, sigma_l, sigma_g, K, f_x0_minus_min
) -> CommSaving:
    """Does b-bit quantization beat 32-bit transmission to accuracy epsilon?

    The quantized run needs extra rounds, so it only wins when the target
    error is above the quantization-induced floor

      (1-theta) sqrt(3 L B s) d^(1/4)
        * sqrt(2 (f(x0)-min f) + 8 sigma_l^2/K + 32 sigma_g^2
               + 64 theta^2 (sigma_l^2+B^2)/(1-theta)^2)

    and the per-message payload is actually smaller: b < 128/9 + 32/d.
    """
    inner = (
        2.0 * f_x0_minus_min
        + 8.0 * sigma_l**2 / K
        + 32.0 * sigma_g**2
        + 64.0 * theta**2 * (sigma_l**2 + B**2) / (1.0 - theta) ** 2
    )
    floor = (1.0 - theta) * math.sqrt(3.0 * L * B * s) * d**0.25 * math.sqrt(inner)
    bit_limit = 128.0 / 9.0 + 32.0 / d
    return CommSaving(
        saves=bool(epsilon > floor and b < bit_limit),
        epsilon_floor=float(floor),
        bit_limit=float(bit_limit),
    )


def consensus_distance(states) -> float:
    """Dispersion (1/m) sum_i ||x(i) - x_bar||^2 of client models.

    Accepts an (m, d) array or anything with per-element ``.x`` vectors.
    """
    if isinstance(states, np.ndarray):
        x = states
    else:
        x = np.stack([s.x for s in states])
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"need an (m, d) stack of client models, got {x.shape}")
    x_bar = x.mean(axis=0)
    return float(np.mean(np.sum((x - x_bar) ** 2, axis=1)))
