"""Synthetic multi-client objectives with stochastic gradient oracles.

Each problem exposes m per-client differentiable objectives f_i over a flat
parameter vector of dimension d, the pooled objective f = mean_i f_i, and an
unbiased stochastic-gradient oracle per client.  Where the construction
admits them, exact constants are declared:

  L        smoothness (Lipschitz constant of every grad f_i)
  nu       gradient-domination constant: ||grad f(x)||^2 >= 2 nu (f(x) - min f)
  min_f    pooled optimum value
  sigma_l  local gradient-noise bound: E||g~ - grad f_i||^2 <= sigma_l^2
  sigma_g  heterogeneity bound: mean_i ||grad f_i - grad f||^2 <= sigma_g^2

Unknown constants are None and can be estimated over probe points with
``measure_constants``.  Stochastic draws consume a caller-supplied Generator
so the keying discipline (seed, client, round) lives with the caller.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream


class PartitionError(ValueError):
    """Infeasible partition request (e.g. more shards than samples)."""


@dataclass(frozen=True)
class MeasuredConstants:
    """Empirical maxima over a probe set of points."""

    sigma_l: float
    sigma_g: float
    B: float


@dataclass(frozen=True)
class Partition:
    """Assignment of dataset indices to clients; a set partition of range(n)."""

    mode: str  # "iid" | "noniid"
    shards_per_client: int | None
    clients: tuple[tuple[int, ...], ...]

    @property
    def m(self) -> int:
        return len(self.clients)

    def to_text(self) -> str:
        """One ``client: i1 i2 ...`` line per client."""
        return "\n".join(
            f"{c}: " + " ".join(str(i) for i in idx)
            for c, idx in enumerate(self.clients)
        ) + "\n"

    @classmethod
    def from_text(cls, text: str, mode: str = "iid", shards_per_client: int | None = None) -> "Partition":
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            _, payload = line.split(":", 1)
            rows.append(tuple(int(tok) for tok in payload.split()))
        return cls(mode=mode, shards_per_client=shards_per_client, clients=tuple(rows))


def partition_indices(
    n: int,
    m: int,
    mode: str,
    seed: int,
    *,
    labels: np.ndarray | None = None,
    shards_per_client: int = 2,
) -> Partition:
    """Split range(n) across m clients.

    iid     shuffle, then split as evenly as possible.
    noniid  sort indices by label, cut into m*shards_per_client contiguous
            shards of equal size (the last shard absorbs the remainder), and
            deal shards_per_client shards to each client in random order.
    """
    if n < m:
        raise PartitionError(f"cannot split n={n} samples across m={m} clients")
    rng = stream(seed, 0x9A57)
    if mode == "iid":
        perm = rng.permutation(n)
        parts = np.array_split(perm, m)
        return Partition(
            mode="iid",
            shards_per_client=None,
            clients=tuple(tuple(int(i) for i in p) for p in parts),
        )
    if mode == "noniid":
        if labels is None:
            raise PartitionError("noniid partitioning needs per-sample labels")
        k = int(shards_per_client)
        n_shards = m * k
        if n_shards > n:
            raise PartitionError(
                f"infeasible shards: m*k = {n_shards} exceeds n = {n}"
            )
        order = np.argsort(np.asarray(labels), kind="stable")
        size = n // n_shards
        shards = [order[i * size : (i + 1) * size] for i in range(n_shards)]
        shards[-1] = order[(n_shards - 1) * size :]  # absorb remainder
        deal = rng.permutation(n_shards)
        clients = []
        for c in range(m):
            mine = np.concatenate([shards[deal[c * k + j]] for j in range(k)])
            clients.append(tuple(int(i) for i in mine))
        return Partition(mode="noniid", shards_per_client=k, clients=tuple(clients))
    raise PartitionError(f"unknown partition mode {mode!r}")


# ---------------------------------------------------------------------------
# quadratics: f_i(x) = 1/2 (x - c_i)^T A (x - c_i)
# ---------------------------------------------------------------------------


class QuadraticProblem:
    """Heterogeneous quadratics sharing one curvature matrix A.

    All clients see the same positive-definite A (eigenvalues spanning
    [mu, L] exactly); heterogeneity enters through per-client centers c_i.
    With shared curvature the key constants are exact: grad f_i - grad f is
    constant in x, so sigma_g is a true global bound, and the pooled optimum
    is the mean center.
    """

    kind = "quadratic"

    def __init__(self, m, d, heterogeneity, noise_sigma, seed, *, mu=0.25, L=1.0, center_scale=1.0):
        if m < 1 or d < 1:
            raise ValueError(f"need m >= 1 and d >= 1, got m={m}, d={d}")
        if heterogeneity < 0 or noise_sigma < 0:
            raise ValueError("heterogeneity and noise_sigma must be >= 0")
        if not (0 < mu <= L):
            raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
        self.m, self.d = int(m), int(d)
        self.noise_sigma = float(noise_sigma)
        self.seed = int(seed)
        rng = stream(seed, 0x0A0D)
        eigs = np.linspace(mu, L, d) if d > 1 else np.array([L])
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        self.A = (q * eigs) @ q.T
        self.A = 0.5 * (self.A + self.A.T)
        center = center_scale * rng.standard_normal(d)
        self.centers = center + heterogeneity * rng.standard_normal((self.m, d))
        self.c_bar = self.centers.mean(axis=0)

        self.L = float(L)
        self.nu = float(mu) if d > 1 else float(L)
        diffs = self.c_bar - self.centers
        self.min_f = float(0.5 * np.mean(np.einsum("id,de,ie->i", diffs, self.A, diffs)))
        self.sigma_l = self.noise_sigma
        self.sigma_g = float(np.sqrt(np.mean(np.sum((diffs @ self.A) ** 2, axis=1))))

    def loss(self, i: int, x: np.ndarray) -> float:
        r = x - self.centers[i]
        return float(0.5 * r @ (self.A @ r))

    def grad(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.A @ (x - self.centers[i])

    def stochastic_grad(self, i: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        g = self.A @ (x - self.centers[i])
        if self.noise_sigma > 0.0:
            g = g + rng.standard_normal(self.d) * (self.noise_sigma / np.sqrt(self.d))
        return g

    def global_loss(self, x: np.ndarray) -> float:
        return float(np.mean([self.loss(i, x) for i in range(self.m)]))

    def global_grad(self, x: np.ndarray) -> np.ndarray:
        return self.A @ (x - self.c_bar)

    def measure_constants(self, points, n_draws=200, seed=0) -> MeasuredConstants:
        return _measure_constants(self, points, n_draws, seed)


def make_quadratic(m, d, heterogeneity, noise_sigma, seed, **kwargs) -> QuadraticProblem:
    return QuadraticProblem(m, d, heterogeneity, noise_sigma, seed, **kwargs)


# ---------------------------------------------------------------------------
# binary logistic regression on planted synthetic data
# ---------------------------------------------------------------------------


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class LogisticProblem:
    """l2-regularized binary logistic regression with labels from a planted
    separator (with flip noise).  Smooth, and reg-strongly convex, so the
    gradient-domination constant nu equals the regularization weight.
    """

    kind = "logistic"

    def __init__(self, m, d, n_per_client, partition_mode, seed, *,
                 reg=1e-3, batch_size=10, flip_prob=0.05, shards_per_client=2):
        if n_per_client < 1:
            raise ValueError(f"need n_per_client >= 1, got {n_per_client}")
        self.m, self.d = int(m), int(d)
        self.reg = float(reg)
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        n = self.m * int(n_per_client)
        rng = stream(seed, 0x106)
        self.X = rng.standard_normal((n, d))
        w_true = rng.standard_normal(d)
        margins = self.X @ w_true
        y = np.where(margins >= 0.0, 1.0, -1.0)
        flips = rng.random(n) < flip_prob
        y[flips] *= -1.0
        self.y = y
        labels = ((y + 1) // 2).astype(int)  # 0/1 label groups for sharding
        self.partition = partition_indices(
            n, self.m, partition_mode, seed, labels=labels,
            shards_per_client=shards_per_client,
        )
        self._idx = [np.asarray(c, dtype=int) for c in self.partition.clients]

        self.L = float(np.max(np.sum(self.X**2, axis=1)) / 4.0 + self.reg)
        self.nu = self.reg
        self.min_f = None
        self.sigma_l = None
        self.sigma_g = None

    def labels(self) -> np.ndarray:
        return ((self.y + 1) // 2).astype(int)

    def _margin(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.y[idx] * (self.X[idx] @ x)

    def loss(self, i: int, x: np.ndarray) -> float:
        t = self._margin(self._idx[i], x)
        return float(np.mean(np.logaddexp(0.0, -t)) + 0.5 * self.reg * (x @ x))

    def _grad_on(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        t = self._margin(idx, x)
        coef = -_sigmoid(-t) * self.y[idx]
        return self.X[idx].T @ coef / idx.shape[0] + self.reg * x

    def grad(self, i: int, x: np.ndarray) -> np.ndarray:
        return self._grad_on(self._idx[i], x)

    def stochastic_grad(self, i: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        local = self._idx[i]
        take = rng.integers(0, local.shape[0], size=self.batch_size)
        return self._grad_on(local[take], x)

    def global_loss(self, x: np.ndarray) -> float:
        return float(np.mean([self.loss(i, x) for i in range(self.m)]))

    def global_grad(self, x: np.ndarray) -> np.ndarray:
        return np.mean([self.grad(i, x) for i in range(self.m)], axis=0)

    def measure_constants(self, points, n_draws=200, seed=0) -> MeasuredConstants:
        return _measure_constants(self, points, n_draws, seed)

    def dump_csv(self) -> str:
        """Features, label, and owning client, one sample per row."""
        owner = np.empty(self.X.shape[0], dtype=int)
        for c, idx in enumerate(self._idx):
            owner[idx] = c
        header = ",".join(f"x{j}" for j in range(self.d)) + ",y,client"
        rows = [header]
        for r in range(self.X.shape[0]):
            feats = ",".join(repr(v) for v in self.X[r].tolist())
            rows.append(f"{feats},{int(self.y[r])},{owner[r]}")
        return "\n".join(rows) + "\n"


def make_logistic(m, d, n_per_client, partition_mode, seed, **kwargs) -> LogisticProblem:
    return LogisticProblem(m, d, n_per_client, partition_mode, seed, **kwargs)


# ---------------------------------------------------------------------------
# tiny tanh MLP with softmax cross-entropy on clustered synthetic data
# ---------------------------------------------------------------------------


class MLPProblem:
    """Fully-connected tanh network, softmax cross-entropy, synthetic Gaussian
    blobs.  Smooth activation keeps gradients Lipschitz (no constant is
    declared); gradients are exact backpropagation over the client's data.
    """

    kind = "mlp"

    def __init__(self, m, layout, n_per_client, partition_mode, seed, *,
                 batch_size=10, blob_spread=2.0, noise=0.6, shards_per_client=2,
                 max_params=10_000):
        layout = tuple(int(w) for w in layout)
        if len(layout) < 2 or any(w < 1 for w in layout):
            raise ValueError(f"layout needs >= 2 positive widths, got {layout}")
        self.layout = layout
        self.m = int(m)
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.shapes = []
        for a, b in zip(layout[:-1], layout[1:]):
            self.shapes.append((a, b))   # weight
            self.shapes.append((b,))     # bias
        self.d = int(sum(int(np.prod(s)) for s in self.shapes))
        if self.d > max_params:
            raise ValueError(f"layout {layout} has {self.d} parameters > {max_params}")

        n_classes = layout[-1]
        n = self.m * int(n_per_client)
        rng = stream(seed, 0x3317)
        centers = blob_spread * rng.standard_normal((n_classes, layout[0]))
        labels = rng.integers(0, n_classes, size=n)
        self.X = centers[labels] + noise * rng.standard_normal((n, layout[0]))
        self.labels_arr = labels
        self.partition = partition_indices(
            n, self.m, partition_mode, seed, labels=labels,
            shards_per_client=shards_per_client,
        )
        self._idx = [np.asarray(c, dtype=int) for c in self.partition.clients]

        self.L = None
        self.nu = None
        self.min_f = None
        self.sigma_l = None
        self.sigma_g = None

    # -- parameter packing --

    def unpack(self, x: np.ndarray) -> list[np.ndarray]:
        out, pos = [], 0
        for s in self.shapes:
            size = int(np.prod(s))
            out.append(x[pos : pos + size].reshape(s))
            pos += size
        return out

    def pack(self, parts: list[np.ndarray]) -> np.ndarray:
        return np.concatenate([p.ravel() for p in parts])

    def suggested_init(self, seed: int = 0) -> np.ndarray:
        """Small random init (zero parameters are a saddle for tanh nets)."""
        rng = stream(seed, 0x1A17)
        parts = []
        for s in self.shapes:
            if len(s) == 2:
                parts.append(rng.standard_normal(s) / np.sqrt(s[0]))
            else:
                parts.append(np.zeros(s))
        return self.pack(parts)

    # -- forward / backward --

    def _forward(self, params, X):
        acts = [X]
        h = X
        n_layers = len(self.layout) - 1
        for layer in range(n_layers):
            w, b = params[2 * layer], params[2 * layer + 1]
            z = h @ w + b
            h = np.tanh(z) if layer < n_layers - 1 else z
            acts.append(h)
        return acts

    def _loss_from_logits(self, logits, y):
        shifted = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.sum(np.exp(shifted), axis=1))
        return float(np.mean(logz - shifted[np.arange(y.shape[0]), y]))

    def _loss_grad_on(self, idx, x):
        params = self.unpack(x)
        X, y = self.X[idx], self.labels_arr[idx]
        acts = self._forward(params, X)
        logits = acts[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        probs = expz / expz.sum(axis=1, keepdims=True)
        n = X.shape[0]
        loss = self._loss_from_logits(logits, y)

        grads = [None] * len(params)
        delta = probs.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
        n_layers = len(self.layout) - 1
        for layer in range(n_layers - 1, -1, -1):
            w = params[2 * layer]
            a_in = acts[layer]
            grads[2 * layer] = a_in.T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ w.T) * (1.0 - acts[layer] ** 2)
        return loss, self.pack(grads)

    def loss(self, i: int, x: np.ndarray) -> float:
        loss, _ = self._loss_grad_on(self._idx[i], x)
        return loss

    def grad(self, i: int, x: np.ndarray) -> np.ndarray:
        _, g = self._loss_grad_on(self._idx[i], x)
        return g

    def stochastic_grad(self, i: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        local = self._idx[i]
        take = rng.integers(0, local.shape[0], size=self.batch_size)
        _, g = self._loss_grad_on(local[take], x)
        return g

    def global_loss(self, x: np.ndarray) -> float:
        return float(np.mean([self.loss(i, x) for i in range(self.m)]))

    def global_grad(self, x: np.ndarray) -> np.ndarray:
        return np.mean([self.grad(i, x) for i in range(self.m)], axis=0)

    def measure_constants(self, points, n_draws=200, seed=0) -> MeasuredConstants:
        return _measure_constants(self, points, n_draws, seed)

    def dump_csv(self) -> str:
        owner = np.empty(self.X.shape[0], dtype=int)
        for c, idx in enumerate(self._idx):
            owner[idx] = c
        header = ",".join(f"x{j}" for j in range(self.layout[0])) + ",label,client"
        rows = [header]
        for r in range(self.X.shape[0]):
            feats = ",".join(repr(v) for v in self.X[r].tolist())
            rows.append(f"{feats},{int(self.labels_arr[r])},{owner[r]}")
        return "\n".join(rows) + "\n"


def make_tiny_mlp(m, layout, n_per_client, partition_mode, seed, **kwargs) -> MLPProblem:
    return MLPProblem(m, layout, n_per_client, partition_mode, seed, **kwargs)


# ---------------------------------------------------------------------------


def _measure_constants(problem, points, n_draws, seed) -> MeasuredConstants:
    """Empirical sigma_l, sigma_g, B maximized over the probe points."""
    rng = stream(seed, 0x3EA5)
    sig_l2 = 0.0
    sig_g2 = 0.0
    big_b = 0.0
    for x in points:
        grads = np.stack([problem.grad(i, x) for i in range(problem.m)])
        g_bar = grads.mean(axis=0)
        sig_g2 = max(sig_g2, float(np.mean(np.sum((grads - g_bar) ** 2, axis=1))))
        big_b = max(big_b, float(np.max(np.sqrt(np.sum(grads**2, axis=1)))))
        for i in range(problem.m):
            draws = np.stack(
                [problem.stochastic_grad(i, x, rng) for _ in range(n_draws)]
            )
            sig_l2 = max(sig_l2, float(np.mean(np.sum((draws - grads[i]) ** 2, axis=1))))
    return MeasuredConstants(sigma_l=np.sqrt(sig_l2), sigma_g=np.sqrt(sig_g2), B=big_b)


PROBLEM_KINDS = {
    "quadratic": make_quadratic,
    "logistic": make_logistic,
    "mlp": make_tiny_mlp,
}
