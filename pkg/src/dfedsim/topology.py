"""Communication graphs and gossip mixing matrices.

Decentralized training synchronizes clients by repeated neighbor averaging
``X <- W X`` over a connected undirected graph.  A valid mixing matrix W is

  1. supported on the graph (w_ij = 0 exactly for non-edges, > 0 otherwise),
  2. symmetric,
  3. doubly stochastic with the eigenvalue 1 simple (null(I - W) = span{1}),
  4. spectrally bounded: 1 = lam_1 > lam_2 >= ... >= lam_m > -1.

The contraction factor lam = max(|lam_2|, |lam_m|) controls how fast gossip
pulls node values toward their common average: with P = 11^T/m,
``||W^k - P||_op <= lam^k`` for every k >= 1, so smaller lam means faster
information mixing.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

#: slack for strict eigenvalue inequalities (lam_m > -1, lam_2 < 1)
EIG_TOL = 1e-10
#: slack for exact linear identities (row sums, symmetry)
SUM_TOL = 1e-12


class TopologyError(ValueError):
    """Invalid graph construction request or malformed graph."""


class SpectralValidationError(ValueError):
    """Matrix fails the mixing-matrix spectral requirements."""


class EigensolverError(RuntimeError):
    """Symmetric eigendecomposition did not converge."""

    def __init__(self, message: str, matrix: np.ndarray):
        super().__init__(f"{message}; offending matrix shape {matrix.shape}:\n{matrix!r}")
        self.matrix = matrix


@dataclass(frozen=True)
class Graph:
    """Connected undirected graph on nodes 0..m-1, no self-loops.

    ``edges`` is a sorted tuple of (i, j) pairs with i < j.
    """

    m: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.m < 2:
            raise TopologyError(f"need at least 2 nodes, got m={self.m}")
        seen = set()
        for i, j in self.edges:
            if i == j:
                raise TopologyError(f"self-loop at node {i}")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise TopologyError(f"edge ({i},{j}) out of range for m={self.m}")
            if i > j:
                raise TopologyError(f"edge ({i},{j}) not normalized (want i < j)")
            if (i, j) in seen:
                raise TopologyError(f"duplicate edge ({i},{j})")
            seen.add((i, j))
        object.__setattr__(self, "edges", tuple(sorted(seen)))
        if not self._connected():
            raise TopologyError("graph is not connected")

    def _connected(self) -> bool:
        adj = self.neighbor_lists()
        visited = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in visited:
                    visited.add(v)
                    queue.append(v)
        return len(visited) == self.m

    def neighbor_lists(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.m)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return [sorted(a) for a in adj]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.m, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.m, self.m))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def to_edge_list(self) -> str:
        """Serialize as one ``i j`` pair per line, 0-indexed."""
        return "\n".join(f"{i} {j}" for i, j in self.edges) + "\n"

    @classmethod
    def from_edge_list(cls, text: str, m: int | None = None) -> "Graph":
        edges = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            i, j = (int(tok) for tok in line.split())
            edges.append((min(i, j), max(i, j)))
        if m is None:
            m = 1 + max(max(e) for e in edges)
        return cls(m=m, edges=tuple(sorted(set(edges))))


def build_ring(m: int) -> Graph:
    """Ring on m >= 3 nodes: node i linked to (i-1) mod m and (i+1) mod m."""
    if m < 3:
        raise TopologyError(f"a ring needs m >= 3 nodes, got {m}")
    edges = tuple(sorted((min(i, (i + 1) % m), max(i, (i + 1) % m)) for i in range(m)))
    return Graph(m=m, edges=edges)


def build_complete(m: int) -> Graph:
    """Complete graph on m >= 2 nodes."""
    return Graph(m=m, edges=tuple((i, j) for i in range(m) for j in range(i + 1, m)))


def build_random_connected(m: int, edge_prob: float, seed: int) -> Graph:
    """Random connected graph: a random spanning tree plus Bernoulli extras.

    Deterministic given ``seed``; always connected by construction.
    """
    if m < 2:
        raise TopologyError(f"need at least 2 nodes, got m={m}")
    if not (0.0 < edge_prob <= 1.0):
        raise TopologyError(f"edge_prob must be in (0, 1], got {edge_prob}")
    rng = stream(seed, 0xB11D)
    order = rng.permutation(m)
    edges: set[tuple[int, int]] = set()
    for pos in range(1, m):
        u = int(order[pos])
        v = int(order[rng.integers(0, pos)])
        edges.add((min(u, v), max(u, v)))
    for i in range(m):
        for j in range(i + 1, m):
            if (i, j) not in edges and rng.random() < edge_prob:
                edges.add((i, j))
    return Graph(m=m, edges=tuple(sorted(edges)))


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Validated gossip weights with cached spectral constants.

    ``lam`` is max(|lam2|, |lam_min|) in [0, 1); ``lam2``/``lam_min`` are the
    second-largest and smallest eigenvalues of ``w``.
    """

    w: np.ndarray
    graph: Graph
    lam: float
    lam2: float
    lam_min: float
    degrees: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        self.w.setflags(write=False)
        if self.degrees is None:
            object.__setattr__(self, "degrees", self.graph.degrees())

    @property
    def m(self) -> int:
        return self.graph.m

    def to_csv(self) -> str:
        return "\n".join(
            ",".join(repr(v) for v in row) for row in self.w.tolist()
        ) + "\n"


def _symmetric_eigvals(w: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.eigvalsh(w)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"eigvalsh failed: {exc}", w) from exc


def spectral_constant(w) -> float:
    """max(|lam_2|, |lam_m|) of a symmetric stochastic matrix.

    Accepts a raw matrix or a MixingMatrix.  Raises SpectralValidationError
    when the value is >= 1 (up to EIG_TOL), which happens exactly when the
    supporting graph is disconnected.
    """
    if isinstance(w, MixingMatrix):
        w = w.w
    eigs = _symmetric_eigvals(np.asarray(w, dtype=float))
    lam2 = float(eigs[-2])
    lam_min = float(eigs[0])
    lam = max(abs(lam2), abs(lam_min))
    if lam >= 1.0 - EIG_TOL:
        raise SpectralValidationError(
            f"spectral constant {lam:.12f} >= 1: eigenvalue 1 is not simple "
            "(disconnected support) or spectrum leaves (-1, 1]"
        )
    return lam


def mixing_from_weights(w: np.ndarray, graph: Graph) -> MixingMatrix:
    """Validate raw weights against the mixing-matrix definition and wrap them."""
    w = np.array(w, dtype=float)
    m = graph.m
    if w.shape != (m, m):
        raise SpectralValidationError(f"weight shape {w.shape} != ({m},{m})")
    if not np.all(np.isfinite(w)):
        raise SpectralValidationError("non-finite weights")
    if np.max(np.abs(w - w.T)) > SUM_TOL:
        raise SpectralValidationError("weights are not symmetric")
    if np.max(np.abs(w.sum(axis=1) - 1.0)) > SUM_TOL:
        raise SpectralValidationError("rows do not sum to 1")
    adj = graph.adjacency().astype(bool)
    off = ~np.eye(m, dtype=bool)
    if np.any(w[off & ~adj] != 0.0):
        raise SpectralValidationError("nonzero weight on a non-edge")
    if np.any(w[adj] <= 0.0) or np.any(np.diag(w) <= 0.0):
        raise SpectralValidationError("edge or diagonal weight not strictly positive")
    eigs = _symmetric_eigvals(w)
    lam2 = float(eigs[-2])
    lam_min = float(eigs[0])
    if abs(float(eigs[-1]) - 1.0) > EIG_TOL:
        raise SpectralValidationError(f"largest eigenvalue {eigs[-1]!r} != 1")
    if lam2 >= 1.0 - EIG_TOL:
        raise SpectralValidationError(f"eigenvalue 1 not simple (lam2={lam2!r})")
    if lam_min <= -1.0 + EIG_TOL:
        raise SpectralValidationError(f"smallest eigenvalue {lam_min!r} <= -1")
    lam = max(abs(lam2), abs(lam_min))
    return MixingMatrix(w=w, graph=graph, lam=lam, lam2=lam2, lam_min=lam_min)


def metropolis_hastings(graph: Graph) -> MixingMatrix:
    """Metropolis-Hastings weights: w_ij = 1/(1 + max(deg_i, deg_j)) on edges,
    with the diagonal absorbing the remainder so rows sum to 1 exactly.
    """
    m = graph.m
    deg = graph.degrees()
    w = np.zeros((m, m))
    for i, j in graph.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return mixing_from_weights(w, graph)


def max_degree_weights(graph: Graph) -> MixingMatrix:
    """Maximum-degree weights: 1/(1 + max_degree) on every edge."""
    m = graph.m
    top = int(graph.degrees().max())
    w = np.zeros((m, m))
    for i, j in graph.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + top)
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return mixing_from_weights(w, graph)


def averaging_matrix(m: int) -> MixingMatrix:
    """The uniform matrix P = 11^T/m (complete graph, lam = 0).

    Gossiping with P performs exact global averaging, which collapses
    decentralized algorithms onto their centrally-aggregated counterparts.
    """
    w = np.full((m, m), 1.0 / m)
    return mixing_from_weights(w, build_complete(m))


def contraction_check(mix: MixingMatrix, k_max: int) -> list[tuple[int, float, float]]:
    """Report (k, ||W^k - P||_op, lam^k) for k = 1..k_max.

    Callers assert the operator norm stays below lam^k; equality is attained
    at k = 1 when the extremal eigenvalue is real and simple.
    """
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    m = mix.m
    p = np.full((m, m), 1.0 / m)
    out = []
    wk = np.eye(m)
    for k in range(1, k_max + 1):
        wk = wk @ mix.w
        norm = float(np.linalg.norm(wk - p, ord=2))
        out.append((k, norm, mix.lam**k))
    return out
