"""Communication graphs, Metropolis mixing matrices and their spectral constants."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateNetworkError, GenerationError

ER_MAX_ATTEMPTS = 1000
STOCHASTIC_TOL = 1e-10
DEGENERATE_TOL = 1e-9


@dataclass(frozen=True)
class Graph:
    m: int
    edges: frozenset

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("a network needs at least two agents")
        clean = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at agent {i}")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise ValueError(f"edge ({i}, {j}) out of range for m={self.m}")
            clean.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(clean))

    def sorted_edges(self):
        return sorted(self.edges)

    def degrees(self):
        deg = np.zeros(self.m, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self):
        A = np.zeros((self.m, self.m))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A

    def is_connected(self):
        if not self.edges:
            return False
        rows, cols = zip(*self.edges)
        A = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.m, self.m))
        ncomp, _ = connected_components(A, directed=False)
        return ncomp == 1


@dataclass(frozen=True)
class MixingMatrix:
    W: np.ndarray
    eta: float
    c: float
    graph: Graph | None = None

    @property
    def m(self):
        return self.W.shape[0]

    def to_csv(self, path):
        np.savetxt(path, self.W, delimiter=",", fmt="%.17g")


def ring(m):
    return Graph(m, frozenset((i, (i + 1) % m) for i in range(m)))


def grid(rows, cols, m=None):
    if m is not None and rows * cols != m:
        raise ValueError(f"grid {rows}x{cols} does not have m={m} agents")
    edges = set()
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            if c + 1 < cols:
                edges.add((k, k + 1))
            if r + 1 < rows:
                edges.add((k, k + cols))
    return Graph(rows * cols, frozenset(edges))


def erdos_renyi(m, p, seed=0):
    """G(m, p) resampled with ``seed, seed+1, ...`` until connected."""
    if not 0.0 < p <= 1.0:
        raise ValueError("edge probability must lie in (0, 1]")
    iu, ju = np.triu_indices(m, k=1)
    for attempt in range(ER_MAX_ATTEMPTS):
        rng = np.random.default_rng(seed + attempt)
        keep = rng.random(iu.size) < p
        g = Graph(m, frozenset(zip(iu[keep].tolist(), ju[keep].tolist())))
        if g.is_connected():
            return g
    raise GenerationError(
        f"no connected G({m}, {p}) found in {ER_MAX_ATTEMPTS} attempts from seed {seed}")


def build_topology(kind, m, rows=None, cols=None, p=None, seed=0):
    if m < 2:
        raise ValueError("a network needs at least two agents")
    if kind == "ring":
        if m == 2:
            return Graph(2, frozenset({(0, 1)}))
        return ring(m)
    if kind == "grid":
        if rows is None or cols is None:
            raise ValueError("grid topology needs rows and cols")
        return grid(rows, cols, m)
    if kind in ("erdos_renyi", "er"):
        if p is None:
            raise ValueError("erdos_renyi topology needs p")
        return erdos_renyi(m, p, seed)
    if kind == "complete":
        iu, ju = np.triu_indices(m, k=1)
        return Graph(m, frozenset(zip(iu.tolist(), ju.tolist())))
    raise ValueError(f"unknown topology kind {kind!r}")


def spectral_constants(W):
    """``eta = ||W - 11^T/m||_2`` and ``c = 2 sqrt(2m) / (1 - eta)``."""
    W = np.asarray(W, dtype=float)
    m = W.shape[0]
    if W.shape != (m, m):
        raise ValueError("mixing matrix must be square")
    ones = np.ones(m)
    if (np.max(np.abs(W @ ones - 1.0)) > STOCHASTIC_TOL
            or np.max(np.abs(ones @ W - 1.0)) > STOCHASTIC_TOL):
        raise ValueError("mixing matrix is not doubly stochastic")
    dev = W - np.full((m, m), 1.0 / m)
    eta = float(np.linalg.svd(dev, compute_uv=False)[0])
    if eta >= 1.0 - DEGENERATE_TOL:
        raise DegenerateNetworkError(f"eta = {eta:.12g} is not below 1")
    c = 2.0 * math.sqrt(2.0 * m) / (1.0 - eta)
    return eta, c


def metropolis_weights(graph: Graph) -> MixingMatrix:
    if not graph.is_connected():
        raise ValueError("graph is disconnected; mixing would not contract")
    m = graph.m
    deg = graph.degrees()
    W = np.zeros((m, m))
    for i, j in graph.edges:
        W[i, j] = W[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    W[np.diag_indices(m)] = 1.0 - W.sum(axis=1)
    eta, c = spectral_constants(W)
    return MixingMatrix(W, eta, c, graph)


def topology_from_config(cfg, m=None) -> MixingMatrix:
    """Mixing matrix from a ``{kind, m, rows?, cols?, p?, seed?}`` fragment."""
    m = cfg.get("m", m)
    if m is None and cfg.get("kind") == "grid":
        m = int(cfg["rows"]) * int(cfg["cols"])
    if m is None:
        raise ValueError("topology needs an agent count m")
    m = int(m)
    graph = build_topology(cfg["kind"], m, rows=cfg.get("rows"), cols=cfg.get("cols"),
                           p=cfg.get("p"), seed=int(cfg.get("seed", 0)))
    return metropolis_weights(graph)


def topology_label(cfg):
    kind = cfg["kind"]
    if kind == "grid":
        return f"grid{cfg['rows']}x{cfg['cols']}"
    if kind in ("erdos_renyi", "er"):
        return f"er{cfg['p']}"
    return kind
