"""Finite-sum problems spread over agents, and the two benchmark instances.

Each agent ``i`` holds ``n_i`` components and
``f_i(x) = (1/n_i) sum_j f_ij(x)``, ``f(x) = (1/m) sum_i f_i(x)``.
Subclasses only need vectorized component values and mini-batch gradients.
"""

from __future__ import annotations

import csv
import logging
import warnings

import numpy as np

from .errors import IngestionError, NumericError
from .smoothness import Constant, Power, combine

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12
_TINY_L = 1e-300


class FiniteSumProblem:
    """Base class.  ``n`` is the tuple of per-agent component counts."""

    name = "finite_sum"

    def __init__(self, n, dim):
        self.n = tuple(int(k) for k in n)
        self.m = len(self.n)
        self.dim = int(dim)
        self.f_star = None

    # subclass hooks, ``idx`` is an integer index array
    def component_values(self, i, idx, x) -> np.ndarray:
        raise NotImplementedError

    def batch_gradient(self, i, idx, x) -> np.ndarray:
        """Mean of the component gradients of agent ``i`` over ``idx``."""
        raise NotImplementedError

    def smoothness_model(self, i):
        raise NotImplementedError

    def component_objective(self, i, j, x):
        return float(self.component_values(i, np.array([j]), x)[0])

    def component_gradient(self, i, j, x):
        return self.batch_gradient(i, np.array([j]), x)

    def all_indices(self, i):
        return np.arange(self.n[i])

    def local_objective(self, i, x):
        if self.n[i] == 0:
            return 0.0
        return float(np.mean(self.component_values(i, self.all_indices(i), x)))

    def local_gradient(self, i, x):
        if self.n[i] == 0:
            return np.zeros(self.dim)
        return self.batch_gradient(i, self.all_indices(i), x)

    def objective(self, x):
        return float(np.mean([self.local_objective(i, x) for i in range(self.m)]))

    def local_gradients(self, x):
        """Stacked ``(m, dim)`` local gradients at a common point."""
        return np.stack([self.local_gradient(i, x) for i in range(self.m)])

    def gradient(self, x):
        return self.local_gradients(x).mean(axis=0)

    def value_and_gradient(self, x):
        """``(f(x), grad f(x))``; subclasses may fuse the two passes."""
        return self.objective(x), self.gradient(x)


class QuadraticInverse(FiniteSumProblem):
    """Components ``(b_ij - <a_ij, x>^2)^2``."""

    name = "quadratic_inverse"

    def __init__(self, A, b, x_true=None, noise_std=0.0, conservative=False):
        A = [np.asarray(a, dtype=float) for a in A]
        b = [np.asarray(v, dtype=float).ravel() for v in b]
        if len(A) != len(b):
            raise ValueError("need one measurement vector per agent")
        dim = A[0].shape[1]
        for a, v in zip(A, b):
            if a.ndim != 2 or a.shape[1] != dim or a.shape[0] != v.size:
                raise ValueError("sampling vectors and measurements do not line up")
        super().__init__([a.shape[0] for a in A], dim)
        self.A, self.b = A, b
        self.x_true = None if x_true is None else np.asarray(x_true, dtype=float)
        self.noise_std = float(noise_std)
        self.conservative = conservative
        if self.noise_std == 0.0 and self.x_true is not None:
            self.f_star = 0.0
        # stacked copies for the fused global evaluation
        self._A_all = np.vstack(A)
        self._b_all = np.concatenate(b)
        self._w_all = np.concatenate([np.full(k, 1.0 / (self.m * k)) for k in self.n])

    def value_and_gradient(self, x):
        s = self._A_all @ x
        r = self._b_all - s * s
        wr = self._w_all * r
        return float(wr @ r), self._A_all.T @ (-4.0 * wr * s)

    def objective(self, x):
        return self.value_and_gradient(x)[0]

    def gradient(self, x):
        return self.value_and_gradient(x)[1]

    def component_values(self, i, idx, x):
        s = self.A[i][idx] @ x
        return (self.b[i][idx] - s * s) ** 2

    def batch_gradient(self, i, idx, x):
        a = self.A[i][idx]
        s = a @ x
        w = -4.0 * (self.b[i][idx] - s * s) * s
        return (w @ a) / len(idx)

    def smoothness_model(self, i):
        return qi_smoothness_model(self, i, conservative=self.conservative)


def generate_quadratic_inverse(d, m, n_per_agent, noise_std=0.05, seed=0,
                               conservative=False) -> QuadraticInverse:
    """Gaussian sampling vectors, a unit-norm Gaussian signal and additive
    Gaussian noise with standard deviation ``noise_std``."""
    if d < 1 or n_per_agent < 1 or m < 1:
        raise ValueError("d, m and n_per_agent must be positive")
    rng = np.random.default_rng(seed)
    x_true = rng.standard_normal(d)
    x_true /= np.linalg.norm(x_true)
    A, b = [], []
    for _ in range(m):
        a = rng.standard_normal((n_per_agent, d))
        noise = noise_std * rng.standard_normal(n_per_agent)
        A.append(a)
        b.append((a @ x_true) ** 2 + noise)
    return QuadraticInverse(A, b, x_true, noise_std, conservative)


def qi_component_gradient(instance, i, j, x):
    return instance.component_gradient(i, j, np.asarray(x, dtype=float))


def qi_smoothness_model(instance, i, conservative=False):
    """``||(1/n) sum b a a^T|| + k * max_{x in B} ||x||^2`` with ``k = 5``,
    or ``k = (3/n) sum ||a||^4`` for the conservative variant."""
    a, b = instance.A[i], instance.b[i]
    n = a.shape[0]
    M = (a * b[:, None]).T @ a / n
    base = float(np.linalg.norm(M, 2))
    coeff = 3.0 * float(np.mean(np.sum(a * a, axis=1) ** 2)) if conservative else 5.0
    return combine("linearComb", Constant(max(base, _TINY_L)), Power(0.0, 2.0),
                   alpha=1.0, beta=coeff)


class DimReduction(FiniteSumProblem):
    """Components ``||x_k - U U^T x_k||^2`` with ``U`` of shape ``(d, d')``
    flattened row-major."""

    name = "dim_reduction"

    def __init__(self, parts, d_prime):
        parts = [np.asarray(p, dtype=float).reshape(-1, np.shape(parts[0])[-1]) for p in parts]
        d = parts[0].shape[1]
        if not 1 <= d_prime < d:
            raise ValueError("target dimension must satisfy 1 <= d' < d")
        super().__init__([p.shape[0] for p in parts], d * d_prime)
        self.parts = parts
        self.d, self.d_prime = d, int(d_prime)

    def unflatten(self, x):
        return np.asarray(x, dtype=float).reshape(self.d, self.d_prime)

    def component_values(self, i, idx, x):
        U = self.unflatten(x)
        X = self.parts[i][idx]
        R = X - (X @ U) @ U.T
        return np.sum(R * R, axis=1)

    def batch_gradient(self, i, idx, x):
        U = self.unflatten(x)
        X = self.parts[i][idx]
        Z = X @ U
        R = X - Z @ U.T
        G = -2.0 * (R.T @ Z + X.T @ (R @ U)) / len(idx)
        return G.ravel()

    def smoothness_model(self, i):
        return dr_smoothness_model(self, i)


def build_dim_reduction(records, partition, d_prime) -> DimReduction:
    records = np.asarray(records, dtype=float)
    partition = [int(k) for k in partition]
    if any(k < 0 for k in partition) or sum(partition) != records.shape[0]:
        raise ValueError(
            f"partition sizes sum to {sum(partition)}, expected {records.shape[0]} records")
    if records.ndim != 2 or d_prime >= records.shape[1]:
        raise ValueError("target dimension must be below the record dimension")
    bounds = np.cumsum([0] + partition)
    parts = [records[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]
    return DimReduction(parts, d_prime)


def dr_smoothness_model(instance, i):
    """``S + (S + 2) * max_{U in B} ||U||_F^2`` with ``S = sum_k ||x_k||^2``."""
    S = float(np.sum(instance.parts[i] ** 2))
    return combine("linearComb", Constant(max(S, _TINY_L)), Power(0.0, 2.0),
                   alpha=1.0, beta=S + 2.0)


def synthetic_records(n_records, d=17, rank=3, noise=0.3, seed=0):
    """Standardized low-rank-plus-noise records standing in for tabular data."""
    rng = np.random.default_rng(seed)
    latent = rng.standard_normal((n_records, rank))
    loadings = rng.standard_normal((rank, d))
    X = latent @ loadings + noise * rng.standard_normal((n_records, d))
    return standardize(X)


def standardize(X):
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    sd = np.sqrt(np.maximum(X.var(axis=0), VARIANCE_FLOOR))
    Z = (X - mu) / sd
    Z[:, X.var(axis=0) < VARIANCE_FLOOR] = 0.0
    return Z


def load_csv_dataset(path, feature_columns=None):
    """Read selected numeric columns of a headed CSV and standardize them.

    Rows with a missing or unparsable cell are skipped and counted.
    Returns an ``(N, d)`` array.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path} is empty") from None
        if feature_columns is None:
            cols = list(range(len(header)))
        else:
            cols = []
            for c in feature_columns:
                if isinstance(c, int):
                    cols.append(c)
                elif c in header:
                    cols.append(header.index(c))
                else:
                    raise IngestionError(f"column {c!r} not in {path}")
        rows, skipped = [], 0
        for raw in reader:
            if not raw:
                continue
            try:
                vals = [float(raw[k]) for k in cols]
            except (ValueError, IndexError):
                skipped += 1
                continue
            if not all(np.isfinite(vals)):
                skipped += 1
                continue
            rows.append(vals)
    if skipped:
        warnings.warn(f"skipped {skipped} unparsable rows in {path}", stacklevel=2)
    if not rows:
        raise IngestionError(f"no usable rows in {path}")
    X = standardize(np.array(rows))
    log.info("loaded %d rows with %d features from %s", X.shape[0], X.shape[1], path)
    return X


def finite_difference_gradient(objective, x, h=None):
    """Central-difference gradient, step ``1e-5 * max(1, ||x||)`` by default."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = 1e-5 * max(1.0, float(np.linalg.norm(x)))
    if not h > 0:
        raise ValueError("step must be positive")
    g = np.empty_like(x)
    e = np.zeros_like(x)
    for k in range(x.size):
        e[k] = h
        fp, fm = objective(x + e), objective(x - e)
        e[k] = 0.0
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"objective not finite near coordinate {k}")
        g[k] = (fp - fm) / (2.0 * h)
    return g


DR_DEFAULT_PARTITION = (400, 25, 25, 25, 25, 395)


def problem_from_config(cfg) -> FiniteSumProblem:
    kind = cfg.get("type", "quadratic_inverse")
    conservative = cfg.get("smoothness", "approximate") == "conservative"
    if kind == "quadratic_inverse":
        return generate_quadratic_inverse(
            int(cfg.get("d", 32)), int(cfg.get("m", 8)), int(cfg.get("nPerAgent", 256)),
            float(cfg.get("noiseStd", 0.05)), int(cfg.get("seed", 0)), conservative)
    if kind == "dim_reduction":
        d_prime = int(cfg.get("dPrime", 2))
        if cfg.get("csvPath"):
            records = load_csv_dataset(cfg["csvPath"], cfg.get("featureColumns"))
            partition = cfg.get("partition")
            if partition is None:
                m = int(cfg.get("m", 6))
                partition = [len(records) // m + (k < len(records) % m) for k in range(m)]
        else:
            partition = cfg.get("partition", DR_DEFAULT_PARTITION)
            records = synthetic_records(sum(partition), int(cfg.get("d", 17)),
                                        seed=int(cfg.get("seed", 0)))
        if "seed" in cfg:
            records = np.random.default_rng(int(cfg["seed"])).permutation(records)
        return build_dim_reduction(records, partition, d_prime)
    raise ValueError(f"unknown problem type {kind!r}")
