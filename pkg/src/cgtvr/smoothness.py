"""Local smoothness constants as positive set functions over norm balls.

A smoothness model maps a ball ``B(c, r)`` to an upper bound on the local
smoothness constant of a function over that ball.  The growth families are
pointwise maxima of radial functions, so on a ball they reduce to closed form
through ``max_{x in B(c, r)} ||x|| = ||c|| + r``.  Composite models combine the
values of their children on the same ball.

Every public evaluation is clamped below at 1.  Children of a composite are
combined unclamped and the clamp is applied to the composite's result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, NumericError

TINY = np.finfo(float).tiny

R0_DEFAULT = 1.0
R0_RTOL = 1e-6
R0_MAX_ITER = 60


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float = 0.0

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float)).ravel()
        if not np.all(np.isfinite(center)):
            raise ValueError("ball center must be finite")
        radius = float(self.radius)
        if not radius >= 0.0:
            raise ValueError(f"ball radius must be nonnegative, got {self.radius}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", radius)

    @property
    def max_norm(self) -> float:
        """Largest norm attained on the ball."""
        return float(np.linalg.norm(self.center)) + self.radius

    def inflate(self, by: float) -> "Ball":
        return Ball(self.center, self.radius + by)


def as_ball(center, radius=0.0) -> Ball:
    return center if isinstance(center, Ball) else Ball(center, radius)


class SmoothnessModel:
    """Base class.  Subclasses implement ``raw``, the unclamped set function."""

    variant = "abstract"

    def raw(self, ball: Ball) -> float:
        raise NotImplementedError

    def __call__(self, ball: Ball) -> float:
        return max(1.0, self.raw(ball))

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(SmoothnessModel):
    L: float
    variant = "constant"

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("constant model needs L > 0")

    def raw(self, ball):
        return float(self.L)

    def to_config(self):
        return {"variant": self.variant, "L": self.L}


@dataclass(frozen=True)
class Logarithmic(SmoothnessModel):
    """``F(B) = max_{x in B} log(c + ||x||)`` with ``c > 1``."""

    c: float
    variant = "logarithmic"

    def __post_init__(self):
        if not self.c > 1:
            raise ValueError("logarithmic model needs c > 1")

    def raw(self, ball):
        return math.log(self.c + ball.max_norm)

    def to_config(self):
        return {"variant": self.variant, "c": self.c}


@dataclass(frozen=True)
class Power(SmoothnessModel):
    """``F(B) = max_{x in B} L + ||x||**nu``.

    ``L = 0`` is accepted so the model can serve as the growth term inside a
    linear combination.
    """

    L: float
    nu: float
    variant = "power"

    def __post_init__(self):
        if not self.L >= 0 or not self.nu > 0:
            raise ValueError("power model needs L >= 0 and nu > 0")

    def raw(self, ball):
        return self.L + ball.max_norm ** self.nu

    def to_config(self):
        return {"variant": self.variant, "L": self.L, "nu": self.nu}


@dataclass(frozen=True)
class Exponential(SmoothnessModel):
    """``F(B) = max_{x in B} exp(||x|| / r)``."""

    r: float
    variant = "exponential"

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("exponential model needs r > 0")

    def raw(self, ball):
        return math.exp(ball.max_norm / self.r)

    def to_config(self):
        return {"variant": self.variant, "r": self.r}


def gen_smooth_constants(L0, L1, alpha, grad_norm_at_ref):
    """Constants ``(A0, A1)`` of the Hessian growth bound for
    alpha-generalized smooth functions,
    ``||hess f(x)|| <= A0 + A1 * ||x - ref||**(alpha / (1 - alpha))``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not (L0 > 0 and L1 > 0):
        raise ValueError("L0 and L1 must be positive")
    if grad_norm_at_ref < 0:
        raise ValueError("gradient norm must be nonnegative")
    p = alpha / (1.0 - alpha)
    q = 2.0 ** (alpha * alpha / (1.0 - alpha))
    A0 = L0 + 2.0 ** p * L1 * grad_norm_at_ref + q * L0 * L1
    A1 = q * L0 * L1 + q * L1 * ((1.0 - alpha) * L1) ** p
    return A0, A1


@dataclass(frozen=True)
class GenSmooth(SmoothnessModel):
    """``F(B) = A0 + A1 * max_{x in B} ||x - ref||**(alpha/(1-alpha))``."""

    L0: float
    L1: float
    alpha: float
    ref_grad_norm: float = 0.0
    ref: np.ndarray | None = None
    variant = "genSmooth"

    def __post_init__(self):
        gen_smooth_constants(self.L0, self.L1, self.alpha, self.ref_grad_norm)
        if self.ref is not None:
            object.__setattr__(self, "ref", np.asarray(self.ref, dtype=float).ravel())

    @property
    def constants(self):
        return gen_smooth_constants(self.L0, self.L1, self.alpha, self.ref_grad_norm)

    def raw(self, ball):
        A0, A1 = self.constants
        center = ball.center if self.ref is None else ball.center - self.ref
        reach = float(np.linalg.norm(center)) + ball.radius
        return A0 + A1 * reach ** (self.alpha / (1.0 - self.alpha))

    def to_config(self):
        cfg = {"variant": self.variant, "L0": self.L0, "L1": self.L1,
               "alpha": self.alpha, "refGradNorm": self.ref_grad_norm}
        if self.ref is not None:
            cfg["ref"] = self.ref.tolist()
        return cfg


@dataclass(frozen=True)
class Custom(SmoothnessModel):
    evaluator: Callable[[Ball], float]
    variant = "custom"

    def raw(self, ball):
        return float(self.evaluator(ball))

    def to_config(self):
        raise ValueError("custom smoothness models are not serializable")


COMPOSITE_OPS = ("affine", "linearComb", "max", "min", "product", "quotient")


@dataclass(frozen=True)
class Composite(SmoothnessModel):
    op: str
    children: tuple
    alpha: float = 1.0
    beta: float = 1.0
    amap: Callable[[np.ndarray], np.ndarray] | None = None
    lipschitz: float | None = None
    # kept only so affine maps built from a matrix can be serialized
    matrix: np.ndarray | None = field(default=None, repr=False)
    offset: np.ndarray | None = field(default=None, repr=False)
    variant = "composite"

    def raw(self, ball):
        op = self.op
        if op == "affine":
            child = self.children[0]
            mapped = Ball(self.amap(ball.center), self.lipschitz * ball.radius)
            return child.raw(mapped)
        vals = [child.raw(ball) for child in self.children]
        if op == "linearComb":
            return self.alpha * vals[0] + self.beta * vals[1]
        if op == "max":
            return max(vals)
        if op == "min":
            return min(vals)
        if op == "product":
            return vals[0] * vals[1]
        if op == "quotient":
            if abs(vals[1]) < TINY:
                raise DomainError("quotient denominator vanished")
            return vals[0] / vals[1]
        raise ValueError(f"unknown composite op {op!r}")

    def to_config(self):
        cfg = {"variant": self.variant, "op": self.op,
               "children": [c.to_config() for c in self.children]}
        if self.op == "linearComb":
            cfg.update(alpha=self.alpha, beta=self.beta)
        if self.op == "affine":
            if self.matrix is None:
                raise ValueError("affine maps given as callables are not serializable")
            cfg.update(matrix=self.matrix.tolist(), lipschitz=self.lipschitz)
            if self.offset is not None:
                cfg["offset"] = self.offset.tolist()
        return cfg


def combine(op, *children, alpha=1.0, beta=1.0, amap=None, lipschitz=None):
    """Build a composite model.

    ``affine`` takes one child plus either a matrix (``amap`` as an array, with
    an optional ``(matrix, offset)`` tuple) or a callable with an explicit
    Lipschitz constant.  The image of ``B(c, r)`` is over-approximated by
    ``B(A(c), L r)``.
    """
    if op not in COMPOSITE_OPS:
        raise ValueError(f"unknown composite op {op!r}")
    if op == "affine":
        if len(children) != 1:
            raise ValueError("affine composition takes exactly one child")
        matrix = offset = None
        if callable(amap):
            fn = amap
        else:
            if isinstance(amap, tuple):
                matrix, offset = amap
                offset = np.asarray(offset, dtype=float).ravel()
            else:
                matrix = amap
            matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
            if lipschitz is None:
                lipschitz = float(np.linalg.norm(matrix, 2))
            fn = _affine_fn(matrix, offset)
        if lipschitz is None or not lipschitz > 0:
            raise ValueError("affine composition needs a Lipschitz constant L > 0")
        return Composite("affine", tuple(children), amap=fn, lipschitz=float(lipschitz),
                         matrix=matrix, offset=offset)
    if op == "linearComb":
        if not (alpha > 0 and beta > 0):
            raise ValueError("linear combination coefficients must be positive")
    if len(children) != 2:
        raise ValueError(f"{op} takes exactly two children")
    return Composite(op, tuple(children), alpha=float(alpha), beta=float(beta))


def _affine_fn(matrix, offset):
    if offset is None:
        return lambda c: matrix @ c
    return lambda c: matrix @ c + offset


def from_config(cfg) -> SmoothnessModel:
    """Inverse of ``SmoothnessModel.to_config``."""
    variant = cfg["variant"]
    if variant == "constant":
        return Constant(cfg["L"])
    if variant == "logarithmic":
        return Logarithmic(cfg["c"])
    if variant == "power":
        return Power(cfg["L"], cfg["nu"])
    if variant == "exponential":
        return Exponential(cfg["r"])
    if variant == "genSmooth":
        return GenSmooth(cfg["L0"], cfg["L1"], cfg["alpha"], cfg.get("refGradNorm", 0.0),
                         cfg.get("ref"))
    if variant == "composite":
        children = [from_config(c) for c in cfg["children"]]
        op = cfg["op"]
        if op == "affine":
            amap = np.asarray(cfg["matrix"], dtype=float)
            if "offset" in cfg:
                amap = (amap, cfg["offset"])
            return combine("affine", *children, amap=amap, lipschitz=cfg.get("lipschitz"))
        return combine(op, *children, alpha=cfg.get("alpha", 1.0), beta=cfg.get("beta", 1.0))
    raise ValueError(f"unknown smoothness variant {variant!r}")


def eval_local_L(model: SmoothnessModel, ball: Ball) -> float:
    return model(ball)


def relative_difference(model, ball_x, ball_y) -> float:
    """``max{F(X)/F(Y), F(Y)/F(X)} - 1`` for the clamped values."""
    fx, fy = model(ball_x), model(ball_y)
    return max(fx / fy, fy / fx) - 1.0


def hausdorff_ball(ball_x: Ball, ball_y: Ball) -> float:
    """Exact Hausdorff distance between two Euclidean balls."""
    if ball_x.center.shape != ball_y.center.shape:
        raise ValueError("balls live in different dimensions")
    gap = float(np.linalg.norm(ball_x.center - ball_y.center))
    return gap + abs(ball_x.radius - ball_y.radius)


@dataclass(frozen=True)
class RucParams:
    r0: float
    gamma: float
    eta: float

    @property
    def epsilon(self):
        return self.gamma - 1.0


def gamma_from_eta(eta):
    """Return ``(gamma, epsilon)`` with ``epsilon = min{1, (1-eta)/(2 eta)}``.

    ``eta = 0`` (a complete mixing step) is accepted as the limit, giving 2.
    """
    if not 0.0 <= eta < 1.0:
        raise ValueError(f"eta must lie in [0, 1), got {eta}")
    eps = 1.0 if eta == 0.0 else min(1.0, (1.0 - eta) / (2.0 * eta))
    return 1.0 + eps, eps


def ruc_params(eta, r0) -> RucParams:
    gamma, _ = gamma_from_eta(eta)
    return RucParams(r0=float(r0), gamma=gamma, eta=float(eta))


def ruc_delta_power(epsilon, nu, anchor_norm):
    """Hausdorff radius that keeps the relative difference of a power-growth
    model below ``epsilon`` for sets whose points have norm >= ``anchor_norm``.
    """
    if not anchor_norm >= 1.0:
        raise ValueError("anchor norm must be >= 1")
    if not (epsilon > 0 and nu > 0):
        raise ValueError("epsilon and nu must be positive")
    return anchor_norm * ((1.0 + epsilon) ** (1.0 / nu) - 1.0)


def estimate_r0(model, ball, gamma, r0_default=R0_DEFAULT):
    """Radius ``r`` such that inflating ``ball`` by ``r`` changes the model by a
    factor of at most ``gamma``.

    Power models use the closed form anchored at ``max{||center||, 1}``;
    constant models have no finite limit and return ``r0_default``; everything
    else is bisected.
    """
    if not gamma > 1.0:
        raise ValueError("gamma must exceed 1")
    eps = gamma - 1.0
    if isinstance(model, Constant):
        return float(r0_default)
    if isinstance(model, Power):
        anchor = max(float(np.linalg.norm(ball.center)), 1.0)
        return ruc_delta_power(eps, model.nu, anchor)

    def excess(r):
        return relative_difference(model, ball, ball.inflate(r)) - eps

    lo = 0.0
    hi = max(ball.radius, float(np.linalg.norm(ball.center)), 1.0)
    for _ in range(R0_MAX_ITER):
        if excess(hi) > 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NumericError(
            f"could not bracket r0: relative difference stayed <= {eps:g} "
            f"up to radius {hi:g} around center norm {np.linalg.norm(ball.center):g}")
    for _ in range(R0_MAX_ITER):
        if hi - lo <= R0_RTOL * hi:
            break
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            hi = mid
        else:
            lo = mid
    return lo


def max_model(models: Sequence[SmoothnessModel]):
    """Pointwise maximum of several models, used for the network-wide constant."""
    out = models[0]
    for m in models[1:]:
        out = combine("max", out, m)
    return out
