"""Clipped gradient tracking with staggered or synchronous variance reduction,
three gradient-tracking baselines, and the shared run loop.

Each iteration ``t`` runs in two phases.  Phase A refreshes the local
estimators ``g^t`` and the trackers ``y^t``; the metrics row for ``t`` is
recorded after it.  Phase B mixes and moves the iterates to ``x^{t+1}`` and,
for the staggered scheme, applies the epoch restart test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .clipping import clip, gradient_mapping
from .errors import ConfigurationError, DivergenceError
from .smoothness import Ball, estimate_r0, gamma_from_eta

ALGORITHMS = ("cgtvr_stag", "cgtvr_sync", "gt_sarah", "d_get", "gt_vr")
CLIPPED = ("cgtvr_stag", "cgtvr_sync")
BATCH_CAP = 10_000_000
FEAS_RTOL = 1e-12


def sample_batch(rng, n_components, batch_size):
    """``batch_size`` indices drawn uniformly with replacement."""
    batch_size = int(batch_size)
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    if batch_size > BATCH_CAP:
        raise ValueError(f"batch size {batch_size} exceeds the cap of {BATCH_CAP}")
    if n_components < 1:
        raise ValueError("cannot sample from an empty component set")
    return rng.integers(0, n_components, size=batch_size)


@dataclass(frozen=True)
class R0Rule:
    """How the smoothness-ball radius is chosen at an epoch start.

    ``fixed`` uses ``value``; ``proportional`` uses
    ``max(coeff * ||x_c||, floor)``; ``ruc`` solves for the radius at which the
    agent's model changes by the factor gamma, floored likewise.
    """

    kind: str = "proportional"
    value: float = 1.0
    coeff: float = 0.1
    floor: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("fixed", "proportional", "ruc"):
            raise ConfigurationError(f"unknown r0 rule {self.kind!r}", key="r0Rule.kind")
        if self.kind == "fixed" and not self.value > 0:
            raise ConfigurationError("fixed r0 must be positive", key="r0Rule.value")
        if self.kind == "proportional" and not (self.coeff > 0 and self.floor > 0):
            raise ConfigurationError("proportional r0 needs coeff > 0 and floor > 0",
                                     key="r0Rule")

    def radius(self, x_c, model=None, gamma=None):
        if self.kind == "fixed":
            return float(self.value)
        if self.kind == "proportional":
            return max(self.coeff * float(np.linalg.norm(x_c)), self.floor)
        return max(estimate_r0(model, Ball(x_c, 0.0), gamma), self.floor)


@dataclass
class RunConfig:
    algorithm: str = "cgtvr_stag"
    theta: float = 10.0
    stepsize: float = 1e-2
    r0_rule: R0Rule = field(default_factory=R0Rule)
    # explicit clipping threshold and epoch radius; None derives them from r0
    delta: float | None = None
    d_radius: float | None = None
    tau: object = None
    batch: object = None
    restart_prob: object = None
    max_iterations: int = 1000
    grad_map_threshold: float | None = None
    data_pass_budget: float | None = None
    seed: int = 0
    init: str = "unit"
    x0: np.ndarray | None = None
    track_potential: bool = False
    record_history: bool = False
    f_star: float | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}", key="algorithm")
        if self.algorithm in CLIPPED and not self.theta > 0:
            raise ConfigurationError("theta must be positive", key="theta")
        if self.algorithm not in CLIPPED and not self.stepsize > 0:
            raise ConfigurationError("stepsize must be positive", key="stepsize")
        if self.delta is not None and not self.delta > 0:
            raise ConfigurationError("delta must be positive", key="delta")
        if self.d_radius is not None and not self.d_radius > 0:
            raise ConfigurationError("epoch radius must be positive", key="dRadius")
        if self.max_iterations < 0:
            raise ConfigurationError("maxIterations must be nonnegative", key="maxIterations")
        if self.init not in ("unit", "gaussian"):
            raise ConfigurationError(f"unknown init {self.init!r}", key="init")

    @property
    def theory_theta(self):
        """The descent analysis needs theta > 2."""
        return self.theta > 2


def _per_agent(value, m, default, name):
    if value is None:
        value = default
    arr = np.broadcast_to(np.asarray(value), (m,)).copy()
    return arr


def default_batch(n):
    return max(1, int(round(math.sqrt(n))))


def resolve_schedule(config, n):
    """Per-agent ``(tau, batch, p)`` with the experimental defaults:
    ``B = tau = sqrt(n)``, and for the loopless baseline ``B = n^(2/3)``,
    ``p = n^(-1/3)``."""
    n = np.asarray(n)
    m = n.size
    if config.algorithm == "gt_vr":
        batch = _per_agent(config.batch, m,
                           [max(1, int(round(k ** (2.0 / 3.0)))) for k in n], "batch")
        p = _per_agent(config.restart_prob, m, [k ** (-1.0 / 3.0) for k in n], "p")
        p = p.astype(float)
        if np.any(p <= 0) or np.any(p > 1):
            raise ConfigurationError("restart probability must lie in (0, 1]", key="restartProb")
        tau = np.ones(m, dtype=int)
    else:
        batch = _per_agent(config.batch, m, [default_batch(k) for k in n], "batch")
        tau = _per_agent(config.tau, m, [default_batch(k) for k in n], "tau").astype(int)
        p = np.zeros(m)
    batch = batch.astype(int)
    if np.any(batch < 1):
        raise ConfigurationError("batch sizes must be positive", key="batch")
    if np.any(tau < 1):
        raise ConfigurationError("epoch lengths must be positive", key="tau")
    if config.algorithm == "cgtvr_sync" and np.unique(tau).size > 1:
        raise ConfigurationError("the synchronous scheme needs one common tau", key="tau")
    return tau, batch, p


@dataclass
class RunState:
    """Stacked per-agent state.  Row ``i`` of each matrix belongs to agent ``i``."""

    t: int
    X: np.ndarray
    Y: np.ndarray
    G: np.ndarray
    X_prev: np.ndarray
    W: np.ndarray
    eta: float
    c: float
    gamma: float
    models: list
    tau: np.ndarray
    batch: np.ndarray
    restart_prob: np.ndarray
    rngs: list
    misc_rng: np.random.Generator
    flag: np.ndarray
    count: np.ndarray
    L: np.ndarray
    beta: np.ndarray
    r0: np.ndarray
    delta: np.ndarray
    d_radius: np.ndarray
    checkpoint: np.ndarray
    epoch_start: np.ndarray
    restarts: np.ndarray
    refreshes: np.ndarray
    samples: np.ndarray
    fresh: np.ndarray  # agents that took a full gradient in the current phase A

    @property
    def m(self):
        return self.X.shape[0]

    @property
    def x_bar(self):
        return self.X.mean(axis=0)

    def agent(self, i):
        """Snapshot of one agent as a plain dict."""
        return dict(x=self.X[i].copy(), y=self.Y[i].copy(), g=self.G[i].copy(),
                    beta=float(self.beta[i]), checkpoint=self.checkpoint[i].copy(),
                    flag=bool(self.flag[i]), count=int(self.count[i]),
                    L=float(self.L[i]), restarts=int(self.restarts[i]),
                    epoch_start=int(self.epoch_start[i]))


def initial_point(problem, config, rng):
    if config.x0 is not None:
        x0 = np.asarray(config.x0, dtype=float).ravel()
        if x0.size != problem.dim:
            raise ConfigurationError(f"x0 has length {x0.size}, expected {problem.dim}", key="x0")
        return x0.copy()
    x0 = rng.standard_normal(problem.dim)
    if config.init == "unit":
        x0 /= np.linalg.norm(x0)
    return x0


def _derive_radii(config, r0, c, tau):
    """Clipping threshold and epoch radius implied by ``r0``."""
    if config.algorithm == "cgtvr_sync":
        delta = config.delta if config.delta is not None else r0 / (c + tau)
        return delta, np.inf
    delta = config.delta if config.delta is not None else r0 / (3.0 * (c + 1.0))
    d = config.d_radius if config.d_radius is not None else 2.0 * r0 / 3.0
    return delta, d


def check_feasibility(config, r0, delta, d, c, tau):
    """Raise when the radius inequalities needed for the smoothness-ratio
    guarantee do not hold."""
    if config.algorithm == "cgtvr_stag":
        lhs = (c + 1.0) * delta + d
        if lhs > r0 * (1.0 + FEAS_RTOL):
            raise ConfigurationError(
                f"infeasible radii: (c+1)*delta + d = {lhs:.6g} exceeds r0 = {r0:.6g}",
                key="delta")
    elif config.algorithm == "cgtvr_sync":
        bound = r0 / (c + tau)
        if delta > bound * (1.0 + FEAS_RTOL):
            raise ConfigurationError(
                f"infeasible radii: delta = {delta:.6g} exceeds r0/(c+tau) = {bound:.6g}",
                key="delta")


def init_run(problem, mixing, config) -> RunState:
    m, dim = problem.m, problem.dim
    if mixing.W.shape != (m, m):
        raise ConfigurationError(f"mixing matrix is {mixing.W.shape}, expected {m} agents",
                                 key="topology")
    streams = np.random.SeedSequence(config.seed).spawn(m + 2)
    x0 = initial_point(problem, config, np.random.default_rng(streams[0]))
    tau, batch, p = resolve_schedule(config, problem.n)
    gamma, _ = gamma_from_eta(mixing.eta)
    models = [problem.smoothness_model(i) for i in range(m)]
    state = RunState(
        t=0, X=np.tile(x0, (m, 1)), Y=np.zeros((m, dim)), G=np.zeros((m, dim)),
        X_prev=np.tile(x0, (m, 1)), W=np.asarray(mixing.W, dtype=float),
        eta=float(mixing.eta), c=float(mixing.c), gamma=gamma, models=models,
        tau=tau, batch=batch, restart_prob=p,
        rngs=[np.random.default_rng(s) for s in streams[2:]],
        misc_rng=np.random.default_rng(streams[1]),
        flag=np.ones(m, dtype=bool), count=np.zeros(m, dtype=int),
        L=np.ones(m), beta=np.ones(m), r0=np.zeros(m), delta=np.zeros(m),
        d_radius=np.zeros(m), checkpoint=np.tile(x0, (m, 1)),
        epoch_start=np.zeros(m, dtype=int), restarts=np.zeros(m, dtype=int),
        refreshes=np.zeros(m, dtype=int), samples=np.zeros(m, dtype=np.int64),
        fresh=np.zeros(m, dtype=bool))
    if config.algorithm in CLIPPED:
        # fail early if the radii are infeasible at the starting point
        for i in range(m):
            r0 = _r0_for(state, config, i, x0)
            delta, d = _derive_radii(config, r0, state.c, tau[i])
            check_feasibility(config, r0, delta, d, state.c, tau[i])
    return state


def _r0_for(state, config, i, x):
    return config.r0_rule.radius(x, state.models[i], state.gamma)


def _sarah_update(state, problem, i):
    idx = sample_batch(state.rngs[i], problem.n[i], state.batch[i])
    diff = problem.batch_gradient(i, idx, state.X[i]) - problem.batch_gradient(i, idx, state.X_prev[i])
    state.samples[i] += 2 * state.batch[i]
    return diff


def _full_gradient(state, problem, i):
    state.samples[i] += problem.n[i]
    return problem.local_gradient(i, state.X[i])


def _phase_a(state, problem, config):
    """Refresh estimators and trackers for iteration ``t``."""
    alg = config.algorithm
    m = state.m
    G_old = state.G.copy()
    G_new = np.empty_like(G_old)
    state.fresh[:] = False
    if alg == "cgtvr_sync":
        refresh_all = state.t % int(state.tau[0]) == 0
        state.flag[:] = refresh_all
    elif alg in ("gt_sarah", "d_get"):
        state.flag[:] = state.t % state.tau == 0
    elif alg == "gt_vr":
        if state.t == 0:
            state.flag[:] = True
        else:
            coins = np.array([state.rngs[i].random() for i in range(m)])
            state.flag[:] = coins < state.restart_prob
            state.restarts += state.flag
    if alg == "d_get":
        mixed = state.W @ G_old
    for i in range(m):
        if state.flag[i]:
            G_new[i] = _full_gradient(state, problem, i)
            state.fresh[i] = True
            state.checkpoint[i] = state.X[i]
            state.epoch_start[i] = state.t
            state.count[i] = 0
            if alg in CLIPPED:
                r0 = _r0_for(state, config, i, state.X[i])
                delta, d = _derive_radii(config, r0, state.c, state.tau[i])
                check_feasibility(config, r0, delta, d, state.c, state.tau[i])
                state.r0[i], state.delta[i], state.d_radius[i] = r0, delta, d
                state.L[i] = state.models[i](Ball(state.X[i], r0))
                state.beta[i] = config.theta * state.L[i]
            state.flag[i] = False
        else:
            base = mixed[i] if alg == "d_get" else G_old[i]
            G_new[i] = base + _sarah_update(state, problem, i)
    if alg == "cgtvr_sync" and state.fresh.all():
        state.beta[:] = config.theta * state.L.max()
        state.delta[:] = state.delta.min()
    state.Y = state.W @ state.Y + G_new - G_old
    state.G = G_new
    if not (np.all(np.isfinite(state.G)) and np.all(np.isfinite(state.Y))):
        raise DivergenceError(f"non-finite estimator or tracker at t={state.t}", t=state.t)


def _phase_b(state, problem, config):
    """Mix, move to ``x^{t+1}`` and run the epoch restart test."""
    alg = config.algorithm
    mixed = state.W @ state.X
    if alg in CLIPPED:
        step = np.stack([clip(state.Y[i], state.beta[i], state.delta[i])
                         for i in range(state.m)])
    else:
        step = config.stepsize * state.Y
    X_new = mixed - step
    if not np.all(np.isfinite(X_new)):
        raise DivergenceError(f"non-finite iterate at t={state.t + 1}", t=state.t + 1)
    state.X_prev = state.X
    state.X = X_new
    if alg == "cgtvr_stag":
        for i in range(state.m):
            if np.linalg.norm(X_new[i] - state.checkpoint[i]) >= state.d_radius[i]:
                state.flag[i] = True
                state.restarts[i] += 1
            elif state.count[i] == state.tau[i] - 1:
                state.flag[i] = True
                state.refreshes[i] += 1
            else:
                state.count[i] += 1
    elif alg == "cgtvr_sync":
        state.count += 1
    state.t += 1


def step_stag(state, problem, config, on_phase=None):
    """One iteration of the staggered scheme; ``on_phase`` sees the state
    between the estimator refresh and the move."""
    _phase_a(state, problem, config)
    if on_phase is not None:
        on_phase(state)
    _phase_b(state, problem, config)
    return state


def step_sync(state, problem, config, on_phase=None):
    return step_stag(state, problem, config, on_phase)


def step_baseline(kind, state, problem, config, on_phase=None):
    if kind != config.algorithm:
        config = replace(config, algorithm=kind)
    return step_stag(state, problem, config, on_phase)


STEPPERS = {
    "cgtvr_stag": step_stag,
    "cgtvr_sync": step_sync,
    "gt_sarah": lambda s, p, c, cb=None: step_baseline("gt_sarah", s, p, c, cb),
    "d_get": lambda s, p, c, cb=None: step_baseline("d_get", s, p, c, cb),
    "gt_vr": lambda s, p, c, cb=None: step_baseline("gt_vr", s, p, c, cb),
}


@dataclass
class MetricsRow:
    t: int
    data_pass: float
    grad_norm_sq: float
    grad_map_sq: float
    objective: float
    consensus_error: float
    L_min: float | None
    restarts_total: int
    potential: float | None
    restarts: tuple = ()
    beta_min: float | None = None
    delta_min: float | None = None

    def is_finite(self):
        vals = [self.data_pass, self.grad_norm_sq, self.grad_map_sq, self.objective,
                self.consensus_error]
        return all(math.isfinite(v) for v in vals)


@dataclass
class History:
    """Per-iteration snapshots used by the runtime invariant checks."""

    X: list = field(default_factory=list)
    Y: list = field(default_factory=list)
    G: list = field(default_factory=list)
    L: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    delta: list = field(default_factory=list)
    d_radius: list = field(default_factory=list)
    r0: list = field(default_factory=list)
    checkpoint: list = field(default_factory=list)
    epoch_start: list = field(default_factory=list)
    fresh: list = field(default_factory=list)

    def arrays(self):
        return {k: np.asarray(v) for k, v in self.__dict__.items()}


@dataclass
class RunResult:
    algorithm: str
    rows: list
    state: RunState
    config: RunConfig
    history: History | None = None
    t_out: int | None = None
    diverged: bool = False
    error: str | None = None

    @property
    def final(self):
        return self.rows[-1]

    def column(self, name):
        return np.array([getattr(r, name) if getattr(r, name) is not None else np.nan
                         for r in self.rows], dtype=float)

    def min_grad_map_sq(self):
        return float(np.min(self.column("grad_map_sq")))

    def passes_to(self, threshold, metric="grad_norm_sq"):
        """Data passes at the first row where ``metric <= threshold``, else inf."""
        vals = self.column(metric)
        hit = np.nonzero(vals <= threshold)[0]
        return float(self.rows[hit[0]].data_pass) if hit.size else math.inf


def metrics_row(state, problem, config, potential_params=None):
    x_bar = state.x_bar
    fval, grad = problem.value_and_gradient(x_bar)
    gsq = float(grad @ grad)
    dev = state.X - x_bar
    cons = math.sqrt(float(np.sum(dev * dev)) / state.m)
    L_min = potential = beta_min = delta_min = None
    gmap = gsq
    if config.algorithm in CLIPPED:
        L_min = float(state.L.min())
        beta_min, delta_min = config.theta * L_min, float(state.delta.min())
        G = gradient_mapping(grad, beta_min, delta_min)
        gmap = float(G @ G)
        if potential_params is not None:
            ydev = state.Y - state.Y.mean(axis=0)
            potential = (fval + potential_params.alpha1 * L_min * float(np.sum(dev * dev))
                         + potential_params.alpha2 * float(np.sum(ydev * ydev)) / L_min)
    return MetricsRow(
        t=state.t, data_pass=float(state.samples.sum()) / float(sum(problem.n)),
        grad_norm_sq=gsq, grad_map_sq=gmap, objective=fval, consensus_error=cons,
        L_min=L_min, restarts_total=int(state.restarts.sum()), potential=potential,
        restarts=tuple(int(k) for k in state.restarts), beta_min=beta_min, delta_min=delta_min)


def _snapshot(history, state, config):
    history.X.append(state.X.copy())
    history.Y.append(state.Y.copy())
    history.G.append(state.G.copy())
    history.L.append(state.L.copy())
    history.beta.append(state.beta.copy())
    history.delta.append(state.delta.copy())
    history.d_radius.append(state.d_radius.copy())
    history.r0.append(state.r0.copy())
    history.checkpoint.append(state.checkpoint.copy())
    history.epoch_start.append(state.epoch_start.copy())
    history.fresh.append(state.fresh.copy())


def _should_stop(row, config):
    if config.grad_map_threshold is not None and row.grad_map_sq <= config.grad_map_threshold:
        return True
    if config.data_pass_budget is not None and row.data_pass >= config.data_pass_budget:
        return True
    return False


def run(algorithm, problem, mixing, config, potential_params=None, raise_on_divergence=True):
    """Iterate until ``max_iterations``, the gradient-mapping threshold or the
    data-pass budget.  Returns a ``RunResult`` with one row per recorded
    iteration."""
    if algorithm != config.algorithm:
        config = replace(config, algorithm=algorithm)
    if config.track_potential and potential_params is None and algorithm in CLIPPED:
        from .diagnostics import potential_constants
        potential_params = potential_constants(mixing.eta, problem.m)
    state = init_run(problem, mixing, config)
    history = History() if config.record_history else None
    stepper = STEPPERS[algorithm]
    rows = []
    stop = False

    def record(s):
        nonlocal stop
        row = metrics_row(s, problem, config, potential_params)
        if not row.is_finite():
            raise DivergenceError(f"non-finite metrics at t={s.t}", t=s.t)
        rows.append(row)
        if history is not None:
            _snapshot(history, s, config)
        stop = s.t >= config.max_iterations or _should_stop(row, config)
        if stop:
            raise _Stop

    result = RunResult(algorithm, rows, state, config, history)
    try:
        # overflow on the way to divergence is reported as DivergenceError
        with np.errstate(over="ignore", invalid="ignore"):
            while True:
                stepper(state, problem, config, record)
    except _Stop:
        pass
    except DivergenceError as exc:
        exc.last_row = rows[-1] if rows else None
        if raise_on_divergence:
            raise
        result.diverged = True
        result.error = str(exc)
    if rows:
        result.t_out = int(state.misc_rng.integers(0, len(rows)))
    return result


class _Stop(Exception):
    pass
