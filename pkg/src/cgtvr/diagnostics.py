"""Theoretical quantities of the analysis and empirical checks of its bounds.

Checks return plain dicts ``{check, bound, observed, seeds, status}`` so that
they can be dumped as a JSON report.  ``status`` is one of ``pass``, ``fail``,
``inapplicable`` (a precondition of the bound does not hold) or
``informational`` (the run is outside the parameter range the bound covers, so
a violation is reported but not treated as a failure).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .smoothness import Ball

TOL = 1e-9
TRACKER_TOL = 1e-10
EXACT_TOL = 1e-12


@dataclass(frozen=True)
class PotentialParams:
    alpha1: float
    alpha2: float
    theta0: float
    eta: float
    m: int


def potential_constants(eta, m) -> PotentialParams:
    """Potential weights and the smallest theta covered by the descent analysis.

    ``eta = 0`` (complete mixing) is accepted as the limit case.
    """
    if not 0.0 <= eta < 1.0:
        raise ValueError(f"eta must lie in [0, 1), got {eta}")
    if m < 1:
        raise ValueError("m must be at least 1")
    z = 1.0 - eta
    alpha1 = 14.0 / (z * m) + 600.0 / (z ** 3 * m)
    alpha2 = 5.0 / (2.0 * z * m)
    theta0 = 28.0 + 1424.0 / z ** 2 + 9600.0 / z ** 4
    return PotentialParams(alpha1, alpha2, theta0, float(eta), int(m))


def compute_potential(state, params, L_min, problem=None, f_bar=None):
    """``f(x_bar) + a1 L_min ||X - 1 x_bar||_F^2 + a2 ||Y - 1 y_bar||_F^2 / L_min``.

    Pass either ``problem`` or the objective value ``f_bar``.
    """
    X, Y = state.X, state.Y
    x_bar = X.mean(axis=0)
    if f_bar is None:
        f_bar = problem.objective(x_bar)
    dx = X - x_bar
    dy = Y - Y.mean(axis=0)
    return (float(f_bar) + params.alpha1 * L_min * float(np.sum(dx * dx))
            + params.alpha2 * float(np.sum(dy * dy)) / L_min)


def compute_delta_f(problem, x0, eta, L_min0, f_star=0.0):
    """Initial optimality gap plus the gradient-heterogeneity term."""
    x0 = np.asarray(x0, dtype=float)
    local = problem.local_gradients(x0)
    hetero = local - local.mean(axis=0)
    term = 5.0 * float(np.sum(hetero * hetero)) / (2.0 * problem.m * (1.0 - eta) * L_min0)
    return problem.objective(x0) - f_star + term


def harmonic_effective_L(L_traj):
    L = np.asarray(L_traj, dtype=float)
    if L.size == 0:
        raise ValueError("empty trajectory")
    if np.any(L < 1.0):
        raise ValueError("smoothness values must be at least 1")
    return float(L.size / np.sum(1.0 / L))


def escape_radius(delta_f, epsilon, p, m, delta, eta, r0):
    """Radius around the initial average that contains every iterate until the
    squared gradient mapping first drops below ``epsilon`` (w.p. ``1 - p``)."""
    if not (0.0 < epsilon <= 1.0 and 0.0 < p <= 1.0):
        raise ValueError("epsilon and p must lie in (0, 1]")
    return (8.0 * delta_f / (math.sqrt(epsilon) * p)
            + math.sqrt(2.0 * m) * delta / (1.0 - eta) + r0)


def _report(check, bound, observed, seeds, status, **extra):
    out = dict(check=check, bound=bound, observed=observed, seeds=seeds, status=status)
    out.update(extra)
    return out


def _status(ok, applicable=True, in_theory=True):
    if not applicable:
        return "inapplicable"
    if ok:
        return "pass"
    return "fail" if in_theory else "informational"


def run_delta_f(result, problem, f_star):
    """``Delta_f`` for one run, from its starting point and first ``L_min``."""
    x0 = result.history.X[0].mean(axis=0) if result.history else None
    if x0 is None:
        raise ValueError("delta_f needs a run recorded with history")
    return compute_delta_f(problem, x0, result.state.eta, result.rows[0].L_min, f_star)


def restart_bound_check(results, config, delta_f, theta0=None):
    """Seed-averaged early-restart counts against ``16 Delta_f tau_i / (theta d^2)``.

    ``delta_f`` may be a scalar or one value per run (the bound is then taken
    at the largest).  The bound needs a fixed epoch radius with
    ``c delta <= d/2`` and ``theta >= theta0``.
    """
    state = results[0].state
    c, tau = state.c, state.tau
    deltas = np.concatenate([np.ravel(r.history.delta) if r.history else r.state.delta
                             for r in results])
    ds = np.concatenate([np.ravel(r.history.d_radius) if r.history else r.state.d_radius
                         for r in results])
    deltas, ds = deltas[deltas > 0], ds[ds > 0]
    d = float(ds.min())
    fixed_d = bool(np.allclose(ds, d, rtol=1e-12, atol=0.0))
    precond = fixed_d and c * float(deltas.max()) <= d / 2.0 * (1 + 1e-12)
    if theta0 is None:
        theta0 = potential_constants(state.eta, state.m).theta0
    in_theory = config.theta >= theta0
    dF = float(np.max(delta_f))
    K = np.array([r.state.restarts for r in results], dtype=float)
    mean_K = K.mean(axis=0)
    out = []
    for i in range(state.m):
        bound = 16.0 * dF * float(tau[i]) / (config.theta * d * d)
        ok = mean_K[i] <= bound
        status = "inapplicable" if not (precond and in_theory) else _status(ok)
        out.append(_report(f"restart_bound[agent={i}]", bound, float(mean_K[i]),
                           len(results), status))
    return out


def min_grad_map_check(results, delta_fs, theta, theta0):
    """Running ``min_{t<T} ||G||^2`` against ``32 theta^2 Lbar Delta_f / ((theta-2) T)``
    for every ``T``, with ``Lbar`` the largest ``L_min`` seen before ``T``."""
    worst_ratio = 0.0
    violations = 0
    for res, dF in zip(results, np.broadcast_to(delta_fs, (len(results),))):
        g = res.column("grad_map_sq")
        L = res.column("L_min")
        T = np.arange(1, g.size + 1, dtype=float)
        running_min = np.minimum.accumulate(g)
        L_bar = np.maximum.accumulate(L)
        bound = 32.0 * theta ** 2 * L_bar * dF / ((theta - 2.0) * T)
        violations += int(np.sum(running_min > bound))
        worst_ratio = max(worst_ratio, float(np.max(running_min / bound)))
    applicable = theta > 2
    status = _status(violations == 0, applicable, theta >= theta0)
    return _report("min_grad_map", 1.0, worst_ratio, len(results), status,
                   violations=violations, note="observed is max over T of min_{t<T}|G|^2 / bound")


def clip_frequency_check(results):
    """Fraction of (seed, t) samples where the gradient mapping clips, against
    the mean of ``||T(grad)||^2 / delta^2`` plus three standard errors."""
    active, ratio = [], []
    for res in results:
        for row in res.rows:
            if row.beta_min is None:
                continue
            T_sq = row.grad_map_sq / row.beta_min ** 2
            active.append(row.grad_norm_sq > (row.beta_min * row.delta_min) ** 2)
            ratio.append(T_sq / row.delta_min ** 2)
    if not active:
        return _report("clip_frequency", None, None, len(results), "inapplicable")
    active = np.asarray(active, dtype=float)
    freq = float(active.mean())
    sigma = math.sqrt(max(freq * (1 - freq), 0.0) / active.size)
    bound = float(np.mean(ratio)) + 3.0 * sigma
    return _report("clip_frequency", bound, freq, len(results), _status(freq <= bound))


def escape_radius_check(results, problem, delta_f, epsilon, p=1.0):
    """Every ``L_i^t`` visited before ``||G||^2 <= epsilon`` stays below the
    model evaluated on the escape ball around the initial average."""
    violations, worst = 0, 0.0
    for res in results:
        h = res.history
        state = res.state
        delta = float(np.max(h.delta))
        r0 = float(np.max(h.r0))
        x_bar0 = h.X[0].mean(axis=0)
        R = escape_radius(delta_f, epsilon, p, state.m, delta, state.eta, r0)
        caps = np.array([model(Ball(x_bar0, R)) for model in state.models])
        g = res.column("grad_map_sq")
        hit = np.nonzero(g <= epsilon)[0]
        t_eps = int(hit[0]) if hit.size else len(g)
        if t_eps == 0:
            continue
        L = np.asarray(h.L[:t_eps])
        violations += int(np.sum(L > caps * (1 + 1e-12)))
        worst = max(worst, float(np.max(L / caps)))
    theta = results[0].config.theta
    return _report("escape_radius", 1.0, worst, len(results),
                   _status(violations == 0, True, theta >= 4), violations=violations,
                   note="observed is max L_i^t / L_i(B(x0, R))")


def check_runtime_invariants(result, problem, n_pairs=2000, seed=0):
    """Deterministic bounds that must hold at every iteration of a clipped run.

    Returns ``{name: (worst_excess, violations)}`` where ``worst_excess`` is the
    largest ``observed - bound`` (negative when the bound holds with margin).
    """
    h = result.history
    if h is None:
        raise ValueError("run was not recorded with history")
    alg = result.config.algorithm
    st = result.state
    c, gamma = st.c, st.gamma
    X = np.asarray(h.X)
    Y, G = np.asarray(h.Y), np.asarray(h.G)
    delta = np.asarray(h.delta)
    d_rad = np.asarray(h.d_radius)
    L = np.asarray(h.L)
    T = X.shape[0]
    out = {}

    def put(name, excess):
        excess = np.asarray(excess, dtype=float)
        if excess.size == 0:
            out[name] = (-math.inf, 0)
        else:
            out[name] = (float(excess.max()), int(np.sum(excess > 0)))

    gap = np.abs(Y.mean(axis=1) - G.mean(axis=1)).max(axis=1)
    put("tracker_identity", gap - TRACKER_TOL)

    x_bar = X.mean(axis=1)
    step_delta = delta.max(axis=1)
    sup_delta = np.maximum.accumulate(step_delta)
    move = np.linalg.norm(np.diff(x_bar, axis=0), axis=1)
    put("mean_step", move - step_delta[:-1] - TOL)
    dev = np.sqrt(np.sum((X - x_bar[:, None, :]) ** 2, axis=(1, 2)))
    # x^t only depends on clipped steps taken before t
    prev_sup = np.concatenate([[0.0], sup_delta[:-1]])
    put("consensus_radius", dev - c * prev_sup / 2.0 - TOL)

    rng = np.random.default_rng(seed)
    m = X.shape[1]
    ii, jj = rng.integers(0, m, n_pairs), rng.integers(0, m, n_pairs)
    tt, ss = rng.integers(0, T, n_pairs), rng.integers(0, T, n_pairs)
    dist = np.linalg.norm(X[tt, ii] - X[ss, jj], axis=1)
    lag = np.abs(tt - ss)
    dsup = prev_sup[np.maximum(tt, ss)]
    put("pairwise_distance", dist - (c + lag) * dsup - TOL)

    ratio = L.max(axis=1) / L.min(axis=1)
    put("smoothness_ratio", ratio - gamma * (1 + 1e-12))

    fresh = np.asarray(h.fresh)
    errs = []
    for t, i in zip(*np.nonzero(fresh)):
        errs.append(np.abs(G[t, i] - problem.local_gradient(i, X[t, i])).max())
    put("estimator_exactness", np.asarray(errs) - EXACT_TOL)

    if alg == "cgtvr_stag":
        cp = np.asarray(h.checkpoint)
        spread = np.array([np.max(np.linalg.norm(cp[t][:, None] - cp[t][None], axis=2))
                           for t in range(T)])
        put("checkpoint_distance", spread - (c * prev_sup + d_rad.max(axis=1)) - TOL)
        within = np.linalg.norm(X - cp, axis=2)
        put("epoch_containment", (within - (d_rad + delta)).ravel() - TOL)
    if alg == "cgtvr_sync":
        tau = int(st.tau[0])
        excess = []
        for s0 in range(0, T, tau):
            for k in range(1, min(tau, T - s0 - 1) + 1):
                r = np.linalg.norm(X[s0 + k] - X[s0], axis=1)
                excess.append(r - (c + k) * prev_sup[s0 + k] - TOL)
        put("sync_epoch_radius", np.concatenate(excess) if excess else [])
    return out


def potential_trend(results):
    """Seed-averaged potential sequence and the fraction of increasing steps
    whose rise exceeds ``1e-6 * P_0``."""
    P = np.array([r.column("potential") for r in results])
    n = min(len(p) for p in P) if P.dtype == object else P.shape[1]
    P = np.array([p[:n] for p in P], dtype=float)
    mean_P = P.mean(axis=0)
    rises = np.diff(mean_P)
    bad = rises > 1e-6 * abs(mean_P[0])
    return mean_P, float(np.mean(bad)) if rises.size else 0.0


def report_status(reports):
    """Overall status: ``fail`` if any check failed, else ``pass``."""
    return "fail" if any(r["status"] == "fail" for r in reports) else "pass"
