"""Acceptance criteria 1-10.  Each test prints one PASS/FAIL line with its
runtime and then asserts the same condition, so the summary lines and the
pytest outcome always agree."""

import math
import time

import numpy as np
import pytest

from cgtvr.cli import main
from cgtvr.clipping import clip
from cgtvr.diagnostics import (check_runtime_invariants, potential_constants,
                               restart_bound_check, run_delta_f, min_grad_map_check)
from cgtvr.experiment import load_experiment, run_experiment
from cgtvr.network import build_topology, metropolis_weights
from cgtvr.optimizers import R0Rule, RunConfig, run
from cgtvr.problems import (finite_difference_gradient, generate_quadratic_inverse,
                            problem_from_config)
from cgtvr.smoothness import (Ball, Constant, Exponential, Logarithmic, Power, combine,
                              estimate_r0, gamma_from_eta, gen_smooth_constants,
                              hausdorff_ball, relative_difference, ruc_delta_power)

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    """``verdict(n, ok, elapsed, limit, detail)`` prints the criterion line and
    asserts both the check and the runtime limit."""
    def _report(n, ok, elapsed, limit, detail=""):
        in_time = elapsed < limit
        status = "PASS" if ok and in_time else "FAIL"
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {status}  {elapsed:7.2f}s (limit {limit:g}s)  {detail}")
        assert ok, detail
        assert in_time, f"runtime {elapsed:.2f}s exceeds {limit}s"
    return _report


# ---- 1: clip operator -----------------------------------------------------

def test_criterion_01_clip_fuzz(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    fails = 0
    total = 0
    per_dim = 100_000 // 256 + 1
    for dim in range(1, 257):
        V = rng.normal(size=(per_dim, dim)) * 10.0 ** rng.uniform(-6, 6, size=(per_dim, 1))
        beta = 10.0 ** rng.uniform(-3, 3, size=per_dim)
        delta = 10.0 ** rng.uniform(-3, 3, size=per_dim)
        T = np.array([clip(v, b, d) for v, b, d in zip(V, beta, delta)])
        norms = np.linalg.norm(T, axis=1)
        fails += int(np.sum(norms > delta * (1 + 1e-12)))
        align = np.einsum("ij,ij->i", T, V)
        fails += int(np.sum(align < beta * norms ** 2 * (1 - 1e-12)))
        # branch continuity: both branches agree on the sphere ||v|| = beta * delta
        U = V / np.linalg.norm(V, axis=1, keepdims=True)
        S = (beta * delta)[:, None] * U
        C = np.array([clip(v, b, d) for v, b, d in zip(S, beta, delta)])
        lin, rad = S / beta[:, None], delta[:, None] * U
        fails += int(np.sum(~np.isclose(C, lin, rtol=1e-12, atol=0).all(axis=1)))
        fails += int(np.sum(~np.isclose(lin, rad, rtol=1e-12, atol=0).all(axis=1)))
        total += per_dim
    elapsed = time.perf_counter() - start
    verdict(1, fails == 0 and total >= 100_000, elapsed, 5.0,
            f"{total} vectors, dims 1-256, {fails} failures")


# ---- 2: mixing matrices ---------------------------------------------------

def _mixing_cases():
    for m in range(3, 17):
        yield f"ring{m}", build_topology("ring", m)
    for rows in range(2, 5):
        for cols in range(2, 5):
            yield f"grid{rows}x{cols}", build_topology("grid", rows * cols, rows, cols)
    for p in (0.2, 0.5):
        for seed in range(10):
            yield f"er{p}/{seed}", build_topology("erdos_renyi", 16, p=p, seed=seed)


def test_criterion_02_mixing(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    problems = []
    n_cases = 0
    for name, graph in _mixing_cases():
        n_cases += 1
        mix = metropolis_weights(graph)
        W, m = mix.W, mix.m
        ones = np.ones(m)
        if max(np.abs(W @ ones - 1).max(), np.abs(ones @ W - 1).max()) > 1e-12:
            problems.append(f"{name}: not doubly stochastic")
        lam = np.linalg.eigvalsh(W - np.full((m, m), 1.0 / m))
        if abs(np.abs(lam).max() - mix.eta) > 1e-10:
            problems.append(f"{name}: eta {mix.eta} vs {np.abs(lam).max()}")
        for _ in range(200):
            V = rng.normal(size=(m, int(rng.integers(1, 6))))
            V -= V.mean(axis=0)
            if np.linalg.norm(W @ V) > mix.eta * np.linalg.norm(V) + 1e-10:
                problems.append(f"{name}: contraction")
                break
    elapsed = time.perf_counter() - start
    verdict(2, not problems, elapsed, 10.0,
            f"{n_cases} graphs x 200 contraction samples; problems: {problems[:3]}")


# ---- 3: RUC certification -------------------------------------------------

FAMILIES = {
    "constant": Constant(3.0),
    "logarithmic": Logarithmic(5.0),
    "power": Power(1.0, 2.0),
    "exponential": Exponential(2.0),
}


def _center(rng, dim):
    c = rng.normal(size=dim)
    return c * rng.uniform(1.0, 10.0) / np.linalg.norm(c)


def _nearby(rng, ball, reach):
    """A ball within Hausdorff distance ``reach`` of ``ball``."""
    budget = reach * rng.uniform()
    share = rng.uniform()
    u = rng.normal(size=ball.center.size)
    shift = share * budget * u / np.linalg.norm(u)
    dr = (1 - share) * budget * rng.choice([-1.0, 1.0])
    return Ball(ball.center + shift, max(ball.radius + dr, 0.0))


def _certify(rng, model, eps, delta_fn, n_pairs=1000):
    """Sample accepted pairs with ``d_H <= delta`` and count violations."""
    worst, violations, accepted = 0.0, 0, 0
    while accepted < n_pairs:
        dim = int(rng.integers(1, 9))
        X = Ball(_center(rng, dim), rng.uniform(0.0, 2.0))
        Y = _nearby(rng, X, delta_fn(X, None))
        if np.linalg.norm(Y.center) < 1.0:
            continue
        dh = hausdorff_ball(X, Y)
        if dh > delta_fn(X, Y):
            continue
        accepted += 1
        rd = relative_difference(model, X, Y)
        worst = max(worst, rd)
        violations += rd > eps * (1 + 1e-9)
    return violations, worst


def test_criterion_03_ruc_certification(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    lines = []
    total = 0
    for eps in (0.1, 0.5, 1.0):
        gamma = 1.0 + eps
        for name, model in FAMILIES.items():
            # the radius is anchored at whichever ball has the smaller value
            def delta_fn(X, Y, model=model):
                dx = estimate_r0(model, X, gamma)
                return dx if Y is None else min(dx, estimate_r0(model, Y, gamma))
            v, w = _certify(rng, model, eps, delta_fn)
            total += v
            lines.append(f"{name}@{eps}:{v}")
        for nu in (0.5, 1.0, 3.0):
            model = Power(0.0, nu)

            def delta_fn(X, Y, nu=nu):
                anchors = [np.linalg.norm(X.center)]
                if Y is not None:
                    anchors.append(np.linalg.norm(Y.center))
                return ruc_delta_power(eps, nu, max(min(anchors), 1.0))
            v, w = _certify(rng, model, eps, delta_fn)
            total += v
            lines.append(f"power_nu{nu}@{eps}:{v}")
    # closure laws on random ball pairs
    closure_fail = 0
    F, G = Power(1.0, 2.0), Exponential(1.5)
    for _ in range(2000):
        dim = int(rng.integers(1, 6))
        X = Ball(_center(rng, dim), rng.uniform(0, 2))
        Y = Ball(_center(rng, dim), rng.uniform(0, 2))
        dF, dG = relative_difference(F, X, Y), relative_difference(G, X, Y)
        for op in ("linearComb", "max", "min"):
            d = relative_difference(combine(op, F, G, alpha=0.3, beta=2.0), X, Y)
            closure_fail += d > max(dF, dG) * (1 + 1e-12) + 1e-12
        d = relative_difference(combine("product", F, G), X, Y)
        closure_fail += 1 + d > (1 + dF) * (1 + dG) * (1 + 1e-12)
        A = rng.normal(size=(dim, dim))
        aff = combine("affine", F, amap=A)
        ax = Ball(A @ X.center, np.linalg.norm(A, 2) * X.radius)
        ay = Ball(A @ Y.center, np.linalg.norm(A, 2) * Y.radius)
        closure_fail += relative_difference(aff, X, Y) != relative_difference(F, ax, ay)
    elapsed = time.perf_counter() - start
    verdict(3, total == 0 and closure_fail == 0, elapsed, 10.0,
            f"violations {total} ({', '.join(lines)}); closure failures {closure_fail}")


# ---- 4: gradient oracles --------------------------------------------------

def test_criterion_04_gradients(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    qi = generate_quadratic_inverse(32, 8, 64, seed=4)
    dr = problem_from_config({"type": "dim_reduction"})
    worst = {}
    for name, prob in (("quadratic_inverse", qi), ("dim_reduction", dr)):
        errs = []
        for _ in range(50):
            x = rng.normal(size=prob.dim)
            i = int(rng.integers(prob.m))
            j = int(rng.integers(prob.n[i]))
            g = prob.component_gradient(i, j, x)
            fd = finite_difference_gradient(lambda z: prob.component_objective(i, j, z), x)
            errs.append(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-8))
        worst[name] = max(errs)
    elapsed = time.perf_counter() - start
    verdict(4, max(worst.values()) <= 1e-5, elapsed, 5.0,
            "worst relative error " + ", ".join(f"{k}={v:.2e}" for k, v in worst.items()))


# ---- 5: runtime invariants ------------------------------------------------

def test_criterion_05_runtime_invariants(verdict):
    start = time.perf_counter()
    prob = generate_quadratic_inverse(32, 8, 256, seed=0, conservative=True)
    mix = metropolis_weights(build_topology("ring", 8))
    bad = {}
    checked = set()
    for alg in ("cgtvr_stag", "cgtvr_sync"):
        for seed in range(5):
            cfg = RunConfig(algorithm=alg, theta=10.0, seed=seed, max_iterations=2000,
                            record_history=True)
            res = run(alg, prob, mix, cfg)
            for name, (excess, count) in check_runtime_invariants(res, prob).items():
                checked.add(f"{alg}:{name}")
                if count:
                    bad[f"{alg}/{seed}/{name}"] = excess
    elapsed = time.perf_counter() - start
    required = {f"cgtvr_stag:{k}" for k in ("checkpoint_distance", "smoothness_ratio",
                                            "pairwise_distance", "tracker_identity")}
    required |= {"cgtvr_sync:sync_epoch_radius"}
    ok = not bad and required <= checked
    verdict(5, ok, elapsed, 60.0, f"{len(checked)} invariant kinds x 5 seeds; violations {bad}")


# ---- 6 and 7: tiny instance bounds -----------------------------------------

@pytest.fixture(scope="module")
def tiny_runs():
    start = time.perf_counter()
    prob = generate_quadratic_inverse(4, 2, 16, seed=0, conservative=True)
    mix = metropolis_weights(build_topology("ring", 2))
    params = potential_constants(mix.eta, 2)
    results = [run("cgtvr_stag", prob, mix,
                   RunConfig(theta=params.theta0, seed=s, max_iterations=2000,
                             record_history=True, r0_rule=R0Rule("fixed", value=1.0)))
               for s in range(20)]
    # nonnegative objective, so 0 is a valid lower bound on f*
    dfs = np.array([run_delta_f(r, prob, 0.0) for r in results])
    return prob, mix, params, results, dfs, time.perf_counter() - start


def test_criterion_06_restart_bound(verdict, tiny_runs):
    prob, mix, params, results, dfs, setup = tiny_runs
    start = time.perf_counter()
    c = results[0].state.c
    delta = float(np.max(results[0].state.delta))
    d = float(np.min(results[0].state.d_radius))
    reports = restart_bound_check(results, results[0].config, dfs, params.theta0)
    elapsed = setup + time.perf_counter() - start
    ok = c * delta <= d / 2 and all(r["status"] == "pass" for r in reports)
    detail = "; ".join(f"{r['check']} mean K={r['observed']:.3g} <= {r['bound']:.3g}"
                       for r in reports)
    verdict(6, ok, elapsed, 60.0, f"theta={params.theta0:g}, c*delta={c * delta:.3g}, "
            f"d/2={d / 2:.3g}; {detail}")


def test_criterion_07_min_grad_map_bound(verdict, tiny_runs):
    prob, mix, params, results, dfs, setup = tiny_runs
    start = time.perf_counter()
    rep = min_grad_map_check(results, dfs, params.theta0, params.theta0)
    elapsed = setup + time.perf_counter() - start
    ok = rep["violations"] == 0 and all(len(r.rows) >= 2000 for r in results)
    verdict(7, ok, elapsed, 120.0, f"20 seeds, T<=2000, violations {rep['violations']}, "
            f"worst observed/bound {rep['observed']:.3g}")


# ---- 8: desk-scale reproduction -------------------------------------------

def test_criterion_08_desk_reproduction(verdict, tmp_path, monkeypatch):
    start = time.perf_counter()
    monkeypatch.setenv("CGTVR_OUTPUT_DIR", str(tmp_path))
    cfg = load_experiment("configs/desk_qi.toml")
    summary = run_experiment(cfg, write_plots=False)
    cells = summary["cells"]
    topologies = sorted({c["topology"] for c in cells})
    wins, consensus, lines = 0, {}, []
    for topo in topologies:
        med = {}
        for alg in {c["algorithm"] for c in cells}:
            sel = [c for c in cells if c["topology"] == topo and c["algorithm"] == alg]
            passes = [math.inf if c["diverged"] else float(c["passes_to_target"]) for c in sel]
            med[alg] = float(np.median(passes))
            if alg == "cgtvr_stag":
                consensus[topo] = float(np.median([c["final"]["consensus_error"] for c in sel]))
        best = min(v for k, v in med.items() if k != "cgtvr_stag")
        won = med["cgtvr_stag"] <= best and math.isfinite(med["cgtvr_stag"])
        wins += won
        lines.append(f"{topo}: stag {med['cgtvr_stag']:.4g} vs best baseline {best:.4g} "
                     f"({'win' if won else 'loss'}), consensus {consensus[topo]:.2e}")
    elapsed = time.perf_counter() - start
    ok = wins >= 2 and all(v <= 1e-3 for v in consensus.values())
    verdict(8, ok, elapsed, 600.0, f"{wins}/{len(topologies)} wins; " + "; ".join(lines))


# ---- 9: determinism -------------------------------------------------------

DETERMINISM_CONFIG = """
seeds = [3]
[problem]
type = "quadratic_inverse"
d = 16
m = 4
nPerAgent = 64
[topology]
kind = "ring"
[[algorithms]]
name = "cgtvr_stag"
theta = 10.0
[[algorithms]]
name = "gt_vr"
stepsize = 1e-4
[stop]
maxIterations = 300
"""


def test_criterion_09_determinism(verdict, tmp_path, monkeypatch):
    start = time.perf_counter()
    cfg = tmp_path / "det.toml"
    cfg.write_text(DETERMINISM_CONFIG, encoding="utf-8")
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        monkeypatch.setenv("CGTVR_OUTPUT_DIR", str(out))
        assert main(["run", str(cfg), "--no-plots"]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    elapsed = time.perf_counter() - start
    ok = len(outputs[0]) == 2 and outputs[0] == outputs[1]
    verdict(9, ok, elapsed, 30.0, f"{len(outputs[0])} CSVs compared byte for byte")


# ---- 10: formula spot checks ----------------------------------------------

def test_criterion_10_formulas(verdict):
    start = time.perf_counter()
    p = potential_constants(0.5, 16)
    checks = {
        "potential": (p.alpha1, p.alpha2, p.theta0) == (301.75, 0.3125, 159324.0),
        "gamma(0.5)": gamma_from_eta(0.5)[0] == 1.5,
        "gamma(0.2)": gamma_from_eta(0.2)[0] == 2.0,
        "gamma(0.9)": abs(gamma_from_eta(0.9)[0] - 19 / 18) <= 1e-12,
    }
    A0, A1 = gen_smooth_constants(1, 1, 0.5, 0)
    checks["gen_smooth"] = (abs(A0 - (1 + math.sqrt(2))) <= 1e-12
                            and abs(A1 - 1.5 * math.sqrt(2)) <= 1e-12)
    elapsed = time.perf_counter() - start
    failed = [k for k, v in checks.items() if not v]
    verdict(10, not failed, elapsed, 1.0, f"{len(checks)} checks, failed: {failed}")

