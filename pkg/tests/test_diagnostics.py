import math
from types import SimpleNamespace

import numpy as np
import pytest
from conftest import ShiftedSquares
from hypothesis import given, settings
from hypothesis import strategies as st

from cgtvr.diagnostics import (check_runtime_invariants, clip_frequency_check,
                               compute_delta_f, compute_potential, escape_radius,
                               harmonic_effective_L, potential_constants, potential_trend,
                               report_status, restart_bound_check, min_grad_map_check)
from cgtvr.network import build_topology, metropolis_weights
from cgtvr.optimizers import R0Rule, RunConfig, run
from cgtvr.problems import generate_quadratic_inverse

RING4 = metropolis_weights(build_topology("ring", 4))


def test_potential_constants_examples():
    p = potential_constants(0.5, 16)
    assert (p.alpha1, p.alpha2, p.theta0) == (301.75, 0.3125, 159324.0)
    q = potential_constants(0.0, 1)
    assert (q.alpha1, q.alpha2, q.theta0) == (614.0, 2.5, 11052.0)
    r = potential_constants(0.5, 32)
    assert r.alpha1 == p.alpha1 / 2 and r.alpha2 == p.alpha2 / 2 and r.theta0 == p.theta0


def test_potential_constants_increasing():
    etas = np.linspace(0.0, 0.95, 50)
    vals = np.array([[getattr(potential_constants(e, 3), k) for k in ("alpha1", "alpha2",
                                                                      "theta0")]
                     for e in etas])
    assert np.all(np.diff(vals, axis=0) > 0)
    with pytest.raises(ValueError):
        potential_constants(1.0, 3)


def test_potential_consensus_state():
    params = potential_constants(0.5, 2)
    state = SimpleNamespace(X=np.ones((2, 3)), Y=np.full((2, 3), 4.0))
    assert compute_potential(state, params, 2.0, f_bar=1.25) == 1.25


def test_potential_hand_computed():
    params = potential_constants(0.5, 2)
    X = np.array([[1.0, 0.0], [-1.0, 0.0]])   # ||X - 1 x_bar||^2 = 2
    Y = np.array([[0.0, 3.0], [0.0, 1.0]])    # ||Y - 1 y_bar||^2 = 2
    state = SimpleNamespace(X=X, Y=Y)
    got = compute_potential(state, params, 4.0, f_bar=0.5)
    want = 0.5 + params.alpha1 * 4.0 * 2.0 + params.alpha2 * 2.0 / 4.0
    assert got == pytest.approx(want, abs=1e-12)
    doubled = SimpleNamespace(alpha1=2 * params.alpha1, alpha2=params.alpha2)
    diff = compute_potential(state, doubled, 4.0, f_bar=0.5) - got
    assert diff == pytest.approx(params.alpha1 * 4.0 * 2.0, rel=1e-12)


def test_delta_f_identical_agents():
    prob = ShiftedSquares([np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]])])
    x0 = np.array([0.0, 0.0])
    assert compute_delta_f(prob, x0, 0.5, 1.0, f_star=0.0) == pytest.approx(2.5)


def test_delta_f_noiseless_qi_at_truth():
    prob = generate_quadratic_inverse(5, 3, 8, noise_std=0.0, seed=0)
    x = prob.x_true
    local = prob.local_gradients(x)
    assert compute_delta_f(prob, x, 0.3, 2.0) == pytest.approx(
        5 * np.sum((local - local.mean(axis=0)) ** 2) / (2 * 3 * 0.7 * 2.0))


def test_delta_f_two_agent_toy():
    # local gradients at 0 are +1 and -1
    prob = ShiftedSquares([np.array([[-1.0]]), np.array([[1.0]])])
    term = compute_delta_f(prob, np.zeros(1), 0.5, 1.0, f_star=prob.objective(np.zeros(1)))
    assert term == pytest.approx(5.0, abs=1e-12)


def test_harmonic_examples():
    assert harmonic_effective_L([5, 5, 5]) == pytest.approx(5.0)
    assert harmonic_effective_L([1, 3]) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        harmonic_effective_L([0.5])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1.0, 1e6), min_size=1, max_size=50))
def test_harmonic_below_mean_and_max(vals):
    h = harmonic_effective_L(vals)
    assert h <= np.mean(vals) * (1 + 1e-12)
    assert h <= max(vals) * (1 + 1e-12)


def test_escape_radius_examples():
    assert escape_radius(1, 1, 1, 2, 0.1, 0.5, 1) == pytest.approx(9.4, abs=1e-12)
    base = escape_radius(1, 1, 1, 2, 0.0 + 1e-300, 0.5, 0)
    assert escape_radius(1, 0.25, 1, 2, 1e-300, 0.5, 0) == pytest.approx(2 * base)
    assert escape_radius(1, 1, 0.5, 2, 1e-300, 0.5, 0) == pytest.approx(2 * base)
    with pytest.raises(ValueError):
        escape_radius(1, 0, 1, 2, 0.1, 0.5, 1)


def tiny_runs(theta, seeds=range(3), **kw):
    prob = ShiftedSquares([np.array([[0.5, 0.0], [0.0, 0.5]]), np.array([[-0.5, 0.0]])])
    mix = metropolis_weights(build_topology("ring", 2))
    runs = []
    for s in seeds:
        cfg = RunConfig(theta=theta, seed=s, max_iterations=60, record_history=True,
                        r0_rule=R0Rule("fixed", value=1.0), **kw)
        runs.append(run("cgtvr_stag", prob, mix, cfg))
    return prob, mix, runs


def test_restart_bound_no_restarts_passes():
    params = potential_constants(0.0, 2)
    prob, mix, runs = tiny_runs(params.theta0 * 2)
    reports = restart_bound_check(runs, runs[0].config, 1.0, params.theta0)
    assert all(r["observed"] == 0.0 for r in reports)
    assert report_status(reports) == "pass"
    assert {r["status"] for r in reports} == {"pass"}


def test_restart_bound_gated_by_theta():
    prob, mix, runs = tiny_runs(10.0)
    reports = restart_bound_check(runs, runs[0].config, 1.0)
    assert {r["status"] for r in reports} == {"inapplicable"}


def test_min_grad_map_and_frequency_checks():
    params = potential_constants(0.0, 2)
    prob, mix, runs = tiny_runs(params.theta0)
    rep = min_grad_map_check(runs, 1.0, params.theta0, params.theta0)
    assert rep["status"] == "pass"
    low = min_grad_map_check(runs, 1e-30, 10.0, params.theta0)
    assert low["status"] == "informational"
    freq = clip_frequency_check(runs)
    assert freq["status"] in ("pass", "fail") and freq["bound"] >= 0


def test_runtime_invariants_on_small_run():
    prob = generate_quadratic_inverse(4, 4, 16, seed=1)
    for alg in ("cgtvr_stag", "cgtvr_sync"):
        res = run(alg, prob, RING4, RunConfig(algorithm=alg, max_iterations=80,
                                              record_history=True))
        inv = check_runtime_invariants(res, prob)
        assert all(v == 0 for _, v in inv.values()), inv
        if alg == "cgtvr_sync":
            assert "sync_epoch_radius" in inv
        else:
            assert "checkpoint_distance" in inv


def test_potential_trend_on_tiny_instance():
    params = potential_constants(0.0, 2)
    prob, mix, runs = tiny_runs(params.theta0, seeds=range(5), track_potential=True)
    mean_P, frac = potential_trend(runs)
    assert np.all(np.isfinite(mean_P))
    assert frac <= 0.02
    assert not math.isnan(frac)
