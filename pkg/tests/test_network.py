import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgtvr.errors import DegenerateNetworkError, GenerationError
from cgtvr.network import (Graph, build_topology, erdos_renyi, metropolis_weights,
                           spectral_constants, topology_from_config, topology_label)


def eta_oracle(W):
    """Second-largest eigenvalue magnitude from a dense symmetric solver."""
    m = W.shape[0]
    ev = np.linalg.eigvalsh(W - np.ones((m, m)) / m)
    return float(np.max(np.abs(ev)))


def test_ring_edges():
    g = build_topology("ring", 4)
    assert g.sorted_edges() == [(0, 1), (0, 3), (1, 2), (2, 3)]


def test_grid_edges():
    g = build_topology("grid", 4, rows=2, cols=2)
    assert g.sorted_edges() == [(0, 1), (0, 2), (1, 3), (2, 3)]


def test_er_p1_is_complete():
    g = build_topology("erdos_renyi", 5, p=1.0, seed=123)
    assert len(g.edges) == 10


def test_grid_mismatch():
    with pytest.raises(ValueError):
        build_topology("grid", 5, rows=2, cols=2)


def test_er_generation_failure():
    with pytest.raises(GenerationError):
        erdos_renyi(30, 1e-4, seed=0)


def test_graph_rejects_self_loops():
    with pytest.raises(ValueError):
        Graph(3, {(1, 1)})


def test_duplicate_edges_collapse():
    g = Graph(3, [(0, 1), (1, 0), (1, 2)])
    assert g.sorted_edges() == [(0, 1), (1, 2)]


def test_ring3_weights():
    mix = metropolis_weights(build_topology("ring", 3))
    assert np.allclose(mix.W, 1.0 / 3.0, atol=1e-15)
    assert mix.eta < 1e-12


def test_ring4_weights():
    mix = metropolis_weights(build_topology("ring", 4))
    assert np.allclose(mix.W[0], [1 / 3, 1 / 3, 0, 1 / 3], atol=1e-15)
    assert mix.eta == pytest.approx(1 / 3, abs=1e-12)
    assert mix.eta == pytest.approx(eta_oracle(mix.W), abs=1e-12)


def test_complete5_weights():
    mix = metropolis_weights(build_topology("complete", 5))
    assert np.allclose(mix.W, 0.2, atol=1e-15)
    assert mix.eta < 1e-12


def test_averaging_matrix_constants():
    m = 6
    eta, c = spectral_constants(np.full((m, m), 1.0 / m))
    assert eta < 1e-12
    assert c == pytest.approx(2 * math.sqrt(2 * m), rel=1e-12)


def test_c_formula():
    # m = 16, eta = 0.5
    assert 2 * math.sqrt(32) / 0.5 == pytest.approx(22.627, abs=1e-3)


def test_identity_is_degenerate():
    with pytest.raises(DegenerateNetworkError):
        spectral_constants(np.eye(4))


def test_not_doubly_stochastic():
    W = np.array([[0.5, 0.5], [0.2, 0.8]])
    with pytest.raises(ValueError):
        spectral_constants(W)


def test_disconnected_rejected():
    with pytest.raises(ValueError):
        metropolis_weights(Graph(4, [(0, 1), (2, 3)]))


def test_support_matches_graph():
    g = build_topology("erdos_renyi", 10, p=0.3, seed=4)
    W = metropolis_weights(g).W
    adj = (g.adjacency() > 0) | np.eye(10, dtype=bool)
    assert np.array_equal(W > 0, adj)
    assert np.all(np.diag(W) > 0)


def test_config_and_label():
    mix = topology_from_config({"kind": "grid", "rows": 2, "cols": 4})
    assert mix.m == 8
    assert topology_label({"kind": "grid", "rows": 2, "cols": 4}) == "grid2x4"
    assert topology_label({"kind": "erdos_renyi", "p": 0.4}) == "er0.4"


def test_csv_export(tmp_path):
    mix = metropolis_weights(build_topology("ring", 5))
    mix.to_csv(tmp_path / "w.csv")
    assert np.array_equal(np.loadtxt(tmp_path / "w.csv", delimiter=","), mix.W)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.floats(0.3, 1.0), st.integers(0, 10_000))
def test_er_deterministic_and_stochastic(m, p, seed):
    g1 = erdos_renyi(m, p, seed)
    g2 = erdos_renyi(m, p, seed)
    assert g1.edges == g2.edges
    mix = metropolis_weights(g1)
    assert np.max(np.abs(mix.W.sum(axis=0) - 1)) <= 1e-12
    assert np.max(np.abs(mix.W.sum(axis=1) - 1)) <= 1e-12
    assert abs(mix.eta - eta_oracle(mix.W)) <= 1e-10
    assert mix.c == pytest.approx(2 * math.sqrt(2 * m) / (1 - mix.eta), rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 64), st.integers(1, 8), st.integers(0, 2**31))
def test_mixing_contraction(m, d, seed):
    mix = metropolis_weights(build_topology("ring", m))
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(m, d))
    dev = V - V.mean(axis=0)
    lhs = np.linalg.norm(mix.W @ V - V.mean(axis=0))
    assert lhs <= mix.eta * np.linalg.norm(dev) + 1e-10
