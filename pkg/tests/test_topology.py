import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom

from fedmix.errors import InputError
from fedmix.topology import (
    Graph,
    ResampledErdosRenyi,
    StaticSchedule,
    contraction_ratio,
    erdos_renyi,
    is_doubly_stochastic,
    make_schedule,
    metropolis_weights,
    ring_graph,
    second_eigenvalue_modulus,
    spectral_mixing_check,
)


def test_erdos_renyi_extremes():
    assert len(erdos_renyi(7, 1.0, 0).edges) == 21
    assert erdos_renyi(7, 0.0, 0).edges == set()


def test_erdos_renyi_edge_count_in_binomial_interval():
    lo, hi = binom.ppf(0.0005, 190, 0.5), binom.ppf(0.9995, 190, 0.5)
    assert 55 <= lo and hi <= 135
    for seed in range(10):
        assert lo <= len(erdos_renyi(20, 0.5, seed).edges) <= hi


def test_erdos_renyi_deterministic():
    assert erdos_renyi(15, 0.3, 4).edges == erdos_renyi(15, 0.3, 4).edges


def test_metropolis_examples():
    np.testing.assert_allclose(metropolis_weights(Graph(2, {(0, 1)})), [[0.5, 0.5], [0.5, 0.5]])
    W = metropolis_weights(Graph(3, {(0, 1)}))
    np.testing.assert_array_equal(W[2], [0, 0, 1])
    W = metropolis_weights(Graph(3, {(0, 1), (1, 2)}))
    np.testing.assert_allclose(W, [[2 / 3, 1 / 3, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 3, 2 / 3]])


def test_spectral_check_examples():
    T = 6
    ok, lam = spectral_mixing_check(np.full((T, T), 1 / T))
    assert ok and lam == pytest.approx(0.0, abs=1e-8)
    ok, lam = spectral_mixing_check(np.eye(T))
    assert ok and lam == pytest.approx(1.0, abs=1e-8)


def test_invalid_matrix_flagged_but_reported():
    W = np.array([[0.9, 0.2], [0.1, 0.8]])
    ok, lam = spectral_mixing_check(W)
    assert not ok and np.isfinite(lam)
    with pytest.raises(InputError):
        StaticSchedule(W)


def _connected_er(T, p, seed):
    while True:
        g = erdos_renyi(T, p, seed)
        if g.is_connected():
            return g
        seed += 1000


@pytest.mark.parametrize("seed", range(5))
def test_lambda2_matches_eigendecomposition(seed):
    W = metropolis_weights(_connected_er(12, 0.3, seed))
    ev = np.sort(np.abs(np.linalg.eigvalsh(W)))[::-1]
    lam = second_eigenvalue_modulus(W)
    assert lam < 1
    assert lam == pytest.approx(ev[1], abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 25), st.floats(0.05, 1.0), st.integers(0, 10_000))
def test_metropolis_always_doubly_stochastic(T, p, seed):
    W = metropolis_weights(erdos_renyi(T, p, seed))
    assert is_doubly_stochastic(W, tol=1e-9)
    assert np.all(np.diag(W) >= 0)


@pytest.mark.parametrize("seed", range(3))
def test_contraction_bound(seed):
    W = metropolis_weights(_connected_er(15, 0.4, seed))
    lam = second_eigenvalue_modulus(W)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        Xi = rng.normal(size=(4, 15))
        assert contraction_ratio(W, Xi) <= lam**2 + 1e-9


def test_products_stay_doubly_stochastic():
    sched = ResampledErdosRenyi(10, 0.4, seed=3)
    P = np.eye(10)
    for k in range(30):
        P = P @ sched.matrix(k)
        assert is_doubly_stochastic(P, tol=1e-8, symmetric=False)


def test_mixing_preserves_mean():
    W = metropolis_weights(ring_graph(9))
    Xi = np.random.default_rng(0).normal(size=(3, 9))
    np.testing.assert_allclose((Xi @ W).mean(axis=1), Xi.mean(axis=1), atol=1e-12)


def test_make_schedule_names():
    for name in ("complete", "identity", "ring", "erdos_renyi"):
        W = make_schedule(name, 8, seed=1).matrix(0)
        assert is_doubly_stochastic(W)
    with pytest.raises(InputError):
        make_schedule("star", 4)


def test_edge_list_round_trip(tmp_path):
    g = erdos_renyi(9, 0.5, 2)
    g.save(tmp_path / "g.txt")
    assert (tmp_path / "g.txt").read_text().splitlines()[0] == "9"
    h = Graph.load(tmp_path / "g.txt")
    assert h == g


def test_edge_list_errors(tmp_path):
    (tmp_path / "bad.txt").write_text("3\n0 1 2\n")
    with pytest.raises(InputError):
        Graph.load(tmp_path / "bad.txt")
    with pytest.raises(InputError):
        Graph(3, {(0, 5)})
