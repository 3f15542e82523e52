import numpy as np
import pytest

from fedmix import em
from fedmix.data import ClientDataset, Federation
from fedmix.em import ComponentBank, SolverConfig
from fedmix.errors import InputError
from fedmix.losses import LossKind
from fedmix.rng import stream
from fedmix.synth import SyntheticConfig, generate
from fedmix.topology import make_schedule
from fedmix.training import (
    LOG_HEADER,
    personalize_unseen,
    read_round_logs,
    train_dfedem,
    train_fedavg,
    train_fedem,
    train_local,
    worker_count,
    write_round_logs,
)

from .conftest import random_dataset

CFG = SolverConfig(local_steps=3, batch_size=8, learning_rate=0.5, rng_seed=1)


@pytest.fixture(scope="module")
def small_fed():
    fed, _ = generate(SyntheticConfig(T=8, M=2, d=4, seed=2, max_size=120))
    return fed


def test_single_component_is_fedavg(small_fed):
    for rate in (1.0, 0.5):
        bank, pis, logs = train_fedem(small_fed, 1, 5, CFG, sample_rate=rate)
        h, logs2 = train_fedavg(small_fed, 5, CFG, sample_rate=rate)
        np.testing.assert_array_equal(bank.thetas[0], h.theta)
        assert np.all(pis == 1.0)
        assert [r.as_row() for r in logs] == [r.as_row() for r in logs2]


def test_zero_rounds_return_initialization(small_fed):
    bank, pis, logs = train_fedem(small_fed, 3, 0, CFG)
    init = ComponentBank.random(3, small_fed.loss, small_fed.dim, stream(1, "init"))
    np.testing.assert_array_equal(bank.thetas, init.thetas)
    np.testing.assert_array_equal(pis, np.full((8, 3), 1 / 3))
    assert logs == []
    h, _ = train_fedavg(small_fed, 0, CFG)
    hs, _ = train_local(small_fed, 0, CFG)
    assert np.all(hs[3].theta == h.theta)


def test_initialization_range(small_fed):
    bank, _, _ = train_fedem(small_fed, 3, 0, CFG)
    assert np.all(np.abs(bank.thetas) <= 1 / np.sqrt(4))


def test_round_is_weighted_mean_of_local_solves(small_fed):
    bank, pis, _ = train_fedem(small_fed, 2, 1, CFG)
    b0 = ComponentBank.random(2, small_fed.loss, small_fed.dim, stream(1, "init"))
    locals_, qs = [], []
    for t, c in enumerate(small_fed):
        q = em.e_step(b0, np.full(2, 0.5), c)
        qs.append(q)
        locals_.append(em.local_sgd_theta(b0, q, c, CFG, stream(1, "batches", t, 1)).thetas)
    w = small_fed.weights()
    np.testing.assert_allclose(bank.thetas, sum(wt * th for wt, th in zip(w, locals_)), atol=1e-12)
    np.testing.assert_allclose(pis, [q.mean(axis=0) for q in qs], atol=1e-15)


def test_sampling_keeps_stale_weights(small_fed):
    _, pis1, _ = train_fedem(small_fed, 2, 1, CFG, sample_rate=0.25)
    sampled = np.sort(stream(1, "sampling", 1).choice(8, size=2, replace=False))
    for t in range(8):
        if t in sampled:
            assert not np.allclose(pis1[t], 0.5)
        else:
            np.testing.assert_array_equal(pis1[t], [0.5, 0.5])


def test_logs_are_well_formed(small_fed):
    _, _, logs = train_fedem(small_fed, 2, 6, CFG)
    assert [r.round for r in logs] == list(range(1, 7))
    for r in logs:
        vals = [r.train_loss, r.train_acc, r.test_loss, r.test_acc, r.grad_norm_sq, r.delta_pi]
        assert np.all(np.isfinite(vals))
        assert r.delta_pi >= 0 and r.grad_norm_sq >= 0 and r.consensus_dist is None
        assert 0 <= r.train_acc <= 1


def test_grad_norm_matches_finite_differences(small_fed):
    _, _, logs = train_fedem(small_fed, 2, 1, CFG)
    b0 = ComponentBank.random(2, small_fed.loss, small_fed.dim, stream(1, "init"))
    pis = [np.full(2, 0.5)] * 8

    def f(th):
        return em.federated_objective(b0.copy(th), pis, small_fed.clients)

    g = np.zeros_like(b0.thetas)
    for idx in np.ndindex(g.shape):
        e = np.zeros_like(g)
        e[idx] = 1e-6
        g[idx] = (f(b0.thetas + e) - f(b0.thetas - e)) / 2e-6
    assert logs[0].grad_norm_sq == pytest.approx(float(np.sum(g**2)), rel=1e-6)


def test_oracle_mode_is_monotone(small_fed):
    _, _, logs = train_fedem(small_fed, 2, 15, CFG, exact=True)
    vals = [r.train_loss for r in logs]
    assert all(b <= a + 1e-7 for a, b in zip(vals, vals[1:]))


def test_objective_trend():
    fed, _ = generate(SyntheticConfig(T=20, M=3, d=6, seed=4, max_size=300))
    _, _, logs = train_fedem(fed, 3, 40, SolverConfig(local_steps=5, batch_size=16, learning_rate=0.5))
    vals = [r.train_loss for r in logs][5:]
    assert all(b <= a + 1e-2 for a, b in zip(vals, vals[1:]))
    assert vals[-1] < vals[0]


def test_one_client_fedavg_is_local_sgd(small_fed):
    one = small_fed.subset([3])
    h, _ = train_fedavg(one, 4, CFG)
    hs, _ = train_local(one, 4, CFG)
    np.testing.assert_array_equal(h.theta, hs[0].theta)


def test_local_single_step_by_hand():
    loss = LossKind.squared()
    c = ClientDataset(np.array([[1.0, 2.0]]), np.array([3.0]))
    fed = Federation([c], loss)
    cfg = SolverConfig(local_steps=1, batch_size=4, learning_rate=0.1, rng_seed=0)
    (h,), _ = train_local(fed, 1, cfg)
    theta0 = ComponentBank.random(1, loss, 2, stream(0, "init")).thetas[0]
    # squared loss (y - <x, theta>)^2 / 2, gradient (pred - y) * x
    resid = theta0 @ [1.0, 2.0] - 3.0
    np.testing.assert_allclose(h.theta, theta0 - 0.1 * resid * np.array([1.0, 2.0]), atol=1e-15)


def test_errors(small_fed):
    with pytest.raises(InputError):
        train_fedem(small_fed, 0, 1, CFG)
    with pytest.raises(InputError):
        train_fedem(small_fed, 2, 1, CFG, sample_rate=0.0)
    with pytest.raises(InputError):
        train_dfedem(small_fed, 2, 1, CFG, make_schedule("ring", 5))


def test_dfedem_identity_is_independent_local_em(small_fed):
    banks, pis, logs = train_dfedem(small_fed, 2, 4, CFG, make_schedule("identity", 8))
    omega = small_fed.weights()
    for t, c in enumerate(small_fed):
        b = ComponentBank.random(2, small_fed.loss, small_fed.dim, stream(1, "init", t))
        pi = np.full(2, 0.5)
        for k in range(1, 5):
            q = em.e_step(b, pi, c)
            pi = em.m_step_pi(q)
            b = em.local_sgd_theta(b, q, c, CFG, stream(1, "batches", t, k), step_scale=omega[t])
        np.testing.assert_array_equal(banks[t].thetas, b.thetas)
        np.testing.assert_array_equal(pis[t], pi)
    assert all(r.consensus_dist > 0 for r in logs)


def test_dfedem_complete_mixing_first_round(small_fed):
    banks, _, logs = train_dfedem(small_fed, 2, 1, CFG, make_schedule("complete", 8), shared_init=True)
    b0 = ComponentBank.random(2, small_fed.loss, small_fed.dim, stream(1, "init"))
    omega = small_fed.weights()
    half = []
    for t, c in enumerate(small_fed):
        q = em.e_step(b0, np.full(2, 0.5), c)
        half.append(em.local_sgd_theta(b0, q, c, CFG, stream(1, "batches", t, 1), step_scale=omega[t]).thetas)
    for b in banks:
        np.testing.assert_allclose(b.thetas, np.mean(half, axis=0), atol=1e-12)
    assert logs[0].consensus_dist < 1e-24


def test_dfedem_ring_consensus():
    fed, _ = generate(SyntheticConfig(T=10, M=2, d=4, seed=6, max_size=150))
    cfg = SolverConfig(local_steps=2, batch_size=16, learning_rate=2.0, rng_seed=0)
    _, _, logs = train_dfedem(fed, 2, 150, cfg, make_schedule("ring", 10))
    assert logs[-1].consensus_dist <= 0.01 * logs[0].consensus_dist


def test_threads_do_not_change_results(small_fed, monkeypatch):
    monkeypatch.setenv("FEDMIX_THREADS", "1")
    a = train_fedem(small_fed, 2, 3, CFG)[0].thetas
    monkeypatch.setenv("FEDMIX_THREADS", "4")
    assert worker_count(8) == 4
    b = train_fedem(small_fed, 2, 3, CFG)[0].thetas
    np.testing.assert_array_equal(a, b)
    monkeypatch.setenv("FEDMIX_THREADS", "many")
    with pytest.raises(InputError):
        worker_count(8)


def test_round_log_csv_round_trip(small_fed, tmp_path):
    _, _, logs = train_dfedem(small_fed, 2, 3, CFG, make_schedule("ring", 8))
    _, _, logs_cs = train_fedem(small_fed, 2, 2, CFG)
    write_round_logs(logs, tmp_path / "a.csv")
    write_round_logs(logs_cs, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == ",".join(LOG_HEADER)
    assert read_round_logs(tmp_path / "a.csv") == logs
    assert read_round_logs(tmp_path / "b.csv") == logs_cs
    assert (tmp_path / "b.csv").read_text().splitlines()[1].endswith(",")


def test_personalize_pure_component():
    fed, truth = generate(SyntheticConfig(T=6, M=3, d=8, seed=3, label_mode="hard_cluster", theta_scale=4.0, min_size=600))
    bank = ComponentBank(truth.theta_star, fed.loss, 8)
    for t, c in enumerate(fed):
        assert np.argmax(personalize_unseen(bank, c)) == truth.clusters[t]


def test_personalize_contract(rng):
    loss = LossKind.logistic()
    data = random_dataset(rng, loss, 30, 3)
    bank = ComponentBank(rng.normal(size=(3, 3)), loss, 3)
    pi = personalize_unseen(bank, data)
    np.testing.assert_allclose(pi, em.e_step(bank, np.full(3, 1 / 3), data).mean(axis=0), atol=1e-12)
    one = ComponentBank(rng.normal(size=(1, 3)), loss, 3)
    np.testing.assert_array_equal(personalize_unseen(one, data), [1.0])
    empty = data.with_train_subset(np.zeros(0, dtype=int))
    np.testing.assert_array_equal(personalize_unseen(bank, empty), np.full(3, 1 / 3))
