"""Training loops: FedEM, decentralized FedEM, FedAvg and local-only baselines.

Every loop is deterministic given ``cfg.rng_seed``: minibatches come from the
``("batches", client, round)`` stream, client sampling from
``("sampling", round)`` and initial banks from ``"init"``.  Client work inside
a round is independent, so it is fanned out to ``FEDMIX_THREADS`` workers and
joined in client order before aggregation.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, fields

import numpy as np

from . import em, kernels
from .errors import InputError
from .losses import LinearHypothesis, bank_weighted_gradients
from .metrics import mixture_accuracy
from .rng import stream
from .surrogate import aggregate, consensus_distance, mix
from .topology import is_doubly_stochastic

THREADS_ENV = "FEDMIX_THREADS"


@dataclass
class RoundLog:
    round: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    grad_norm_sq: float
    delta_pi: float
    consensus_dist: float | None = None

    def as_row(self):
        return ["" if v is None else (str(v) if isinstance(v, int) else "%.17g" % v) for v in astuple(self)]


LOG_HEADER = [f.name for f in fields(RoundLog)]


def write_round_logs(logs, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in logs:
            w.writerow(r.as_row())


def read_round_logs(path):
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader) != LOG_HEADER:
            raise InputError(f"{path}: unexpected header")
        for row in reader:
            vals = [int(row[0])] + [float(v) for v in row[1:7]]
            out.append(RoundLog(*vals, float(row[7]) if row[7] else None))
    return out


def worker_count(num_clients):
    """Workers from ``FEDMIX_THREADS``; 0 or unset means automatic.

    Automatic uses every core with the compiled kernel (it releases the GIL)
    and a single worker otherwise.
    """
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 0:
        raise InputError(f"{THREADS_ENV} must be >= 0")
    if n == 0:
        n = (os.cpu_count() or 1) if kernels.BACKEND == "compiled" else 1
    return max(1, min(n, num_clients))


def _fan_out(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _check_run(fed, M, rounds):
    if M < 1:
        raise InputError("M must be at least 1")
    if rounds < 0:
        raise InputError("rounds must be nonnegative")
    if len(fed) == 0 or fed.sizes("train").sum() == 0:
        raise InputError("federation has no training data")


def initial_bank(fed, M, seed):
    return em.ComponentBank.random(M, fed.loss, fed.dim, stream(seed, "init"))


def uniform_pis(T, M):
    return np.full((T, M), 1.0 / M)


def _posteriors(banks, pis, fed):
    return [
        em.e_step(b, p, c) if c.n_train else np.zeros((0, b.m_components))
        for b, p, c in zip(banks, pis, fed)
    ]


def _grad_norm_sq(bank, qs, fed):
    """Squared norm of the full gradient of the weighted objective w.r.t. the bank."""
    n = fed.sizes("train").sum()
    g = np.zeros_like(bank.thetas)
    for q, c in zip(qs, fed):
        if c.n_train:
            X, y = c.train
            g += bank_weighted_gradients(bank.thetas, X, y, q, bank.loss)
    return float(np.sum((g / n) ** 2))


def _delta_pi(new, old, omega):
    return float(omega @ em.kl(new, old))


def _evaluate(k, banks, pis, fed, grad_sq, dpi, consensus=None):
    train = mixture_accuracy(banks, pis, fed, "train")
    if fed.sizes("test").sum() > 0:
        test = mixture_accuracy(banks, pis, fed, "test")
        te_loss, te_acc = test.objective, test.weighted_accuracy
    else:
        te_loss = te_acc = float("nan")
    return RoundLog(k, train.objective, train.weighted_accuracy, te_loss, te_acc, grad_sq, dpi, consensus)


def _sample_clients(T, rate, seed, k):
    if not 0.0 < rate <= 1.0:
        raise InputError("sample_rate must lie in (0, 1]")
    size = math.ceil(rate * T)
    if size >= T:
        return np.arange(T)
    return np.sort(stream(seed, "sampling", k).choice(T, size=size, replace=False))


def train_fedem(fed, M, rounds, cfg, sample_rate=1.0, *, exact=False, bank=None):
    """Client-server federated EM.

    Returns ``(bank, pis, logs)`` with ``pis`` of shape ``(T, M)``.  With
    ``exact`` the local SGD and averaging are replaced by an exact joint
    M-step over the sampled clients (oracle mode).
    """
    _check_run(fed, M, rounds)
    T = len(fed)
    bank = initial_bank(fed, M, cfg.rng_seed) if bank is None else bank.copy()
    pis = uniform_pis(T, M)
    omega = fed.weights("train")
    rate = cfg.round_rate(rounds)
    workers = worker_count(T)
    logs = []
    for k in range(1, rounds + 1):
        qs = _posteriors([bank] * T, pis, fed)
        grad_sq = _grad_norm_sq(bank, qs, fed)
        sampled = [t for t in _sample_clients(T, sample_rate, cfg.rng_seed, k) if fed[t].n_train]
        old = pis.copy()
        for t in sampled:
            pis[t] = em.m_step_pi(qs[t])
        if exact:
            bank = em.exact_m_step_theta(bank, [qs[t] for t in sampled], [fed[t] for t in sampled])
        elif sampled:

            def client(t, bank=bank, k=k):
                rng = stream(cfg.rng_seed, "batches", t, k)
                return em.local_sgd_theta(bank, qs[t], fed[t], cfg, rng, lr=rate).thetas

            local = _fan_out(client, sampled, workers)
            w = omega[sampled]
            bank = bank.copy(aggregate(w / w.sum(), local))
        logs.append(_evaluate(k, bank, pis, fed, grad_sq, _delta_pi(pis, old, omega)))
    return bank, pis, logs


def train_fedavg(fed, rounds, cfg, sample_rate=1.0):
    """One shared model; the ``M = 1`` case of ``train_fedem``."""
    bank, _, logs = train_fedem(fed, 1, rounds, cfg, sample_rate)
    return LinearHypothesis(bank.thetas[0]), logs


def train_local(fed, rounds, cfg):
    """Independent SGD on every client from a shared initial model, no communication.

    Each round runs ``cfg.local_steps`` steps, so a client takes ``rounds * J``
    steps in total.  Returns ``(hypotheses, logs)``.
    """
    _check_run(fed, 1, rounds)
    T = len(fed)
    banks = [initial_bank(fed, 1, cfg.rng_seed)] * T
    pis = np.ones((T, 1))
    omega = fed.weights("train")
    rate = cfg.round_rate(rounds)
    workers = worker_count(T)
    logs = []
    for k in range(1, rounds + 1):
        qs = [np.ones((c.n_train, 1)) for c in fed]
        grad_sq = sum(_grad_norm_sq(b, [q], fed.subset([t])) * w**2 for t, (b, q, w) in enumerate(zip(banks, qs, omega)))

        def client(t, banks=banks, k=k):
            rng = stream(cfg.rng_seed, "batches", t, k)
            return em.local_sgd_theta(banks[t], qs[t], fed[t], cfg, rng, lr=rate)

        banks = _fan_out(client, list(range(T)), workers)
        logs.append(_evaluate(k, banks, pis, fed, float(grad_sq), 0.0))
    return [LinearHypothesis(b.thetas[0]) for b in banks], logs


def train_dfedem(fed, M, rounds, cfg, schedule, *, shared_init=False):
    """Fully decentralized federated EM.

    Every client keeps its own bank, runs its E-step and pi-update against it,
    takes local steps scaled by ``n_t / n`` and then averages banks with its
    neighbours through ``schedule``.  Banks start from independent random draws
    unless ``shared_init`` is set.  Returns ``(banks, pis, logs)``.
    """
    _check_run(fed, M, rounds)
    T = len(fed)
    if schedule.num_nodes != T:
        raise InputError(f"schedule has {schedule.num_nodes} nodes, federation has {T} clients")
    if shared_init:
        banks = [initial_bank(fed, M, cfg.rng_seed)] * T
    else:
        banks = [em.ComponentBank.random(M, fed.loss, fed.dim, stream(cfg.rng_seed, "init", t)) for t in range(T)]
    pis = uniform_pis(T, M)
    omega = fed.weights("train")
    rate = cfg.round_rate(rounds)
    workers = worker_count(T)
    logs = []
    for k in range(1, rounds + 1):
        W = schedule.matrix(k - 1)
        if not is_doubly_stochastic(W):
            raise InputError(f"round {k}: mixing matrix is not symmetric doubly stochastic")
        qs = _posteriors(banks, pis, fed)
        mean_bank = banks[0].copy(np.mean([b.thetas for b in banks], axis=0))
        grad_sq = _grad_norm_sq(mean_bank, _posteriors([mean_bank] * T, pis, fed), fed)
        old = pis.copy()
        for t in range(T):
            if fed[t].n_train:
                pis[t] = em.m_step_pi(qs[t])

        def client(t, banks=banks, k=k):
            rng = stream(cfg.rng_seed, "batches", t, k)
            return em.local_sgd_theta(banks[t], qs[t], fed[t], cfg, rng, lr=rate, step_scale=omega[t]).thetas

        half = _fan_out(client, list(range(T)), workers)
        banks = [banks[0].copy(th) for th in mix(W, half)]
        dist = consensus_distance([b.thetas for b in banks])
        logs.append(_evaluate(k, banks, pis, fed, grad_sq, _delta_pi(pis, old, omega), dist))
    return banks, pis, logs


def personalize_unseen(bank, data):
    """Mixture weights for a new client from one E-step with the bank frozen.

    A client without training samples keeps the uniform prior.
    """
    uniform = np.full(bank.m_components, 1.0 / bank.m_components)
    if data.dim != bank.dim:
        raise InputError(f"client has d={data.dim}, bank expects d={bank.dim}")
    if data.n_train == 0:
        return uniform
    return em.m_step_pi(em.e_step(bank, uniform, data))
