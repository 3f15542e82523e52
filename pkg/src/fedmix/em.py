"""EM updates for a mixture of linear components.

The mixture log-likelihood of a sample is ``log sum_m pi_m exp(-l(theta_m; s))``
(constants dropped).  E-steps are computed in log space, so a zero mixture
weight gives exactly zero posterior mass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import rel_entr, xlogy

from . import kernels
from .errors import ConvergenceError, InputError
from .losses import LinearHypothesis, LossKind, bank_losses, bank_weighted_gradients

SIMPLEX_TOL = 1e-9


@dataclass
class ComponentBank:
    """``M`` linear components sharing a loss kind and feature dimension."""

    thetas: np.ndarray
    loss: LossKind
    dim: int

    def __post_init__(self):
        self.thetas = np.array(np.atleast_2d(self.thetas), dtype=float)
        if self.thetas.shape[1] != self.loss.param_size(self.dim):
            raise InputError(
                f"component length {self.thetas.shape[1]} does not fit {self.loss} with d={self.dim}"
            )
        if not np.all(np.isfinite(self.thetas)):
            raise InputError("component parameters must be finite")

    @property
    def m_components(self):
        return len(self.thetas)

    @property
    def components(self):
        return [LinearHypothesis(t) for t in self.thetas]

    def copy(self, thetas=None):
        return ComponentBank(self.thetas if thetas is None else thetas, self.loss, self.dim)

    @classmethod
    def random(cls, m, loss, dim, rng):
        """Entries i.i.d. uniform on ``[-1/sqrt(d), 1/sqrt(d)]``."""
        bound = 1.0 / math.sqrt(dim)
        return cls(rng.uniform(-bound, bound, size=(m, loss.param_size(dim))), loss, dim)


@dataclass(frozen=True)
class SolverConfig:
    """Local solver settings.

    With ``decay`` off, ``learning_rate`` is the per-round step budget ``eta``
    and each of the ``local_steps`` SGD steps uses ``eta / J``.  With ``decay``
    on, ``learning_rate`` plays the role of ``a0`` and ``eta = a0 / sqrt(K)``.
    """

    local_steps: int = 1
    batch_size: int = 32
    learning_rate: float = 0.1
    rng_seed: int = 0
    decay: bool = False

    def __post_init__(self):
        if self.local_steps < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise InputError("local_steps >= 0, batch_size >= 1 and learning_rate > 0 required")

    def round_rate(self, rounds):
        if self.decay:
            return self.learning_rate / math.sqrt(max(rounds, 1))
        return self.learning_rate

    def step_size(self, rounds=1):
        return self.round_rate(rounds) / max(self.local_steps, 1)


def _arrays(data, split="train"):
    if isinstance(data, tuple):
        X, y = data
        return np.atleast_2d(np.asarray(X, dtype=float)), np.asarray(y, dtype=float)
    return data.split(split)


def _check(bank, pi, X):
    if X.shape[1] != bank.dim:
        raise InputError(f"data has d={X.shape[1]}, bank expects d={bank.dim}")
    if pi is not None:
        pi = np.asarray(pi, dtype=float)
        if pi.shape != (bank.m_components,):
            raise InputError(f"mixture weights have shape {pi.shape}, expected ({bank.m_components},)")
    return pi


def _log(pi):
    with np.errstate(divide="ignore"):
        return np.log(pi)


def logsumexp_rows(a):
    """Row-wise ``log sum exp`` of an ``(n, M)`` table; rows of ``-inf`` give ``-inf``."""
    mx = np.max(a, axis=1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return (mx + np.log(np.exp(a - mx).sum(axis=1, keepdims=True)))[:, 0]


def log_joint(bank, pi, X, y):
    """``log pi_m - l(theta_m; s_i)`` for every sample and component."""
    return _log(pi)[None, :] - bank_losses(bank.thetas, X, y, bank.loss)


def e_step(bank, pi, data, split="train"):
    """Posterior over components for every sample, ``(n, M)``."""
    X, y = _arrays(data, split)
    pi = _check(bank, pi, X)
    lj = log_joint(bank, pi, X, y)
    return np.exp(lj - logsumexp_rows(lj)[:, None])


def m_step_pi(q):
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or len(q) == 0:
        raise InputError("posterior table must be a non-empty (n, M) matrix")
    pi = q.mean(axis=0)
    return pi / pi.sum()


def mixture_nll(bank, pi, data, split="train"):
    """Per-sample negative mixture log-likelihood, ``(n,)``."""
    X, y = _arrays(data, split)
    pi = _check(bank, pi, X)
    return -logsumexp_rows(log_joint(bank, pi, X, y))


def client_objective(bank, pi, data, split="train"):
    """Mean negative mixture log-likelihood of one client."""
    nll = mixture_nll(bank, pi, data, split)
    return float(nll.mean()) if len(nll) else 0.0


def surrogate_value(bank, pi, q, data, split="train"):
    """EM surrogate anchored at the posterior ``q``.

    ``mean_i sum_m q_im * (l(theta_m; s_i) - log pi_m + log q_im)``; it majorizes
    ``client_objective`` with equality when ``q`` is the posterior at ``(bank, pi)``.
    """
    X, y = _arrays(data, split)
    pi = _check(bank, pi, X)
    q = np.asarray(q, dtype=float)
    L = bank_losses(bank.thetas, X, y, bank.loss)
    per = (q * L).sum(axis=1) - xlogy(q, pi[None, :]).sum(axis=1) + xlogy(q, q).sum(axis=1)
    return float(per.mean())


def kl(p, q):
    """``KL(p || q)`` for probability vectors (or row-wise for matrices)."""
    return rel_entr(np.asarray(p, dtype=float), np.asarray(q, dtype=float)).sum(axis=-1)


def surrogate_gap(bank, pi, q, data, split="train"):
    """Average KL between ``q`` and the exact posterior at ``(bank, pi)``."""
    post = e_step(bank, pi, data, split)
    return float(kl(q, post).mean())


def local_sgd_theta(bank, q, data, cfg, rng=None, *, lr=None, step_scale=1.0, backend=None):
    """``cfg.local_steps`` minibatch SGD steps on every component.

    Step ``j`` samples one batch ``I`` (shared by all components) and applies
    ``theta_m -= step * mean_{i in I} q[i, m] * grad l(theta_m; s_i)``.
    ``lr`` overrides the per-round rate, ``step_scale`` multiplies the step.
    """
    X, y = _arrays(data)
    q = np.asarray(q, dtype=float)
    if q.shape != (len(y), bank.m_components):
        raise InputError(f"posterior table shape {q.shape} does not match ({len(y)}, {bank.m_components})")
    if cfg.local_steps == 0 or len(y) == 0:
        return bank.copy()
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    rate = cfg.learning_rate if lr is None else lr
    step = step_scale * rate / cfg.local_steps
    batches = kernels.draw_batches(rng, len(y), cfg.batch_size, cfg.local_steps)
    return bank.copy(kernels.sgd_steps(bank.thetas, X, y, q, batches, step, bank.loss, backend))


def _weighted_objective(theta, X, y, w, loss, total):
    return float(w @ bank_losses(theta[None, :], X, y, loss)[:, 0]) / total


def exact_m_step_theta(bank, all_q, all_data, tol=1e-6, max_iter=10_000):
    """Minimize ``sum_t sum_i q_t[i, m] * l(theta; s_t^i)`` for every component.

    Full-batch gradient descent with Armijo backtracking, started from the
    current bank.  The objective is normalized by the total sample count, and
    ``tol`` applies to the norm of that normalized gradient.
    """
    if len(all_q) != len(all_data):
        raise InputError("need one posterior table per client")
    X = np.vstack([_arrays(d)[0] for d in all_data])
    y = np.concatenate([_arrays(d)[1] for d in all_data])
    Q = np.vstack([np.asarray(q, dtype=float) for q in all_q])
    if X.shape[1] != bank.dim or Q.shape != (len(y), bank.m_components):
        raise InputError("posterior tables and datasets do not match the bank")
    total = len(y)
    out = bank.thetas.copy()
    for m in range(bank.m_components):
        w = Q[:, m]
        if not np.any(w > 0):
            continue
        theta = out[m].copy()
        step = 1.0
        val = _weighted_objective(theta, X, y, w, bank.loss, total)
        for _ in range(max_iter):
            g = bank_weighted_gradients(theta[None, :], X, y, w[:, None], bank.loss)[0] / total
            gn = float(np.linalg.norm(g))
            if gn <= tol:
                break
            gg = gn * gn
            while True:
                cand = theta - step * g
                cval = _weighted_objective(cand, X, y, w, bank.loss, total)
                if cval <= val - 0.5 * step * gg:
                    break
                step *= 0.5
                if step < 1e-20:
                    raise ConvergenceError(f"line search stalled on component {m}", gn)
            theta, val = cand, cval
            step *= 2.0
        else:
            g = bank_weighted_gradients(theta[None, :], X, y, w[:, None], bank.loss)[0] / total
            gn = float(np.linalg.norm(g))
            if gn > tol:
                raise ConvergenceError(
                    f"component {m}: gradient norm {gn:.3e} > {tol:.1e} after {max_iter} steps", gn
                )
        out[m] = theta
    return bank.copy(out)


def federated_objective(bank, pis, datasets, split="train"):
    """``sum_t (n_t / n) f_t`` with a shared bank, or one bank per client."""
    banks = bank if isinstance(bank, (list, tuple)) else [bank] * len(datasets)
    sizes = np.array([len(_arrays(d, split)[1]) for d in datasets], dtype=float)
    if sizes.sum() == 0:
        return 0.0
    vals = [client_objective(b, p, d, split) for b, p, d in zip(banks, pis, datasets)]
    return float(np.dot(sizes / sizes.sum(), vals))


def run_exact_em(bank, pis, datasets, iterations, tol=1e-8):
    """Centralized EM with exact M-steps.

    Returns ``(bank, pis, objectives)`` where ``objectives[0]`` is the starting
    value and ``objectives[k]`` the value after iteration ``k``.
    """
    pis = [np.asarray(p, dtype=float) for p in pis]
    history = [federated_objective(bank, pis, datasets)]
    for _ in range(iterations):
        qs = [e_step(bank, p, d) for p, d in zip(pis, datasets)]
        pis = [m_step_pi(q) for q in qs]
        bank = exact_m_step_theta(bank, qs, datasets, tol=tol)
        history.append(federated_objective(bank, pis, datasets))
    return bank, pis, history
