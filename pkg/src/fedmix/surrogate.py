"""Federated surrogate optimization.

Each client ``t`` owns an objective ``f_t(u, v_t)`` where ``u`` is shared and
``v_t`` is private.  At every round a client builds a *partial first-order
surrogate* ``g_t`` anchored at its current point, minimizes it exactly in
``v`` and takes ``J`` stochastic-gradient steps on it in ``u``.  The server
(client-server loop) or the neighbours (decentralized loop) then average the
``u`` iterates.

A surrogate must satisfy, for every ``u`` and ``v``:

1. ``surrogate_value(s, u, v) >= true_value(u, v)``;
2. equality of values and ``u``-gradients at the anchor;
3. ``surrogate_value(s, u, v0) - surrogate_value(s, u, v*) == divergence(v0, v*)``
   with ``v* = minimize_v(s, u)``.

``FedEMObjective`` and ``QuadraticObjective`` implement this contract.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from . import em, kernels
from ._sgd_py import minibatch_gradient
from .errors import ContractViolation, InputError
from .losses import bank_weighted_gradients
from .rng import stream
from .topology import is_doubly_stochastic

MAJORIZATION_SLACK = 1e-8


class SurrogateObjective(ABC):
    @abstractmethod
    def anchor(self, u, v):
        """State of the surrogate anchored at ``(u, v)``."""

    @abstractmethod
    def surrogate_value(self, state, u, v): ...

    @abstractmethod
    def surrogate_grad_u(self, state, u, v): ...

    @abstractmethod
    def stochastic_grad_u(self, state, u, v, rng): ...

    @abstractmethod
    def minimize_v(self, state, u): ...

    @abstractmethod
    def true_value(self, u, v): ...

    @abstractmethod
    def divergence(self, v0, v1):
        """``d_V(v0, v1) >= 0``, zero iff the arguments are equal."""


class FedEMObjective(SurrogateObjective):
    """One client's negative mixture log-likelihood; ``u`` is the ``(M, P)`` bank, ``v`` is ``pi``."""

    def __init__(self, data, loss, m_components, batch_size):
        self.data = data
        self.loss = loss
        self.m = m_components
        self.batch_size = batch_size
        self.X, self.y = data.train

    def _bank(self, u):
        return em.ComponentBank(u, self.loss, self.X.shape[1])

    def anchor(self, u, v):
        return em.e_step(self._bank(u), v, self.data)

    def surrogate_value(self, state, u, v):
        return em.surrogate_value(self._bank(u), v, state, self.data)

    def surrogate_grad_u(self, state, u, v):
        return bank_weighted_gradients(u, self.X, self.y, state, self.loss) / len(self.y)

    def stochastic_grad_u(self, state, u, v, rng):
        idx = kernels.draw_batch(rng, len(self.y), self.batch_size)
        return minibatch_gradient(u, self.X, self.y, state, idx, self.loss)

    def minimize_v(self, state, u):
        return em.m_step_pi(state)

    def true_value(self, u, v):
        return em.client_objective(self._bank(u), v, self.data)

    def divergence(self, v0, v1):
        # g(u, v0) - g(u, v*) = KL(v* || v0)
        return float(em.kl(v1, v0))


class QuadraticObjective(SurrogateObjective):
    """``f(u) = ||u - c||^2 / 2``; its own surrogate, no private variable."""

    def __init__(self, center, noise=0.0):
        self.c = np.asarray(center, dtype=float)
        self.noise = noise

    def anchor(self, u, v):
        return None

    def surrogate_value(self, state, u, v):
        return self.true_value(u, v)

    def surrogate_grad_u(self, state, u, v):
        return u - self.c

    def stochastic_grad_u(self, state, u, v, rng):
        g = u - self.c
        if self.noise:
            g = g + self.noise * rng.normal(size=g.shape)
        return g

    def minimize_v(self, state, u):
        return np.zeros(0)

    def true_value(self, u, v):
        return 0.5 * float(np.sum((u - self.c) ** 2))

    def divergence(self, v0, v1):
        return 0.0


def aggregate(weights, arrays):
    """``sum_t weights[t] * arrays[t]``."""
    return np.tensordot(np.asarray(weights, dtype=float), np.stack(arrays), axes=1)


def mix(W, arrays):
    """Gossip step: node ``t`` receives ``sum_s W[s, t] * arrays[s]``."""
    stacked = np.stack(arrays)
    out = np.tensordot(np.asarray(W, dtype=float).T, stacked, axes=1)
    return list(out)


def consensus_distance(arrays):
    stacked = np.stack(arrays)
    return float(np.sum((stacked - stacked.mean(axis=0)) ** 2))


def check_weights(weights, n):
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0):
        raise InputError(f"need {n} nonnegative federation weights")
    return w


def local_solve(obj, state, u, v, cfg, rng, rate, scale=1.0):
    """``cfg.local_steps`` SGD steps on the surrogate, starting from ``u``."""
    step = scale * rate / cfg.local_steps if cfg.local_steps else 0.0
    for _ in range(cfg.local_steps):
        u = u - step * obj.stochastic_grad_u(state, u, v, rng)
    return u


def _audit(obj, state, u, v):
    g, f = obj.surrogate_value(state, u, v), obj.true_value(u, v)
    if g < f - MAJORIZATION_SLACK:
        raise ContractViolation(f"surrogate below objective by {f - g:.3e}")


@dataclass
class SurrogateRun:
    u: object
    v: list
    log: list = field(default_factory=list)


def run_federated_surrogate(objectives, u0, v0s, weights, rounds, cfg, audit=False):
    """Client-server loop.  ``log[k]`` holds the weighted objective after round ``k + 1``."""
    T = len(objectives)
    omega = check_weights(weights, T)
    if np.abs(omega.sum() - 1.0) > 1e-9:
        raise InputError("client-server weights must sum to 1")
    u = np.array(u0, dtype=float)
    vs = [np.asarray(v, dtype=float) for v in v0s]
    rate = cfg.round_rate(rounds)
    log = []
    for k in range(1, rounds + 1):
        locals_ = []
        for t, obj in enumerate(objectives):
            state = obj.anchor(u, vs[t])
            vs[t] = obj.minimize_v(state, u)
            ut = local_solve(obj, state, u, vs[t], cfg, stream(cfg.rng_seed, "batches", t, k), rate)
            if audit:
                _audit(obj, state, ut, vs[t])
            locals_.append(ut)
        u = aggregate(omega, locals_)
        log.append({"round": k, "objective": float(sum(w * o.true_value(u, v) for w, o, v in zip(omega, objectives, vs)))})
    return SurrogateRun(u, vs, log)


def run_decentralized_surrogate(objectives, u0s, v0s, weights, schedule, rounds, cfg, audit=False):
    """Fully decentralized loop: local steps scaled by ``weights[t]``, then gossip.

    ``log[k]`` holds the weighted objective at the average iterate and the
    consensus distance after round ``k + 1``.
    """
    T = len(objectives)
    omega = check_weights(weights, T)
    us = [np.array(u, dtype=float) for u in u0s]
    vs = [np.asarray(v, dtype=float) for v in v0s]
    rate = cfg.round_rate(rounds)
    log = []
    for k in range(1, rounds + 1):
        W = schedule.matrix(k - 1)
        if not is_doubly_stochastic(W):
            raise InputError(f"round {k}: mixing matrix is not symmetric doubly stochastic")
        half = []
        for t, obj in enumerate(objectives):
            state = obj.anchor(us[t], vs[t])
            vs[t] = obj.minimize_v(state, us[t])
            ut = local_solve(obj, state, us[t], vs[t], cfg, stream(cfg.rng_seed, "batches", t, k), rate, omega[t])
            if audit:
                _audit(obj, state, ut, vs[t])
            half.append(ut)
        us = mix(W, half)
        ubar = np.mean(np.stack(us), axis=0)
        log.append(
            {
                "round": k,
                "objective": float(sum(w * o.true_value(ubar, v) for w, o, v in zip(omega, objectives, vs))),
                "consensus": consensus_distance(us),
            }
        )
    return SurrogateRun(us, vs, log)
