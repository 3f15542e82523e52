"""Communication graphs and gossip mixing matrices."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-9


@dataclass
class Graph:
    """Simple undirected graph on nodes ``0..num_nodes-1``."""

    num_nodes: int
    edges: set = field(default_factory=set)

    def __post_init__(self):
        if self.num_nodes < 1:
            raise InputError("a graph needs at least one node")
        clean = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise InputError(f"edge ({i}, {j}) outside 0..{self.num_nodes - 1}")
            if i != j:
                clean.add((min(i, j), max(i, j)))
        self.edges = clean

    def adjacency(self):
        A = np.zeros((self.num_nodes, self.num_nodes))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A

    def degrees(self):
        return self.adjacency().sum(axis=1).astype(int)

    def is_connected(self):
        seen, stack = {0}, [0]
        nbrs = {i: [] for i in range(self.num_nodes)}
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        while stack:
            for j in nbrs[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.num_nodes

    def save(self, path):
        lines = [str(self.num_nodes)] + [f"{i} {j}" for i, j in sorted(self.edges)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        text = Path(path).read_text(encoding="utf-8").split("\n")
        rows = [r.strip() for r in text if r.strip()]
        if not rows:
            raise InputError(f"{path}: empty edge list")
        try:
            edges = [tuple(int(v) for v in r.split()) for r in rows[1:]]
            if any(len(e) != 2 for e in edges):
                raise ValueError("edge lines need two node ids")
            return cls(int(rows[0]), set(edges))
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from None


def complete_graph(T):
    return Graph(T, {(i, j) for i in range(T) for j in range(i + 1, T)})


def ring_graph(T):
    return Graph(T, {(i, (i + 1) % T) for i in range(T)} if T > 1 else set())


def empty_graph(T):
    return Graph(T)


def erdos_renyi(T, p_edge, seed):
    """Each unordered pair is an edge independently with probability ``p_edge``."""
    if not 0.0 <= p_edge <= 1.0:
        raise InputError("p_edge must lie in [0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    iu, ju = np.triu_indices(T, k=1)
    keep = rng.random(len(iu)) < p_edge
    return Graph(T, set(zip(iu[keep].tolist(), ju[keep].tolist())))


def metropolis_weights(g):
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on edges."""
    deg = g.degrees()
    W = np.zeros((g.num_nodes, g.num_nodes))
    for i, j in g.edges:
        W[i, j] = W[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    W[np.diag_indices_from(W)] = 1.0 - W.sum(axis=1)
    return W


def is_doubly_stochastic(W, tol=STOCHASTIC_TOL, symmetric=True):
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        return False
    if symmetric and not np.allclose(W, W.T, rtol=0, atol=tol):
        return False
    return bool(
        np.all(W >= -tol)
        and np.allclose(W.sum(axis=0), 1.0, rtol=0, atol=tol)
        and np.allclose(W.sum(axis=1), 1.0, rtol=0, atol=tol)
    )


def second_eigenvalue_modulus(W, tol=1e-8, max_iter=100_000, seed=0):
    """Largest ``|lambda|`` of ``W`` on the complement of the consensus direction.

    Power iteration on ``B^T B`` with ``B = W - 11^T / T`` (the consensus
    direction deflated), so the result is the second singular value; for a
    symmetric doubly stochastic ``W`` that is the second eigenvalue modulus.
    """
    W = np.asarray(W, dtype=float)
    T = len(W)
    if T == 1:
        return 0.0
    B = W - np.full((T, T), 1.0 / T)
    v = np.random.default_rng(seed).normal(size=T)
    v -= v.mean()
    norm = np.linalg.norm(v)
    if norm == 0:
        return 0.0
    v /= norm
    est = 0.0
    for _ in range(max_iter):
        w = B.T @ (B @ v)
        w -= w.mean()
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - est) <= tol * max(new, 1e-300):
            est = new
            break
        est = new
    return float(np.sqrt(est))


def spectral_mixing_check(W, tol=1e-8):
    """``(is_valid, lambda_2)`` for a candidate mixing matrix."""
    return is_doubly_stochastic(W), second_eigenvalue_modulus(W, tol=tol)


def contraction_ratio(W, Xi):
    """``||Xi W - Xi_bar||_F^2 / ||Xi - Xi_bar||_F^2`` for ``Xi`` of shape ``(p, T)``."""
    Xi = np.asarray(Xi, dtype=float)
    bar = Xi.mean(axis=1, keepdims=True)
    den = np.sum((Xi - bar) ** 2)
    if den == 0:
        return 0.0
    return float(np.sum((Xi @ W - bar) ** 2) / den)


class MixingSchedule:
    """Yields one mixing matrix per round.

    ``matrix(k, rng)`` returns ``W^k``; ``period`` is the window over which the
    schedule guarantees mixing.
    """

    period = 1

    def __init__(self, num_nodes):
        self.num_nodes = num_nodes

    def matrix(self, k, rng=None):
        raise NotImplementedError


class StaticSchedule(MixingSchedule):
    def __init__(self, W, check=True):
        W = np.asarray(W, dtype=float)
        super().__init__(len(W))
        if check and not is_doubly_stochastic(W):
            raise InputError("mixing matrix is not symmetric doubly stochastic")
        self.W = W
        self.lambda2 = second_eigenvalue_modulus(W)
        if self.lambda2 >= 1.0 - 1e-12 and len(W) > 1:
            log.warning("mixing matrix does not mix (lambda_2 = %.6f); graph is disconnected", self.lambda2)

    @classmethod
    def from_graph(cls, g):
        return cls(metropolis_weights(g))

    def matrix(self, k, rng=None):
        return self.W


class ResampledErdosRenyi(MixingSchedule):
    """Fresh Erdos-Renyi graph with Metropolis weights at every round."""

    def __init__(self, num_nodes, p_edge, seed):
        super().__init__(num_nodes)
        self.p_edge = p_edge
        self.seed = seed

    def matrix(self, k, rng=None):
        from .rng import stream

        rng = rng if rng is not None else stream(self.seed, "topology", k)
        return metropolis_weights(erdos_renyi(self.num_nodes, self.p_edge, rng))


def make_schedule(name, T, seed=0, p_edge=0.5, resample=False):
    """Schedule from a topology name: complete, ring, identity or erdos_renyi."""
    if name == "complete":
        return StaticSchedule(np.full((T, T), 1.0 / T))
    if name == "identity":
        return StaticSchedule(np.eye(T))
    if name == "ring":
        return StaticSchedule.from_graph(ring_graph(T))
    if name == "erdos_renyi":
        if resample:
            return ResampledErdosRenyi(T, p_edge, seed)
        from .rng import stream

        return StaticSchedule.from_graph(erdos_renyi(T, p_edge, stream(seed, "topology")))
    raise InputError(f"unknown topology {name!r}")
