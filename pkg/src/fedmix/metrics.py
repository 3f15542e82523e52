"""Evaluation of mixture predictors and recovery of ground-truth parameters."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .em import ComponentBank, federated_objective
from .errors import InputError
from .losses import CROSS_ENTROPY, LOGISTIC, bank_predict

MAX_PERMUTATION_M = 5


@dataclass
class EvalReport:
    weighted_accuracy: float
    objective: float
    per_client_accuracy: np.ndarray


def mixture_predict(bank, pi, X):
    """Probability-level mixture ``sum_m pi_m h_m(x)``."""
    P = bank_predict(bank.thetas, X, bank.loss)
    if bank.loss.name == CROSS_ENTROPY:
        return np.einsum("nmc,m->nc", P, pi)
    return P @ pi


def classify(pred, loss):
    """Hard labels: threshold 0.5 (ties to 1) or argmax (ties to lowest class)."""
    if loss.name == LOGISTIC:
        return (pred >= 0.5).astype(float)
    if loss.name == CROSS_ENTROPY:
        return np.argmax(pred, axis=1).astype(float)
    return np.round(pred)


def _accuracy(bank, pi, X, y):
    if len(y) == 0:
        return 0.0
    pred = mixture_predict(bank, np.asarray(pi, dtype=float), X)
    if bank.loss.name in (LOGISTIC, CROSS_ENTROPY):
        return float(np.mean(classify(pred, bank.loss) == y))
    return float(np.mean(np.abs(pred - y) <= 0.5))


def mixture_accuracy(bank, pis, fed, split="test"):
    """Per-client and size-weighted accuracy of the mixture predictors.

    ``bank`` is one shared ``ComponentBank`` or a list with one bank per client.
    Squared-error accuracy counts predictions within 0.5 of the target.
    """
    if split not in ("train", "test"):
        raise InputError(f"unknown split {split!r}")
    banks = bank if isinstance(bank, (list, tuple)) else [bank] * len(fed)
    if len(banks) != len(fed) or len(pis) != len(fed):
        raise InputError("need one mixture row (and bank) per client")
    sizes = fed.sizes(split)
    if sizes.sum() == 0:
        raise InputError(f"federation has no {split} split")
    acc = np.array([_accuracy(b, p, *c.split(split)) for b, p, c in zip(banks, pis, fed)])
    weights = sizes / sizes.sum()
    objective = federated_objective(banks, [np.asarray(p, dtype=float) for p in pis], fed.clients, split)
    return EvalReport(float(weights @ acc), objective, acc)


def single_model_accuracy(theta, fed, split="test"):
    """Accuracy of one hypothesis shared by every client (a one-component mixture)."""
    bank = ComponentBank(np.atleast_2d(theta), fed.loss, fed.dim)
    return mixture_accuracy(bank, [np.ones(1)] * len(fed), fed, split)


def cosine_distance(a, b):
    a, b = np.ravel(a), np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0
    return float(1.0 - np.dot(a, b) / (na * nb))


def _permutations(m):
    if m > MAX_PERMUTATION_M:
        raise InputError(f"permutation search supports M <= {MAX_PERMUTATION_M}, got {m}")
    return itertools.permutations(range(m))


def recovery_distance(est, truth, axis=0):
    """Cosine distance minimized over relabelings of the component axis.

    ``axis=0`` for component banks (rows), ``axis=1`` for mixture-weight
    matrices (columns).
    """
    est, truth = np.asarray(est, dtype=float), np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise InputError(f"shape mismatch {est.shape} vs {truth.shape}")
    return min(
        cosine_distance(np.take(est, perm, axis=axis), truth)
        for perm in _permutations(est.shape[axis])
    )


def joint_recovery(theta_hat, pi_hat, theta_star, pi_star):
    """Distances for bank and mixture weights under one shared relabeling.

    The relabeling minimizes the sum of both distances.  Returns
    ``(theta_distance, pi_distance, permutation)``.
    """
    theta_hat, pi_hat = np.asarray(theta_hat, dtype=float), np.asarray(pi_hat, dtype=float)
    if theta_hat.shape != np.shape(theta_star) or pi_hat.shape != np.shape(pi_star):
        raise InputError("estimate and truth shapes differ")
    best = None
    for perm in _permutations(len(theta_hat)):
        p = list(perm)
        dt = cosine_distance(theta_hat[p], theta_star)
        dp = cosine_distance(pi_hat[:, p], pi_star)
        if best is None or dt + dp < best[0] + best[1]:
            best = (dt, dp, tuple(p))
    return best


def cluster_assignment_accuracy(pis, truth_labels):
    """Fraction of clients whose argmax component matches its true cluster.

    Components are matched to clusters by the best relabeling (exact
    assignment via the Hungarian method).
    """
    pis = np.asarray(pis, dtype=float)
    labels = np.asarray(truth_labels, dtype=int)
    if len(pis) != len(labels):
        raise InputError("need one mixture row per client")
    if len(labels) == 0:
        raise InputError("no clients")
    assigned = np.argmax(pis, axis=1)
    k = max(pis.shape[1], labels.max() + 1)
    counts = np.zeros((k, k))
    np.add.at(counts, (assigned, labels), 1)
    rows, cols = linear_sum_assignment(-counts)
    return float(counts[rows, cols].sum() / len(labels))
