"""Reference (pure NumPy) implementation of the weighted minibatch SGD kernel."""
import numpy as np

from .losses import CROSS_ENTROPY, LOGISTIC, SQUARED, LossKind, bank_weighted_gradients

_KINDS = {0: SQUARED, 1: LOGISTIC, 2: CROSS_ENTROPY}


def minibatch_gradient(thetas, X, y, q, idx, loss):
    """Batch-mean of the q-weighted loss gradients for every component, ``(M, P)``."""
    return bank_weighted_gradients(thetas, X[idx], y[idx], q[idx], loss) / len(idx)


def sgd_steps(thetas, X, y, q, batches, step, loss_code, num_classes):
    """Run ``len(batches)`` SGD steps on ``thetas`` in place.

    Each row of ``batches`` holds the sample indices of one step; ``q[:, m]``
    weights the per-sample gradients of component ``m``.
    """
    loss = LossKind(_KINDS[loss_code], num_classes)
    for idx in batches:
        thetas -= step * minibatch_gradient(thetas, X, y, q, idx, loss)
    return thetas
