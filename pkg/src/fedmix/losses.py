"""Linear hypotheses and the three log-loss families.

Every loss here is the negative conditional log-likelihood of a label given
features, with the additive constant dropped.  Parameter vectors are flat:

* squared error and logistic: ``theta`` has length ``d``;
* cross-entropy with ``C`` classes: ``theta`` has length ``C * d`` and is read
  as a ``(C, d)`` class-by-feature matrix (row-major).

Functions operate on whole sample blocks ``X`` of shape ``(n, d)``.  The
``*_bank`` variants take a stack of parameter vectors ``(M, P)`` and return one
column per component.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .errors import InputError

SQUARED = "squared"
LOGISTIC = "logistic"
CROSS_ENTROPY = "cross_entropy"

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class LossKind:
    name: str
    num_classes: int = 2

    def __post_init__(self):
        if self.name not in (SQUARED, LOGISTIC, CROSS_ENTROPY):
            raise InputError(f"unknown loss kind {self.name!r}")
        if self.name == CROSS_ENTROPY and self.num_classes < 2:
            raise InputError("cross-entropy needs num_classes >= 2")

    @classmethod
    def squared(cls):
        return cls(SQUARED, 1)

    @classmethod
    def logistic(cls):
        return cls(LOGISTIC, 2)

    @classmethod
    def cross_entropy(cls, num_classes):
        return cls(CROSS_ENTROPY, int(num_classes))

    @classmethod
    def parse(cls, text):
        """Inverse of ``str(loss)``: ``squared``, ``logistic`` or ``cross_entropy:C``."""
        name, _, classes = text.strip().partition(":")
        if name == CROSS_ENTROPY:
            if not classes:
                raise InputError("cross_entropy needs a class count, e.g. cross_entropy:10")
            return cls.cross_entropy(int(classes))
        if name == SQUARED:
            return cls.squared()
        if name == LOGISTIC:
            return cls.logistic()
        raise InputError(f"unknown loss kind {text!r}")

    def __str__(self):
        if self.name == CROSS_ENTROPY:
            return f"{CROSS_ENTROPY}:{self.num_classes}"
        return self.name

    @property
    def code(self):
        """Integer tag used by the compiled kernel."""
        return {SQUARED: 0, LOGISTIC: 1, CROSS_ENTROPY: 2}[self.name]

    def param_size(self, dim):
        return dim * self.num_classes if self.name == CROSS_ENTROPY else dim

    def validate_labels(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise InputError("labels must be finite")
        if self.name == LOGISTIC and not np.all((y == 0) | (y == 1)):
            raise InputError("logistic labels must be 0 or 1")
        if self.name == CROSS_ENTROPY:
            if not np.all(y == np.round(y)) or np.any(y < 0) or np.any(y >= self.num_classes):
                raise InputError(f"class labels must be integers in [0, {self.num_classes})")
        return y


@dataclass(frozen=True)
class LinearHypothesis:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim != 1:
            raise InputError("theta must be a flat vector")
        if not np.all(np.isfinite(theta)):
            raise InputError("theta has non-finite entries")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)


def _theta(h):
    return np.asarray(h.theta if isinstance(h, LinearHypothesis) else h, dtype=float)


def _check_dims(theta, X, loss):
    if theta.shape[-1] != loss.param_size(X.shape[1]):
        raise InputError(
            f"parameter length {theta.shape[-1]} does not match {loss} with d={X.shape[1]}"
        )


def scores(h, X, loss):
    """Linear scores: ``(n,)`` for scalar losses, ``(n, C)`` for cross-entropy."""
    theta = _theta(h)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_dims(theta, X, loss)
    if loss.name == CROSS_ENTROPY:
        return X @ theta.reshape(loss.num_classes, -1).T
    return X @ theta


def predict(h, x, loss):
    """Model output for one feature vector or a block of them.

    Squared error gives the linear response, logistic the probability of
    label 1 and cross-entropy the class probability vector.
    """
    x = np.asarray(x, dtype=float)
    s = scores(h, x, loss)
    if loss.name == LOGISTIC:
        s = expit(s)
    elif loss.name == CROSS_ENTROPY:
        s = softmax(s, axis=1)
    return s[0] if x.ndim == 1 else s


def _loss_from_scores(s, y, loss):
    if loss.name == SQUARED:
        return 0.5 * (s - y) ** 2
    if loss.name == LOGISTIC:
        p = np.clip(expit(s), PROB_CLAMP, 1.0 - PROB_CLAMP)
        return -y * np.log(p) - (1.0 - y) * np.log1p(-p)
    logp = log_softmax(s, axis=-1)
    idx = y.astype(np.intp)
    return -np.take_along_axis(logp, idx[..., None], axis=-1)[..., 0]


def losses(h, X, y, loss):
    """Per-sample losses, shape ``(n,)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = loss.validate_labels(np.atleast_1d(y))
    if len(y) != len(X):
        raise InputError("X and y have different lengths")
    return _loss_from_scores(scores(h, X, loss), y, loss)


def loss(h, x, y, kind):
    """Loss of a single sample."""
    return float(losses(h, np.atleast_2d(x), np.atleast_1d(y), kind)[0])


def _residuals(s, y, loss):
    # d loss / d score
    if loss.name == SQUARED:
        return s - y
    if loss.name == LOGISTIC:
        return expit(s) - y
    r = softmax(s, axis=-1)
    idx = y.astype(np.intp)
    np.put_along_axis(r, idx[..., None], np.take_along_axis(r, idx[..., None], axis=-1) - 1.0, axis=-1)
    return r


def weighted_gradient(h, X, y, weights, loss):
    """``sum_i weights[i] * grad l(theta; x_i, y_i)``, same shape as theta."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    r = _residuals(scores(h, X, loss), y, loss)
    w = np.asarray(weights, dtype=float)
    if loss.name == CROSS_ENTROPY:
        return ((r * w[:, None]).T @ X).ravel()
    return X.T @ (r * w)


def loss_gradient(h, x, y, kind):
    """Gradient of the single-sample loss with respect to theta."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = kind.validate_labels(np.atleast_1d(y))
    return weighted_gradient(h, x, y, np.ones(1), kind)


# Component-bank forms -------------------------------------------------------

def bank_scores(thetas, X, loss):
    thetas = np.atleast_2d(thetas)
    _check_dims(thetas, X, loss)
    if loss.name == CROSS_ENTROPY:
        W = thetas.reshape(len(thetas), loss.num_classes, -1)
        return np.einsum("nd,mcd->nmc", X, W)
    return X @ thetas.T


def bank_losses(thetas, X, y, loss):
    """Loss of every sample under every component, shape ``(n, M)``."""
    s = bank_scores(thetas, X, loss)
    yy = y[:, None] if loss.name != CROSS_ENTROPY else np.broadcast_to(y[:, None], s.shape[:2])
    return _loss_from_scores(s, yy, loss)


def bank_predict(thetas, X, loss):
    """Component outputs: ``(n, M)`` or ``(n, M, C)`` for cross-entropy."""
    s = bank_scores(thetas, X, loss)
    if loss.name == LOGISTIC:
        return expit(s)
    if loss.name == CROSS_ENTROPY:
        return softmax(s, axis=-1)
    return s


def bank_weighted_gradients(thetas, X, y, W, loss):
    """Row ``m`` is ``sum_i W[i, m] * grad l(theta_m; x_i, y_i)``; shape ``(M, P)``."""
    s = bank_scores(thetas, X, loss)
    if loss.name == CROSS_ENTROPY:
        yy = np.broadcast_to(y[:, None], s.shape[:2])
        r = _residuals(s, yy, loss) * W[:, :, None]
        return np.einsum("nmc,nd->mcd", r, X).reshape(len(W.T), -1)
    r = _residuals(s, y[:, None], loss) * W
    return r.T @ X
