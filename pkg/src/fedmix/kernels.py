"""Backend selection for the SGD inner loop.

The compiled extension ``fedmix._sgd`` is used when it was built and
``FEDMIX_BACKEND`` is not set to ``python``; otherwise the NumPy version runs.
Both backends consume identical batch index arrays, so the random stream does
not depend on the backend.
"""
import os

import numpy as np

from . import _sgd_py

try:
    from . import _sgd as _sgd_ext
except ImportError:  # extension not built
    _sgd_ext = None

_BACKENDS = {"python": _sgd_py.sgd_steps}
if _sgd_ext is not None:
    _BACKENDS["compiled"] = _sgd_ext.sgd_steps

BACKEND = os.environ.get("FEDMIX_BACKEND", "compiled" if _sgd_ext is not None else "python")
if BACKEND not in _BACKENDS:
    BACKEND = "python"


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Switch the process-wide backend; returns the previous name."""
    global BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    previous, BACKEND = BACKEND, name
    return previous


def draw_batch(rng, n, batch_size):
    """Indices of one minibatch, without replacement; clamped to full batch."""
    return rng.choice(n, size=min(batch_size, n), replace=False)


def draw_batches(rng, n, batch_size, steps):
    b = min(batch_size, n)
    out = np.empty((steps, b), dtype=np.int64)
    for j in range(steps):
        out[j] = draw_batch(rng, n, batch_size)
    return out


def sgd_steps(thetas, X, y, q, batches, step, loss, backend=None):
    """Apply the SGD steps given by ``batches`` to a copy of ``thetas``."""
    out = np.array(thetas, dtype=np.float64, order="C", copy=True)
    if len(batches) == 0:
        return out
    fn = _BACKENDS[backend or BACKEND]
    fn(
        out,
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(q, dtype=np.float64),
        np.ascontiguousarray(batches, dtype=np.int64),
        float(step),
        loss.code,
        loss.num_classes,
    )
    return out
