"""Client datasets and the federation container."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .losses import LossKind


@dataclass
class ClientDataset:
    """All samples held by one client plus its train/test split.

    ``x`` is ``(n, d)``, ``y`` is ``(n,)``.  The split is given by index arrays
    into the rows of ``x``.
    """

    x: np.ndarray
    y: np.ndarray
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if len(self.x) != len(self.y):
            raise InputError(f"{len(self.x)} feature rows but {len(self.y)} labels")
        if self.train_idx is None:
            self.train_idx = np.arange(len(self.y))
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        for idx in (self.train_idx, self.test_idx):
            if len(idx) and (idx.min() < 0 or idx.max() >= len(self.y)):
                raise InputError("split index out of range")
        self._splits = {}

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def n_train(self):
        return len(self.train_idx)

    @property
    def n_test(self):
        return len(self.test_idx)

    def split(self, name):
        """``(X, y)`` for ``"train"`` or ``"test"``."""
        if name == "train":
            idx = self.train_idx
        elif name == "test":
            idx = self.test_idx
        else:
            raise InputError(f"unknown split {name!r}")
        if name not in self._splits:
            X, y = self.x[idx], self.y[idx]
            X.flags.writeable = False
            y.flags.writeable = False
            self._splits[name] = (X, y)
        return self._splits[name]

    @property
    def train(self):
        return self.split("train")

    @property
    def test(self):
        return self.split("test")

    def with_train_subset(self, keep):
        """Copy whose training split is restricted to ``train_idx[keep]``."""
        return ClientDataset(self.x, self.y, self.train_idx[keep], self.test_idx)

    def with_bias(self):
        """Copy with an always-one feature appended (a bias for linear models)."""
        x = np.hstack([self.x, np.ones((len(self.x), 1))])
        return ClientDataset(x, self.y, self.train_idx, self.test_idx)

    def __eq__(self, other):
        if not isinstance(other, ClientDataset):
            return NotImplemented
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.train_idx, other.train_idx)
            and np.array_equal(self.test_idx, other.test_idx)
        )


@dataclass
class Federation:
    clients: list
    loss: LossKind

    def __post_init__(self):
        self.clients = list(self.clients)
        if not self.clients:
            raise InputError("a federation needs at least one client")
        dims = {c.dim for c in self.clients}
        if len(dims) != 1:
            raise InputError(f"clients disagree on feature dimension: {sorted(dims)}")
        for t, c in enumerate(self.clients):
            try:
                self.loss.validate_labels(c.y)
            except InputError as exc:
                raise InputError(f"client {t}: {exc}") from None

    def __len__(self):
        return len(self.clients)

    def __iter__(self):
        return iter(self.clients)

    def __getitem__(self, t):
        return self.clients[t]

    @property
    def dim(self):
        return self.clients[0].dim

    @property
    def param_size(self):
        return self.loss.param_size(self.dim)

    def sizes(self, split="train"):
        return np.array([len(c.split(split)[1]) for c in self.clients], dtype=float)

    def weights(self, split="train"):
        """``n_t / n`` over the given split."""
        n = self.sizes(split)
        if n.sum() == 0:
            raise InputError(f"federation has no {split} samples")
        return n / n.sum()

    def subset(self, indices):
        return Federation([self.clients[i] for i in indices], self.loss)
