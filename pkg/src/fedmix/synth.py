"""Synthetic mixture federations and on-disk federation format.

Directory layout::

    manifest.txt        key = value lines: T, d, M (if known), loss, split indices
    client_<t>.csv      header ``label,feat_1,...,feat_d`` then one row per sample
    truth_theta.csv     M rows of d values (synthetic data only)
    truth_pi.csv        T rows of M values (synthetic data only)

Floats are written with 17 significant digits so a load reproduces the saved
arrays exactly.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .data import ClientDataset, Federation
from .errors import DatasetLoadError, InputError
from .losses import LossKind
from .rng import stream

MIXTURE = "mixture"
HARD_CLUSTER = "hard_cluster"
FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class SyntheticConfig:
    T: int = 100
    M: int = 3
    d: int = 10
    alpha: float = 0.4
    seed: int = 0
    label_mode: str = MIXTURE
    noise: bool = True
    test_fraction: float = 0.2
    size_mean: float = 4.0
    size_sigma: float = 2.0
    min_size: int = 50
    max_size: int = 1000
    theta_scale: float = 1.0

    def __post_init__(self):
        if min(self.T, self.M, self.d) < 1:
            raise InputError("T, M and d must be positive")
        if self.alpha <= 0:
            raise InputError("alpha must be positive")
        if self.label_mode not in (MIXTURE, HARD_CLUSTER):
            raise InputError(f"label_mode must be {MIXTURE!r} or {HARD_CLUSTER!r}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise InputError("test_fraction must lie in [0, 1)")


@dataclass
class GroundTruth:
    theta_star: np.ndarray
    pi_star: np.ndarray

    @property
    def clusters(self):
        return np.argmax(self.pi_star, axis=1)

    def subset(self, indices):
        return GroundTruth(self.theta_star, self.pi_star[list(indices)])


def sample_sizes(cfg, rng):
    m = np.floor(rng.lognormal(cfg.size_mean, cfg.size_sigma, size=cfg.T)).astype(np.int64)
    return np.minimum(cfg.min_size + m, cfg.max_size)


def generate(cfg):
    """Draw a federation from the logistic mixture model.

    Returns ``(federation, truth)``.  Labels follow
    ``y ~ Bernoulli(sigmoid(<x, theta_z> + eps))`` with ``z ~ pi_t`` and a scalar
    standard-normal ``eps`` per sample (omitted when ``cfg.noise`` is off).
    """
    rng = stream(cfg.seed, "data")
    if cfg.label_mode == HARD_CLUSTER:
        pi = np.eye(cfg.M)[rng.integers(0, cfg.M, size=cfg.T)]
    else:
        pi = rng.dirichlet(np.full(cfg.M, cfg.alpha), size=cfg.T)
    theta = cfg.theta_scale * rng.uniform(-1.0, 1.0, size=(cfg.M, cfg.d))
    sizes = sample_sizes(cfg, rng)

    clients = []
    for t in range(cfg.T):
        n = int(sizes[t])
        x = rng.uniform(-1.0, 1.0, size=(n, cfg.d))
        eps = rng.normal(size=n) if cfg.noise else np.zeros(n)
        z = rng.choice(cfg.M, size=n, p=pi[t])
        logits = np.einsum("nd,nd->n", x, theta[z]) + eps
        y = (rng.random(n) < expit(logits)).astype(float)
        order = rng.permutation(n)
        n_test = int(round(cfg.test_fraction * n))
        clients.append(ClientDataset(x, y, np.sort(order[n_test:]), np.sort(order[:n_test])))
    return Federation(clients, LossKind.logistic()), GroundTruth(theta, pi)


# file format ----------------------------------------------------------------

def _fmt_row(values):
    return ",".join(FLOAT_FMT % v for v in values)


def _write_matrix(path, A):
    A = np.atleast_2d(A)
    path.write_text("".join(_fmt_row(r) + "\n" for r in A), encoding="utf-8")


def save_federation(fed, truth, dir_path):
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"T = {len(fed)}", f"d = {fed.dim}"]
    if truth is not None:
        lines.append(f"M = {truth.theta_star.shape[0]}")
    lines.append(f"loss = {fed.loss}")
    header = "label," + ",".join(f"feat_{k + 1}" for k in range(fed.dim)) + "\n"
    for t, c in enumerate(fed):
        lines.append(f"train_{t} = " + " ".join(map(str, c.train_idx.tolist())))
        lines.append(f"test_{t} = " + " ".join(map(str, c.test_idx.tolist())))
        rows = np.column_stack([c.y, c.x])
        (out / f"client_{t}.csv").write_text(
            header + "".join(_fmt_row(r) + "\n" for r in rows), encoding="utf-8"
        )
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if truth is not None:
        _write_matrix(out / "truth_theta.csv", truth.theta_star)
        _write_matrix(out / "truth_pi.csv", truth.pi_star)
    return out


def read_manifest(path):
    entries = {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetLoadError(f"{path}: cannot read manifest ({exc.strerror})") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DatasetLoadError(f"{path}:{lineno}: expected 'key = value'")
        entries[key.strip()] = value.strip()
    return entries


def read_matrix(path, ncols=None):
    try:
        rows = [r for r in path.read_text(encoding="utf-8").splitlines() if r.strip()]
    except OSError as exc:
        raise DatasetLoadError(f"{path}: cannot read ({exc.strerror})") from None
    if rows and rows[0].startswith("label"):
        rows = rows[1:]
    try:
        A = np.array([[float(v) for v in r.split(",")] for r in rows], dtype=float)
    except ValueError as exc:
        raise DatasetLoadError(f"{path}: {exc}") from None
    if len(rows) == 0:
        A = np.zeros((0, ncols or 0))
    if A.ndim != 2 or (ncols is not None and A.shape[1] != ncols):
        raise DatasetLoadError(f"{path}: expected {ncols} columns per row")
    return A


def _indices(entries, key, manifest):
    if key not in entries:
        raise DatasetLoadError(f"{manifest}: missing key {key!r}")
    try:
        return np.array([int(v) for v in entries[key].split()], dtype=np.int64)
    except ValueError:
        raise DatasetLoadError(f"{manifest}: key {key!r} must hold integers") from None


def load_federation(dir_path):
    """Inverse of ``save_federation``; returns ``(federation, truth_or_None)``."""
    root = Path(dir_path)
    manifest = root / "manifest.txt"
    entries = read_manifest(manifest)
    try:
        T, d = int(entries["T"]), int(entries["d"])
        loss = LossKind.parse(entries["loss"])
    except KeyError as exc:
        raise DatasetLoadError(f"{manifest}: missing key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise DatasetLoadError(f"{manifest}: {exc}") from None
    files = [p for p in root.iterdir() if re.fullmatch(r"client_\d+\.csv", p.name)]
    if len(files) != T:
        raise DatasetLoadError(f"{manifest}: declares T = {T} but found {len(files)} client files")
    clients = []
    for t in range(T):
        path = root / f"client_{t}.csv"
        if not path.exists():
            raise DatasetLoadError(f"{path}: missing client file")
        A = read_matrix(path, d + 1)
        try:
            clients.append(
                ClientDataset(
                    A[:, 1:], A[:, 0], _indices(entries, f"train_{t}", manifest), _indices(entries, f"test_{t}", manifest)
                )
            )
        except InputError as exc:
            raise DatasetLoadError(f"{path}: {exc}") from None
    try:
        fed = Federation(clients, loss)
    except InputError as exc:
        raise DatasetLoadError(f"{root}: {exc}") from None
    truth = None
    if (root / "truth_theta.csv").exists():
        theta = read_matrix(root / "truth_theta.csv", d)
        pi = read_matrix(root / "truth_pi.csv")
        if pi.shape != (T, len(theta)):
            raise DatasetLoadError(f"{root / 'truth_pi.csv'}: expected shape ({T}, {len(theta)})")
        truth = GroundTruth(theta, pi)
    return fed, truth
