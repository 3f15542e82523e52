import numpy as np
import pytest

from fedmix.data import ClientDataset
from fedmix.losses import LossKind

LOSS_KINDS = [LossKind.squared(), LossKind.logistic(), LossKind.cross_entropy(3)]


def random_labels(rng, loss, n):
    if loss.name == "squared":
        return rng.normal(size=n)
    return rng.integers(0, loss.num_classes, size=n).astype(float)


def random_dataset(rng, loss, n, d, test_frac=0.0):
    x = rng.normal(size=(n, d))
    y = random_labels(rng, loss, n)
    n_test = int(round(test_frac * n))
    return ClientDataset(x, y, np.arange(n - n_test), np.arange(n - n_test, n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def record(criterion, passed, detail):
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
