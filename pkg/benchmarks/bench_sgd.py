"""Compare the compiled and NumPy SGD kernels.

    python3 benchmarks/bench_sgd.py [--repeat 5] [--steps 50]

Prints the best wall time per call for each backend and the max absolute
difference between their outputs.
"""
import argparse
import timeit

import numpy as np

from fedmix import kernels
from fedmix.losses import LossKind

CASES = [
    (LossKind.logistic(), 10, 3, 32),
    (LossKind.logistic(), 150, 3, 32),
    (LossKind.squared(), 150, 3, 128),
    (LossKind.cross_entropy(10), 50, 3, 32),
]


def make_case(loss, d, M, batch, steps, n=1000, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    if loss.name == "squared":
        y = rng.normal(size=n)
    else:
        y = rng.integers(0, loss.num_classes, size=n).astype(float)
    q = rng.dirichlet(np.ones(M), size=n)
    thetas = rng.normal(size=(M, loss.param_size(d))) * 0.1
    batches = kernels.draw_batches(rng, n, batch, steps)
    return thetas, X, y, q, batches


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--steps", type=int, default=50)
    args = parser.parse_args()

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the python backend is available")
    print(f"{'loss':<18}{'d':>5}{'M':>3}{'B':>5}" + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speedup':>10}{'max diff':>11}")
    for loss, d, M, batch in CASES:
        thetas, X, y, q, batches = make_case(loss, d, M, batch, args.steps)
        times, outs = {}, {}
        for b in backends:
            fn = lambda b=b: kernels.sgd_steps(thetas, X, y, q, batches, 0.05, loss, backend=b)  # noqa: E731
            outs[b] = fn()
            times[b] = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
        speedup = times["python"] / times["compiled"] if "compiled" in times else 1.0
        diff = max(float(np.max(np.abs(outs[b] - outs["python"]))) for b in backends)
        print(
            f"{str(loss):<18}{d:>5}{M:>3}{batch:>5}"
            + "".join(f"{times[b]:>14.3f}" for b in backends)
            + f"{speedup:>9.1f}x{diff:>11.1e}"
        )


if __name__ == "__main__":
    main()
