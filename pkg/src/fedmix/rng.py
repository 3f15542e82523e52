"""Seeded random streams.

Every stream is keyed by ``(seed, namespace, client, round)`` so that
per-client work is reproducible regardless of execution order.
"""
import numpy as np

NAMESPACES = {"data": 0, "init": 1, "batches": 2, "topology": 3, "sampling": 4, "personalize": 5}


def stream(seed, namespace, *keys):
    if namespace not in NAMESPACES:
        raise KeyError(f"unknown random namespace {namespace!r}")
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, NAMESPACES[namespace], *(int(k) for k in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
