"""
Worker cap, ordered parallel map and seed derivation.

Every parallel section in carve goes through ordered_map and reduces the
results in input order, so outputs do not depend on the worker count.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

_THREADS = 0


def set_threads(n):
    """Cap the number of worker threads (0 = one per core)."""
    global _THREADS
    if n < 0:
        raise ValueError(f"thread count must be >= 0, got {n}")
    _THREADS = int(n)


def get_threads():
    if _THREADS > 0:
        return _THREADS
    return os.cpu_count() or 1


def ordered_map(fn, items):
    """Apply fn to every item, possibly in parallel; results keep input order."""
    items = list(items)
    workers = min(get_threads(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def derive_rng(seed, *keys):
    """
    Independent generator for a (seed, key...) combination.

    Keys may be ints or strings; strings are folded into ints deterministically.
    """
    entropy = [int(seed) & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            entropy.append(sum((i + 1) * b for i, b in enumerate(key.encode("utf-8"))) & 0xFFFFFFFF)
        else:
            entropy.append(int(key) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
