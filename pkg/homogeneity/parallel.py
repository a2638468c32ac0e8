"""
Reproducible Monte-Carlo plumbing: seed derivation keyed by task index, and an ordered
parallel map. Results never depend on the number of workers.
"""

from __future__ import annotations

from typing import Callable, List, Sequence, Tuple, TypeVar

import numpy as np
from joblib import Parallel, delayed

T = TypeVar("T")
R = TypeVar("R")


def derive_seed(base_seed: int, *keys: int) -> np.random.SeedSequence:
    """Seed for task `keys` under `base_seed`; a hash of the tuple, not of the worker."""
    return np.random.SeedSequence([int(base_seed), *(int(k) for k in keys)])


def rng_for(base_seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base_seed, *keys))


def chunk_ranges(total: int, size: int) -> List[Tuple[int, int]]:
    """Fixed-size [start, stop) blocks covering range(total)."""
    size = max(1, int(size))
    return [(s, min(s + size, total)) for s in range(0, total, size)]


def run_indexed(fn: Callable[[T], R], tasks: Sequence[T], threads: int = 1) -> List[R]:
    """fn over tasks, results in task order. threads > 1 uses joblib worker processes."""
    if threads is None or threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    return Parallel(n_jobs=int(threads))(delayed(fn)(t) for t in tasks)
