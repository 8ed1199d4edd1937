"""Seeded random streams that do not depend on how work is scheduled.

Work over ``n`` items (units, bootstrap resamples, optimizer starts) is cut
into fixed-size blocks; block ``k`` always draws from the stream keyed by
``(seed, k)``. Results are therefore identical for any number of workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

T = TypeVar("T")

BLOCK_SIZE = 8192


def stream(seed, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``."""
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key))
    else:
        ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed, *key: int) -> int:
    """A 63-bit integer seed for a sub-task, stable across platforms."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1


def block_ranges(n: int, block_size: int = BLOCK_SIZE) -> list[tuple[int, int, int]]:
    return [(k, start, min(start + block_size, n)) for k, start in enumerate(range(0, n, block_size))]


def map_ordered(fn: Callable[..., T], tasks: list, threads: int = 1) -> list[T]:
    """``[fn(*t) for t in tasks]``, optionally on a thread pool; order is preserved."""
    if threads is None or threads <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: fn(*t), tasks))
