"""Counter-based seed derivation and an order-preserving parallel map.

Every randomized task gets its own stream derived from
``(master_seed, key...)`` through :class:`numpy.random.SeedSequence`,
so results never depend on how tasks are scheduled across threads.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def _word(key: int | str) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("seed keys must be non-negative")
        return int(key)
    digest = hashlib.blake2b(str(key).encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def seed_sequence(seed: int, *key: int | str) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_word(k) for k in key))


def rng_for(seed: int, *key: int | str) -> np.random.Generator:
    """Generator for the stream named ``key`` under ``seed``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *key)))


def derive_seed(seed: int, *key: int | str) -> int:
    """A 63-bit integer seed for a child task, for APIs that take ints."""
    state = seed_sequence(seed, *key).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def as_rng(seed_or_rng: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return rng_for(int(seed_or_rng))


def default_threads() -> int:
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = 1) -> list[R]:
    """``list(map(fn, items))`` on a thread pool; output order follows input order."""
    items = list(items)
    if threads is None:
        threads = default_threads()
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
