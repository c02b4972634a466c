"""Deterministic seeding and order-preserving worker pools.

Every random draw in the pipeline comes from a generator seeded through
`stable_seed`, so results never depend on process scheduling, dict order,
or platform hash randomization.
"""

from __future__ import annotations

import hashlib
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Sequence

import numpy as np


def stable_seed(*parts: Any) -> int:
    """Derive a 64-bit seed from a tuple of labels, numbers, ids.

    SHA-256 based, so unrelated part tuples give independent streams and
    the mapping is stable across runs and platforms.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_from(*parts: Any) -> np.random.Generator:
    """Generator for the stream identified by `parts`."""
    return np.random.Generator(np.random.PCG64(stable_seed(*parts)))


def default_jobs() -> int:
    return os.cpu_count() or 1


# Read-only state shared with forked workers.  Set by run_parallel in the
# parent just before the pool forks; children inherit it copy-on-write, so
# large arrays are never pickled.
_SHARED: Any = None


def shared_state() -> Any:
    return _SHARED


def run_parallel(
    fn: Callable[[Any], Any],
    items: Sequence[Any],
    jobs: int,
    shared: Any = None,
) -> list[Any]:
    """Map `fn` over `items`, returning results in item order.

    `fn` must be a module-level function whose output depends only on its
    item and on `shared` (exposed to workers via `shared_state`), which
    makes the result independent of `jobs`.
    """
    global _SHARED
    jobs = max(1, int(jobs))
    _SHARED = shared
    try:
        if jobs == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        ctx = multiprocessing.get_context("fork")
        chunk = max(1, len(items) // (jobs * 4))
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            return list(pool.map(fn, items, chunksize=chunk))
    finally:
        _SHARED = None
