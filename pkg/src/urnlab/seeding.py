"""Per-replica random streams derived from one master seed.

Replica ``i`` always draws from ``PCG64(SeedSequence(master_seed, spawn_key=(i,)))``,
so results depend only on ``(master_seed, i)`` and never on scheduling.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Callable, TypeVar

import numpy as np
from loguru import logger

T = TypeVar("T")


def replica_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(index,))))


def _run_replica(fn: Callable[[int, np.random.Generator], T], master_seed: int, index: int) -> T:
    return fn(index, replica_rng(master_seed, index))


def map_replicas(
    fn: Callable[[int, np.random.Generator], T],
    master_seed: int,
    count: int,
    workers: int = 1,
) -> list[T]:
    """Run ``fn(index, rng)`` for every replica; results come back in index order.

    With ``workers > 1`` replicas run on a process pool, so ``fn`` must be picklable.
    """
    if count < 0:
        raise ValueError(f"count must be nonnegative, got {count}")
    job = partial(_run_replica, fn, master_seed)
    if workers <= 1 or count <= 1:
        results = []
        for i in range(count):
            results.append(job(i))
            if count >= 100 and (i + 1) % max(1, count // 10) == 0:
                logger.info(f"Finished {i + 1}/{count} replicas")
        return results
    logger.info(f"Running {count} replicas on {workers} worker processes")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, range(count), chunksize=max(1, count // (4 * workers))))
