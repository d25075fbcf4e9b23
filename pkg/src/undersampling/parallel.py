"""Order-preserving map over repetition indices.

Each repetition derives its own random stream from its index, so results do
not depend on the worker count; this module only decides where they run.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")


def map_reps(fn: Callable[[int], T], indices: Sequence[int] | int, workers: int = 1) -> list[T]:
    """``[fn(i) for i in indices]``, optionally fanned out over processes.

    ``fn`` must be picklable when ``workers > 1`` (a module-level function or
    a :func:`functools.partial` of one).
    """
    idx = list(range(indices)) if isinstance(indices, int) else list(indices)
    if workers is None or workers <= 1 or len(idx) < 2:
        return [fn(i) for i in idx]
    chunk = max(1, len(idx) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, idx, chunksize=chunk))
