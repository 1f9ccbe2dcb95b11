"""Process-based map with deterministic ordering.

Results are identical to the serial path because every work item
carries its own seed material; the pool only changes wall time.
"""

from __future__ import annotations

import multiprocessing
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def fork_map(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=min(workers, len(items))) as pool:
        return pool.map(fn, items)
