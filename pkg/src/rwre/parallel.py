"""Ordered parallel map over independent samples.

Results come back in input order, so reductions are identical for any
worker count.  ``RWRE_THREADS`` overrides the requested worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_VAR = "RWRE_THREADS"


def resolve_threads(requested: int | None = None) -> int:
    """Worker count: ``RWRE_THREADS`` if set, else ``requested``, else 1."""
    raw = os.environ.get(ENV_VAR)
    if raw:
        try:
            n = int(raw)
        except ValueError as exc:
            raise ValueError(f"{ENV_VAR} must be an integer, got {raw!r}") from exc
    else:
        n = 1 if requested is None else int(requested)
    if n < 1:
        raise ValueError("thread count must be positive")
    return n


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    """``[fn(x) for x in items]`` evaluated on a thread pool."""
    items = list(items)
    n = resolve_threads(threads)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
