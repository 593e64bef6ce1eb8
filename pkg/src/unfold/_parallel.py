"""Order-preserving map over worker processes."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def pmap(func, items, workers: int = 1) -> list:
    """``[func(x) for x in items]``, optionally spread over ``workers`` processes.

    Results come back in input order, so as long as ``func`` is a pure
    function of its argument the output does not depend on ``workers``.
    """
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items, chunksize=chunk))
