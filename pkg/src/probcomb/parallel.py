"""Order-preserving parallel map over item indices.

Work functions are closures over models, which do not pickle, so workers are
forked and pick the function up from module state. Only results travel back
through pickling. Each item must derive its randomness from its own index;
under that contract the output never depends on ``workers``.
"""

from __future__ import annotations

import multiprocessing

_task = None
_in_worker = False


def _run(i):
    global _in_worker
    _in_worker = True
    return _task(i)


def map_ordered(fn, n: int, workers: int = 1) -> list:
    """``[fn(0), ..., fn(n - 1)]``, computed on up to ``workers`` processes."""
    global _task
    if workers <= 1 or n <= 1 or _in_worker:
        return [fn(i) for i in range(n)]
    _task = fn
    try:
        with multiprocessing.get_context("fork").Pool(min(workers, n)) as pool:
            return pool.map(_run, range(n))
    finally:
        _task = None
