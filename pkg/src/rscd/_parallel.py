"""Deterministic block-parallel map over image rows.

Blocks have a fixed size that never depends on the thread count, and results
are returned in block order, so any reduction over them is schedule-free.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

BLOCK_ROWS = 16

_threads = 1


def set_threads(n: int) -> None:
    global _threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(n)


def get_threads() -> int:
    return _threads


def row_blocks(n_rows: int, block: int = BLOCK_ROWS):
    return [(lo, min(lo + block, n_rows)) for lo in range(0, n_rows, block)]


def map_row_blocks(fn, n_rows: int, threads: int | None = None, block: int = BLOCK_ROWS):
    """Call ``fn(lo, hi)`` on each row block; results come back in block order."""
    blocks = row_blocks(n_rows, block)
    threads = _threads if threads is None else threads
    if threads <= 1 or len(blocks) <= 1:
        return [fn(lo, hi) for lo, hi in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), blocks))
