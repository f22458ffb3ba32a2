"""Deterministic parallel helpers.

Work is split into fixed-size chunks keyed by item index, never by worker,
and every random stream is spawned from the task index. Output is therefore
bitwise identical for any thread count, including 1.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV_VAR = "PPRB_THREADS"

DEFAULT_CHUNK = 128


def resolve_threads(n_threads=None):
    """Thread cap: explicit argument, else ``PPRB_THREADS``, else CPU count."""
    if n_threads is not None:
        n = int(n_threads)
    else:
        env = os.environ.get(THREADS_ENV_VAR)
        n = int(env) if env else (os.cpu_count() or 1)
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    return n


def chunk_ranges(n_items, chunk=DEFAULT_CHUNK):
    """Split ``range(n_items)`` into (start, stop) pairs of fixed size."""
    return [(s, min(s + chunk, n_items)) for s in range(0, n_items, chunk)]


def run_chunked(work, n_items, n_threads=None, chunk=DEFAULT_CHUNK):
    """Run ``work(start, stop)`` over fixed chunks, possibly in parallel.

    ``work`` must write results into preallocated storage indexed by item;
    chunks share no accumulators, so scheduling cannot change the output.
    """
    n_threads = resolve_threads(n_threads)
    ranges = chunk_ranges(n_items, chunk)
    if n_threads == 1 or len(ranges) <= 1:
        for start, stop in ranges:
            work(start, stop)
        return
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        futures = [pool.submit(work, start, stop) for start, stop in ranges]
        for fut in futures:
            fut.result()


def spawn_rngs(seed_seq, n):
    """``n`` independent generators spawned from ``seed_seq`` by index."""
    return [np.random.default_rng(s) for s in seed_seq.spawn(n)]


def as_seed_sequence(seed):
    """Coerce int / None / SeedSequence into a SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)
