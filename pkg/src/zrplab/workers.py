"""Deterministic replica fan-out.

Replica index -> worker by modulo, results merged in replica order, so the
output of an experiment is bit-identical for any worker count: every replica
draws from its own counter-based streams and never shares state.
"""

from __future__ import annotations

import multiprocessing as mp


def _run_chunk(fn, reps, args):
    return [fn(rep, *args) for rep in reps]


def map_replicas(fn, n_replicas: int, workers: int, *args) -> list:
    """Evaluate fn(replica, *args) for replica in range(n_replicas).

    ``fn`` must be a module-level function (picklable).  Results come back
    ordered by replica index regardless of the worker count.
    """
    workers = max(1, int(workers))
    if workers == 1 or n_replicas <= 1:
        return [fn(rep, *args) for rep in range(n_replicas)]
    assignment = [list(range(w, n_replicas, workers)) for w in range(workers)]
    ctx = mp.get_context("fork")
    with ctx.Pool(workers) as pool:
        chunks = pool.starmap(
            _run_chunk, [(fn, reps, args) for reps in assignment]
        )
    out = [None] * n_replicas
    for w, chunk in enumerate(chunks):
        for i, rep in enumerate(assignment[w]):
            out[rep] = chunk[i]
    return out
