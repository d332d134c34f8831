"""Order-preserving parallel map over independent, picklable jobs."""
from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Callable, Iterable, Optional, Sequence


def derive_seed(master: int, role: str, *parts) -> int:
    """Stable 64-bit seed from a master seed, a role tag and any labels."""
    text = "|".join([str(int(master)), role] + [str(p) for p in parts])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def run_jobs(
    fn: Callable,
    jobs: Sequence,
    parallel: int = 1,
    on_done: Optional[Callable[[int, object], None]] = None,
) -> list:
    """Apply ``fn`` to every job; results come back in job order.

    ``on_done(index, result)`` fires in the parent process as each job
    finishes, in completion order. Exceptions are returned in place of the
    result so one failing job never aborts the batch.
    """
    results: list = [None] * len(jobs)

    def settle(i, value):
        results[i] = value
        if on_done is not None:
            on_done(i, value)

    if parallel <= 1 or len(jobs) <= 1:
        for i, job in enumerate(jobs):
            try:
                value = fn(job)
            except Exception as exc:  # noqa: BLE001 - recorded per job
                value = exc
            settle(i, value)
        return results
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        futures = {pool.submit(fn, job): i for i, job in enumerate(jobs)}
        for fut in as_completed(futures):
            exc = fut.exception()
            settle(futures[fut], exc if exc is not None else fut.result())
    return results
