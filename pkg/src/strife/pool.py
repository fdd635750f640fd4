"""Fixed pool of worker threads dispatched in lock-step rounds.

``WorkerPool.run(fn)`` calls ``fn(worker_id)`` on every worker and returns
once all of them finished, so each call is one phase followed by a barrier.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


class WorkerPool:
    def __init__(self, threads: int) -> None:
        if threads < 1:
            raise ValueError("threads must be >= 1")
        self.threads = threads
        self._job: Callable[[int], None] | None = None
        self._errors: list[BaseException] = []
        self._workers: list[threading.Thread] = []
        self._closed = False
        if threads > 1:
            self._start = threading.Barrier(threads + 1)
            self._done = threading.Barrier(threads + 1)
            for wid in range(threads):
                t = threading.Thread(target=self._loop, args=(wid,), name=f"worker-{wid}", daemon=True)
                t.start()
                self._workers.append(t)

    def _loop(self, wid: int) -> None:
        while True:
            self._start.wait()
            job = self._job
            if job is None:
                return
            try:
                job(wid)
            except BaseException as exc:  # re-raised in the dispatching thread
                self._errors.append(exc)
            self._done.wait()

    def run(self, fn: Callable[[int], None]) -> None:
        if self._closed:
            raise RuntimeError("pool is closed")
        if self.threads == 1:
            fn(0)
            return
        self._errors = []
        self._job = fn
        self._start.wait()
        self._done.wait()
        self._job = None
        if self._errors:
            raise self._errors[0]

    def map_chunks(self, fn: Callable[[int, Sequence[T]], R], items: Sequence[T]) -> list[R]:
        """Split ``items`` into one contiguous chunk per worker and run them."""
        bounds = chunk_bounds(len(items), self.threads)
        out: list = [None] * self.threads

        def job(wid: int) -> None:
            lo, hi = bounds[wid]
            out[wid] = fn(wid, items[lo:hi])

        self.run(job)
        return out

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self.threads > 1:
            self._job = None
            self._start.wait()
            for t in self._workers:
                t.join()

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def chunk_bounds(n: int, parts: int) -> list[tuple[int, int]]:
    step, extra = divmod(n, parts)
    bounds = []
    lo = 0
    for i in range(parts):
        hi = lo + step + (1 if i < extra else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds
