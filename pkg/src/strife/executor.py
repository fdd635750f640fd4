"""Batch execution: conflict-free clusters without locks, barrier, residual under NoWait.

Clusters are pulled from a shared worklist; each worker runs one cluster's
transactions serially in list order, touching no lock word. Once every
worker has drained the worklist the residual transactions are pulled from a
second queue and run under NoWait with immediate retry. In fallback mode the
first phase is skipped.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

from .partition import Clustering, Mode, PartitionConfig, StageTimings, partition
from .pool import WorkerPool
from .protocols import MAX_RETRIES, drain, execute_nowait
from .storage import FREE, Record, Storage
from .txn import Batch, Transaction


class InvariantViolation(AssertionError):
    """The engine observed something a valid clustering rules out."""


@dataclass
class PhaseMetrics:
    batch_size: int = 0
    mode: str = Mode.NORMAL.value
    analysis: StageTimings = field(default_factory=StageTimings)
    cfree_us: float = 0.0
    residual_us: float = 0.0
    commits: int = 0
    cc_aborts: int = 0
    logical_aborts: int = 0
    clusters: int = 0
    max_cluster: int = 0
    residual_size: int = 0
    dequeued: int = 0  # txns pulled off the worklist

    @property
    def wall_us(self) -> float:
        return self.analysis.total_us + self.cfree_us + self.residual_us

    def as_dict(self) -> dict:
        d = asdict(self)
        d["analysis"] = asdict(self.analysis)
        d["wall_us"] = self.wall_us
        return d


@dataclass
class BatchRun:
    metrics: PhaseMetrics
    witness: list[int]  # committed txn ids in an equivalent serial order
    cfree_done_at: float = 0.0
    residual_started_at: float = 0.0


class Worklist:
    """Clusters waiting for a worker, largest first.

    ``deque.popleft`` is atomic, so the deque doubles as the MPMC queue.
    """

    def __init__(self, clusters: Iterable[tuple[int, list[Transaction]]]) -> None:
        ordered = sorted(clusters, key=lambda c: -len(c[1]))
        self.total = sum(len(c) for _, c in ordered)
        self._q = deque(ordered)

    def __len__(self) -> int:
        return len(self._q)

    def pop(self) -> tuple[int, list[Transaction]] | None:
        try:
            return self._q.popleft()
        except IndexError:
            return None


def _run_cluster(txns: list[Transaction], cells: list[list[Record]] | None, get: Callable, debug: bool):
    """Run one cluster in order; ``cells`` holds pre-resolved records when analysis kept them."""
    committed = []
    aborted = 0
    if cells is None:
        cells = [[get(k) for k, _ in txn.accesses] for txn in txns]
    for txn, recs in zip(txns, cells):
        if debug:
            for rec in recs:
                if rec.lock != FREE:
                    raise InvariantViolation(f"record {rec.key} locked during the conflict-free phase")
        writes = txn.run_resolved(recs)
        if writes is None:
            aborted += 1
            continue
        for cell, value in writes:
            cell.payload = value
        committed.append(txn.txn_id)
    return committed, aborted


def run_batch(
    storage: Storage,
    batch: Batch,
    clustering: Clustering,
    pool: WorkerPool,
    debug: bool = False,
    max_retries: int = MAX_RETRIES,
) -> BatchRun:
    threads = pool.threads
    m = PhaseMetrics(
        batch_size=len(batch),
        mode=clustering.mode.value,
        analysis=clustering.timings,
        clusters=len(clustering.members),
        max_cluster=clustering.max_cluster,
        residual_size=len(clustering.residual_idx),
    )
    txns = batch.txns
    get = storage.get
    clock = time.perf_counter

    # conflict-free phase
    done: dict[int, list[int]] = {}
    per_worker_aborts = [0] * threads
    per_worker_dequeued = [0] * threads
    finished_at = [0.0] * threads
    if clustering.mode is not Mode.FALLBACK and clustering.members:
        work = Worklist((pos, [txns[i] for i in mem]) for pos, mem in enumerate(clustering.members))
        recs = clustering.records
        if recs is not None and len(recs) != len(txns):
            raise ValueError("clustering records do not match the batch")
        if recs and recs[0] and recs[0][0] is not get(txns[0].accesses[0][0]):
            raise ValueError("clustering was analysed against a different storage")
        cells_of = {pos: [recs[i] for i in mem] for pos, mem in enumerate(clustering.members)} if recs else {}

        def cfree(wid: int) -> None:
            while True:
                item = work.pop()
                if item is None:
                    break
                pos, cluster = item
                per_worker_dequeued[wid] += len(cluster)
                done[pos], aborted = _run_cluster(cluster, cells_of.get(pos), get, debug)
                per_worker_aborts[wid] += aborted
            finished_at[wid] = clock()

        if debug:
            Record.transitions = 0
            Record.tracing = True
        t0 = clock()
        try:
            pool.run(cfree)
        finally:
            if debug:
                Record.tracing = False
        m.cfree_us = (clock() - t0) * 1e6
        if debug and Record.transitions:
            raise InvariantViolation(f"{Record.transitions} lock transitions during the conflict-free phase")
        if len(work):
            raise InvariantViolation("worklist not empty after the conflict-free phase")
        m.dequeued = sum(per_worker_dequeued)
        if m.dequeued != work.total:
            raise InvariantViolation(f"dequeued {m.dequeued} txns, clusters hold {work.total}")

    # residual phase
    log: list[int] = []
    queue = deque(txns[i] for i in clustering.residual_idx)
    counts = [[0, 0, 0] for _ in range(threads)]
    started_at = [float("inf")] * threads

    def residual(wid: int) -> None:
        started_at[wid] = clock()
        drain(queue, lambda txn: execute_nowait(txn, storage, log), counts[wid], max_retries)

    cfree_done = max(finished_at)
    t0 = clock()
    if queue:
        pool.run(residual)
    m.residual_us = (clock() - t0) * 1e6
    res_start = min(started_at)
    if res_start < cfree_done:
        raise InvariantViolation("a residual txn started before the conflict-free phase ended")

    m.commits = sum(len(c) for c in done.values()) + sum(c[0] for c in counts)
    m.cc_aborts = sum(c[1] for c in counts)
    m.logical_aborts = sum(per_worker_aborts) + sum(c[2] for c in counts)
    witness = [tid for pos in sorted(done) for tid in done[pos]] + log
    return BatchRun(m, witness, cfree_done, res_start)


@dataclass
class StreamMetrics:
    batches: list[PhaseMetrics] = field(default_factory=list)

    @property
    def commits(self) -> int:
        return sum(b.commits for b in self.batches)

    @property
    def wall_us(self) -> float:
        return sum(b.wall_us for b in self.batches)

    @property
    def throughput_tps(self) -> float:
        return self.commits / (self.wall_us / 1e6) if self.wall_us else 0.0


class StrifeEngine:
    """Partition then execute, one batch at a time."""

    def __init__(
        self,
        storage: Storage,
        pool: WorkerPool,
        cfg: PartitionConfig | None = None,
        debug: bool = False,
        max_retries: int = MAX_RETRIES,
    ) -> None:
        self.storage = storage
        self.pool = pool
        self.cfg = cfg or PartitionConfig()
        self.debug = debug
        self.max_retries = max_retries
        self.last_clustering: Clustering | None = None

    def run(self, batch: Batch) -> BatchRun:
        clustering = partition(batch, self.cfg, self.storage, self.pool)
        self.last_clustering = clustering
        return run_batch(self.storage, batch, clustering, self.pool, self.debug, self.max_retries)


def run_stream(
    storage: Storage,
    batches: Iterable[Batch],
    cfg: PartitionConfig | None,
    pool: WorkerPool,
    sink: Callable[[dict], None] | None = None,
    debug: bool = False,
) -> StreamMetrics:
    """Strictly sequential: batch n+1 is analysed only after batch n finished."""
    engine = StrifeEngine(storage, pool, cfg, debug)
    out = StreamMetrics()
    for batch in batches:
        metrics = engine.run(batch).metrics
        out.batches.append(metrics)
        if sink is not None:
            sink(metrics.as_dict())
    return out
