"""Whole-batch 2PL executors: NoWait, WaitDie, LockOrdered, WaitsForGraph.

Every protocol runs one attempt of a transaction at a time and reports an
``Outcome``; ``drain`` wraps attempts in the retry loop that masks cc-aborts.
Writes are buffered by the transaction program and applied at commit while
all locks are still held, so the commit log order is a valid serial order.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .pool import WorkerPool
from .storage import EXCLUSIVE_BIT, FREE, Record, Storage
from .txn import WRITE, AccessMode, Batch, Transaction

MAX_RETRIES = 1_000_000


class Outcome(Enum):
    COMMITTED = "committed"
    CC_ABORTED = "cc_aborted"
    LOGICAL_ABORTED = "logical_aborted"


class LockMode(Enum):
    SHARED = "S"
    EXCLUSIVE = "X"


def lock_mode(access: AccessMode) -> LockMode:
    return LockMode.EXCLUSIVE if access is WRITE else LockMode.SHARED


class Livelock(RuntimeError):
    pass


class _Conflict(Exception):
    """Raised inside a program when a lock cannot be granted."""


def backoff(spins: int) -> None:
    # bounded exponential pause; sleep(0) just yields the interpreter lock
    if spins < 8:
        time.sleep(0)
    else:
        time.sleep(min(1e-6 * (1 << min(spins - 8, 10)), 1e-3))


class _TwoPhase:
    """Held-lock bookkeeping for one attempt, asserting the 2PL discipline."""

    __slots__ = ("held", "shrinking")

    def __init__(self) -> None:
        self.held: list[tuple[Record, bool]] = []
        self.shrinking = False

    def acquired(self, rec: Record, exclusive: bool) -> None:
        assert not self.shrinking, "2PL violated: lock acquired after a release"
        self.held.append((rec, exclusive))

    def release_all(self) -> None:
        self.shrinking = True
        for rec, exclusive in reversed(self.held):
            if exclusive:
                rec.release_exclusive()
            else:
                rec.release_shared()
        self.held.clear()


def _commit(txn: Transaction, writes, log: list[int]) -> None:
    for cell, value in writes:
        cell.payload = value
    log.append(txn.txn_id)


# -- NoWait ------------------------------------------------------------------


def execute_nowait(txn: Transaction, storage: Storage, log: list[int]) -> Outcome:
    locks = _TwoPhase()
    get = storage.get

    def fetch(key, mode):
        rec = get(key)
        if not (rec.try_exclusive() if mode else rec.try_shared()):
            raise _Conflict
        locks.acquired(rec, bool(mode))
        return rec

    try:
        writes = txn.run(fetch)
    except _Conflict:
        locks.release_all()
        return Outcome.CC_ABORTED
    if writes is None:
        locks.release_all()
        return Outcome.LOGICAL_ABORTED
    _commit(txn, writes, log)
    locks.release_all()
    return Outcome.COMMITTED


# -- LockOrdered -------------------------------------------------------------


@dataclass
class WaitStats:
    spins: int = 0


def execute_lockordered(txn: Transaction, storage: Storage, log: list[int], stats: WaitStats) -> Outcome:
    locks = _TwoPhase()
    recs: dict = {}
    last = None
    for key, mode in sorted(txn.accesses):
        assert last is None or last < key, "lock order must be strictly increasing"
        last = key
        rec = storage.get(key)
        spins = 0
        while not (rec.try_exclusive() if mode else rec.try_shared()):
            spins += 1
            backoff(spins)
        stats.spins += spins
        locks.acquired(rec, bool(mode))
        recs[key] = rec
    writes = txn.run(lambda key, _mode: recs[key])
    if writes is None:
        locks.release_all()
        return Outcome.LOGICAL_ABORTED
    _commit(txn, writes, log)
    locks.release_all()
    return Outcome.COMMITTED


# -- owner-tracking lock table (WaitDie, WaitsForGraph) ----------------------


class _Waiter:
    __slots__ = ("ts", "exclusive", "granted")

    def __init__(self, ts: int, exclusive: bool) -> None:
        self.ts = ts
        self.exclusive = exclusive
        self.granted = False


class _LockState:
    __slots__ = ("owners", "waiters")

    def __init__(self) -> None:
        self.owners: dict[int, bool] = {}  # owner id -> exclusive
        self.waiters: list[_Waiter] = []  # strictly decreasing ts from head


class LockTable:
    """Side table of per-record owner sets and wait queues, allocated lazily.

    All mutation happens under the record latch; the record's lock word is
    kept in step so that a free record always reads FREE.
    """

    def __init__(self) -> None:
        self._states: dict[Record, _LockState] = {}

    def state(self, rec: Record) -> _LockState:
        st = self._states.get(rec)
        if st is None:
            st = self._states.setdefault(rec, _LockState())
        return st

    @staticmethod
    def compatible(st: _LockState, exclusive: bool) -> bool:
        if not st.owners:
            return True
        return not exclusive and not any(st.owners.values())

    @staticmethod
    def _sync_word(rec: Record, st: _LockState) -> None:
        owners = st.owners
        if not owners:
            rec.lock = FREE
            rec.owner_ts = 0
        else:
            rec.lock = EXCLUSIVE_BIT if any(owners.values()) else len(owners)
            rec.owner_ts = min(owners)
        if Record.tracing:
            Record.transitions += 1

    def grant_now(self, rec: Record, st: _LockState, owner: int, exclusive: bool) -> None:
        st.owners[owner] = exclusive
        self._sync_word(rec, st)

    def release(self, rec: Record, owner: int) -> None:
        with rec.latch:
            st = self._states[rec]
            del st.owners[owner]
            while st.waiters and self.compatible(st, st.waiters[0].exclusive):
                w = st.waiters.pop(0)
                st.owners[w.ts] = w.exclusive
                w.granted = True
            self._sync_word(rec, st)

    def queue_violations(self) -> int:
        bad = 0
        for st in self._states.values():
            ts = [w.ts for w in st.waiters]
            bad += any(a <= b for a, b in zip(ts, ts[1:]))
        return bad


class _OwnedLocks:
    __slots__ = ("table", "owner", "held", "shrinking")

    def __init__(self, table: LockTable, owner: int) -> None:
        self.table = table
        self.owner = owner
        self.held: list[Record] = []
        self.shrinking = False

    def acquired(self, rec: Record) -> None:
        assert not self.shrinking, "2PL violated: lock acquired after a release"
        self.held.append(rec)

    def release_all(self) -> None:
        self.shrinking = True
        for rec in reversed(self.held):
            self.table.release(rec, self.owner)
        self.held.clear()


# -- WaitDie -----------------------------------------------------------------


class TimestampSource:
    """Clock-based timestamps with the worker id in the low bits."""

    SHARD_BITS = 8

    def __init__(self, wid: int) -> None:
        assert wid < 1 << self.SHARD_BITS
        self.wid = wid
        self.last = 0

    def next(self) -> int:
        now = max(time.perf_counter_ns(), self.last + 1)
        self.last = now
        return (now << self.SHARD_BITS) | self.wid


def execute_waitdie(
    txn: Transaction, ts: int, storage: Storage, log: list[int], table: LockTable, stats: WaitStats
) -> Outcome:
    locks = _OwnedLocks(table, ts)
    get = storage.get

    def fetch(key, mode):
        rec = get(key)
        exclusive = bool(mode)
        with rec.latch:
            st = table.state(rec)
            if not st.waiters and table.compatible(st, exclusive):
                table.grant_now(rec, st, ts, exclusive)
                locks.acquired(rec)
                return rec
            if not all(ts < o for o in st.owners):
                raise _Conflict  # die: younger than some owner
            waiter = _Waiter(ts, exclusive)
            q = st.waiters
            pos = 0
            while pos < len(q) and q[pos].ts > ts:
                pos += 1
            q.insert(pos, waiter)
            assert all(a.ts > b.ts for a, b in zip(q, q[1:])), "wait queue must have strictly decreasing ts"
        spins = 0
        while not waiter.granted:
            spins += 1
            backoff(spins)
        stats.spins += spins
        locks.acquired(rec)
        return rec

    try:
        writes = txn.run(fetch)
    except _Conflict:
        locks.release_all()
        return Outcome.CC_ABORTED
    if writes is None:
        locks.release_all()
        return Outcome.LOGICAL_ABORTED
    _commit(txn, writes, log)
    locks.release_all()
    return Outcome.COMMITTED


# -- WaitsForGraph -----------------------------------------------------------


class WaitsForGraph:
    """Waits-for edges partitioned by worker thread.

    Cycle detection takes every partition lock in worker-id order, so two
    detectors never deadlock on each other.
    """

    def __init__(self, threads: int) -> None:
        self.parts: list[dict[int, tuple[int, ...]]] = [{} for _ in range(threads)]
        self.locks = [threading.Lock() for _ in range(threads)]
        self.detections = 0
        self.edges_added = 0

    def clear(self, wid: int, waiter: int) -> None:
        with self.locks[wid]:
            self.parts[wid].pop(waiter, None)

    def edge_count(self) -> int:
        return sum(len(o) for p in self.parts for o in p.values())

    def wait_and_check(self, wid: int, waiter: int, owners: tuple[int, ...]) -> bool:
        """Record ``waiter -> owners``; on a cycle drop the edges and return True.

        Insert and search happen under every partition lock, so of two
        waiters closing a cycle only the second one sees it and aborts.
        """
        for lock in self.locks:
            lock.acquire()
        try:
            self.parts[wid][waiter] = owners
            self.edges_added += len(owners)
            self.detections += 1
            if self._reaches(waiter):
                del self.parts[wid][waiter]
                return True
            return False
        finally:
            for lock in reversed(self.locks):
                lock.release()

    def _reaches(self, start: int) -> bool:
        edges: dict[int, tuple[int, ...]] = {}
        for part in self.parts:
            edges.update(part)
        seen = set()
        stack = list(edges.get(start, ()))
        while stack:
            u = stack.pop()
            if u == start:
                return True
            if u in seen:
                continue
            seen.add(u)
            stack.extend(edges.get(u, ()))
        return False


_attempt_ids = iter(range(1, 1 << 62))
_attempt_lock = threading.Lock()


def _next_attempt_id() -> int:
    with _attempt_lock:
        return next(_attempt_ids)


def execute_waitsforgraph(
    txn: Transaction, wid: int, storage: Storage, log: list[int], table: LockTable, wfg: WaitsForGraph, stats: WaitStats
) -> Outcome:
    me = _next_attempt_id()
    locks = _OwnedLocks(table, me)
    get = storage.get

    def fetch(key, mode):
        rec = get(key)
        exclusive = bool(mode)
        spins = 0
        last_owners = None
        while True:
            with rec.latch:
                st = table.state(rec)
                if table.compatible(st, exclusive):
                    table.grant_now(rec, st, me, exclusive)
                    break
                owners = tuple(st.owners)
            if owners != last_owners:
                if wfg.wait_and_check(wid, me, owners):
                    raise _Conflict
                last_owners = owners
            spins += 1
            backoff(spins)
        if last_owners is not None:
            wfg.clear(wid, me)
        stats.spins += spins
        locks.acquired(rec)
        return rec

    try:
        writes = txn.run(fetch)
    except _Conflict:
        locks.release_all()
        return Outcome.CC_ABORTED
    if writes is None:
        locks.release_all()
        return Outcome.LOGICAL_ABORTED
    _commit(txn, writes, log)
    locks.release_all()
    return Outcome.COMMITTED


# -- batch driver ------------------------------------------------------------

PROTOCOLS = ("nowait", "waitdie", "lockordered", "waitsforgraph")


@dataclass
class ProtocolResult:
    protocol: str
    commits: int = 0
    cc_aborts: int = 0
    logical_aborts: int = 0
    wait_spins: int = 0
    elapsed_s: float = 0.0
    commit_order: list[int] = field(default_factory=list)
    queue_violations: int = 0
    wait_edges: int = 0
    started_at: float = 0.0
    finished_at: float = 0.0

    @property
    def abort_rate(self) -> float:
        attempts = self.commits + self.logical_aborts + self.cc_aborts
        return self.cc_aborts / attempts if attempts else 0.0


def attempt_factory(protocol: str, storage: Storage, log: list[int], threads: int):
    """Returns ``make(wid) -> (attempt(txn) -> Outcome, WaitStats)``."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {', '.join(PROTOCOLS)}")
    table = LockTable()
    wfg = WaitsForGraph(threads)

    def make(wid: int) -> tuple[Callable[[Transaction], Outcome], WaitStats]:
        stats = WaitStats()
        if protocol == "nowait":
            return (lambda txn: execute_nowait(txn, storage, log)), stats
        if protocol == "lockordered":
            return (lambda txn: execute_lockordered(txn, storage, log, stats)), stats
        if protocol == "waitsforgraph":
            return (lambda txn: execute_waitsforgraph(txn, wid, storage, log, table, wfg, stats)), stats
        clock = TimestampSource(wid)
        stamps: dict[int, int] = {}

        def waitdie(txn: Transaction) -> Outcome:
            # a retried txn keeps its first timestamp, so it ages into priority
            ts = stamps.get(txn.txn_id)
            if ts is None:
                ts = stamps[txn.txn_id] = clock.next()
            return execute_waitdie(txn, ts, storage, log, table, stats)

        waitdie.stamps = stamps  # type: ignore[attr-defined]
        return waitdie, stats

    make.table = table  # type: ignore[attr-defined]
    make.wfg = wfg  # type: ignore[attr-defined]
    return make


def drain(
    queue: deque,
    attempt: Callable[[Transaction], Outcome],
    counts: list[int],
    max_retries: int = MAX_RETRIES,
) -> None:
    """Pull txns until the queue is empty; counts = [commits, cc_aborts, logical]."""
    while True:
        try:
            txn = queue.popleft()
        except IndexError:
            return
        retries = 0
        while True:
            outcome = attempt(txn)
            if outcome is Outcome.COMMITTED:
                counts[0] += 1
                break
            if outcome is Outcome.LOGICAL_ABORTED:
                counts[2] += 1
                break
            counts[1] += 1
            retries += 1
            # a bare yield first; persistent failures sleep so a descheduled holder can finish
            backoff(retries)
            if retries > max_retries:
                raise Livelock(f"txn {txn.txn_id} exceeded {max_retries} retries")


def run_protocol(
    batch: Batch,
    storage: Storage,
    protocol: str,
    pool: WorkerPool,
    max_retries: int = MAX_RETRIES,
    txns: list[Transaction] | None = None,
) -> ProtocolResult:
    """Execute ``txns`` (default: the whole batch) under one 2PL protocol."""
    log: list[int] = []
    make = attempt_factory(protocol, storage, log, pool.threads)
    queue = deque(batch.txns if txns is None else txns)
    per_worker = [[0, 0, 0] for _ in range(pool.threads)]
    stats: list[WaitStats | None] = [None] * pool.threads

    def work(wid: int) -> None:
        attempt, stats[wid] = make(wid)
        drain(queue, attempt, per_worker[wid], max_retries)

    result = ProtocolResult(protocol)
    result.started_at = time.perf_counter()
    pool.run(work)
    result.finished_at = time.perf_counter()
    result.elapsed_s = result.finished_at - result.started_at
    result.commits = sum(c[0] for c in per_worker)
    result.cc_aborts = sum(c[1] for c in per_worker)
    result.logical_aborts = sum(c[2] for c in per_worker)
    result.wait_spins = sum(s.spins for s in stats if s)
    result.commit_order = log
    result.queue_violations = make.table.queue_violations()
    result.wait_edges = make.wfg.edges_added
    return result
