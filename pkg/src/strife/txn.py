"""Transactions with static read/write sets, batches and their graph views."""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable, Protocol, Sequence

from .pool import WorkerPool
from .storage import Key, Record, Storage


class AccessMode(IntEnum):
    READ = 0
    WRITE = 1

    def __str__(self) -> str:
        return "R" if self is AccessMode.READ else "W"


READ = AccessMode.READ
WRITE = AccessMode.WRITE

# logical-abort predicate resolution: abort when digest % ABORT_SCALE < abort_below
ABORT_SCALE = 10_000


class Cell(Protocol):
    payload: bytes


Fetch = Callable[[Key, AccessMode], Cell]


@dataclass(frozen=True, eq=False)
class Transaction:
    """A transaction with its declared access set and a deterministic program.

    The program reads every declared key in order, folds the payloads into a
    digest seeded with the txn id, and overwrites the first 16 bytes of each
    written record with that digest. It logically aborts (after its reads,
    before any write becomes visible) when ``abort_below`` says so.
    """

    txn_id: int
    accesses: tuple[tuple[Key, AccessMode], ...]
    abort_below: int = 0

    @classmethod
    def make(
        cls,
        txn_id: int,
        accesses: Iterable[tuple[Key | tuple[int, int], AccessMode]],
        abort_below: int = 0,
    ) -> "Transaction":
        """Build a transaction, deduplicating keys; read+write becomes write."""
        order: dict[Key, AccessMode] = {}
        for key, mode in accesses:
            if type(key) is not Key:
                key = Key(*key)
            mode = WRITE if mode else READ
            if mode is WRITE or key not in order:
                order[key] = mode
        return cls(txn_id, tuple(order.items()), abort_below)

    @classmethod
    def rw(cls, txn_id: int, reads: Iterable = (), writes: Iterable = (), abort_below: int = 0) -> "Transaction":
        return cls.make(
            txn_id,
            [(Key(*k), READ) for k in reads] + [(Key(*k), WRITE) for k in writes],
            abort_below,
        )

    @property
    def keys(self) -> list[Key]:
        return [k for k, _ in self.accesses]

    @property
    def write_keys(self) -> list[Key]:
        return [k for k, m in self.accesses if m is WRITE]

    def __repr__(self) -> str:
        return f"Txn({format_txn(self)})"

    def run(self, fetch: Fetch) -> list[tuple[Cell, bytes]] | None:
        """Execute the program; returns the write buffer, or None on logical abort."""
        h = hashlib.blake2b(self.txn_id.to_bytes(8, "little"), digest_size=16)
        writes = []
        for key, mode in self.accesses:
            cell = fetch(key, mode)
            h.update(cell.payload)
            if mode:
                writes.append(cell)
        return self._commit(h, writes)

    def run_resolved(self, cells: Sequence[Cell]) -> list[tuple[Cell, bytes]] | None:
        """``run`` over cells already looked up, one per access in order."""
        h = hashlib.blake2b(self.txn_id.to_bytes(8, "little"), digest_size=16)
        writes = []
        for (_key, mode), cell in zip(self.accesses, cells):
            h.update(cell.payload)
            if mode:
                writes.append(cell)
        return self._commit(h, writes)

    def _commit(self, h, writes: list[Cell]) -> list[tuple[Cell, bytes]] | None:
        digest = h.digest()
        if self.abort_below and int.from_bytes(digest[:4], "little") % ABORT_SCALE < self.abort_below:
            return None
        return [(cell, digest + cell.payload[16:]) for cell in writes]


@dataclass
class Batch:
    epoch: int
    txns: list[Transaction]

    def __post_init__(self) -> None:
        ids = {t.txn_id for t in self.txns}
        if len(ids) != len(self.txns):
            raise ValueError("txn ids must be unique within a batch")

    def __len__(self) -> int:
        return len(self.txns)

    def __iter__(self):
        return iter(self.txns)


class ScratchItems(dict):
    """Item metadata for batches analysed without a loaded storage."""

    def __missing__(self, key: Key) -> Record:
        # setdefault is atomic, so racing workers end up sharing one record
        return self.setdefault(key, Record(key, b""))


@dataclass
class AccessGraph:
    """Bipartite transaction/item graph after read-only items were dropped.

    ``items[i]`` lists the records of batch txn ``i`` that are written by at
    least one transaction of the batch; read and write edges are not
    distinguished past this point.
    """

    batch: Batch
    epoch: int
    items: list[list[Record]]
    resolve: Callable[[Key], Record] = field(repr=False)
    # every access of txn i resolved, in access order, so execution can skip the lookups
    records: list[list[Record]] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.items)

    def retained_keys(self) -> set[Key]:
        return {rec.key for recs in self.items for rec in recs}


def preprocess(batch: Batch, storage: Storage | None = None, pool: WorkerPool | None = None) -> AccessGraph:
    """Two-pass scan: mark written items, then filter each access list."""
    resolve = storage.get if storage is not None else ScratchItems().__getitem__
    epoch = storage.new_epoch() if storage is not None else 1
    txns = batch.txns

    def mark(_wid: int, chunk: Sequence[Transaction]) -> list[list[Record]]:
        out = []
        for txn in chunk:
            recs = []
            for key, mode in txn.accesses:
                rec = resolve(key)
                if mode:
                    rec.write_epoch = epoch
                recs.append(rec)
            out.append(recs)
        return out

    def keep(_wid: int, chunk: Sequence[list[Record]]) -> list[list[Record]]:
        return [[r for r in recs if r.write_epoch == epoch] for recs in chunk]

    if pool is None or pool.threads == 1:
        all_recs = mark(0, txns)
        items = keep(0, all_recs)
    else:
        all_recs = [r for part in pool.map_chunks(mark, txns) for r in part]
        items = [r for part in pool.map_chunks(keep, all_recs) for r in part]
    return AccessGraph(batch, epoch, items, resolve, all_recs)


@dataclass
class ConflictGraph:
    """Transactions (by batch index) joined by conflicting accesses."""

    n: int
    adj: list[set[int]]

    @property
    def edges(self) -> set[tuple[int, int]]:
        return {(i, j) for i in range(self.n) for j in self.adj[i] if i < j}

    def components(self) -> list[list[int]]:
        seen = [False] * self.n
        comps = []
        for s in range(self.n):
            if seen[s]:
                continue
            seen[s] = True
            comp, stack = [], [s]
            while stack:
                u = stack.pop()
                comp.append(u)
                for v in self.adj[u]:
                    if not seen[v]:
                        seen[v] = True
                        stack.append(v)
            comps.append(sorted(comp))
        return comps


def build_conflict_graph(batch: Batch) -> ConflictGraph:
    n = len(batch.txns)
    readers: dict[Key, list[int]] = {}
    writers: dict[Key, list[int]] = {}
    for i, txn in enumerate(batch.txns):
        for key, mode in txn.accesses:
            (writers if mode else readers).setdefault(key, []).append(i)
    adj: list[set[int]] = [set() for _ in range(n)]
    for key, ws in writers.items():
        touch = ws + readers.get(key, [])
        for i in ws:
            for j in touch:
                if i != j:
                    adj[i].add(j)
                    adj[j].add(i)
    return ConflictGraph(n, adj)


def distance(t1: int, t2: int, graph: AccessGraph) -> float:
    """Half the shortest path length between two txns (batch indices)."""
    if t1 == t2:
        return 0
    by_item: dict[int, list[int]] = {}
    for i, recs in enumerate(graph.items):
        for rec in recs:
            by_item.setdefault(id(rec), []).append(i)
    dist = {t1: 0}
    frontier = deque([t1])
    while frontier:
        u = frontier.popleft()
        for rec in graph.items[u]:
            for v in by_item[id(rec)]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    if v == t2:
                        return dist[v]
                    frontier.append(v)
    return math.inf


# -- text format -------------------------------------------------------------
# txn <id> R <key>... W <key>... [A <abort_below>]
# Mode markers may repeat so that interleaved declaration order survives.


def format_txn(txn: Transaction) -> str:
    parts = ["txn", str(txn.txn_id)]
    current = None
    for key, mode in txn.accesses:
        if mode is not current:
            parts.append(str(mode))
            current = mode
        parts.append(f"{key.table}:{key.pk}")
    if txn.abort_below:
        parts += ["A", str(txn.abort_below)]
    return " ".join(parts)


def parse_txn(line: str) -> Transaction:
    tokens = line.split()
    if len(tokens) < 2 or tokens[0] != "txn":
        raise ValueError(f"not a txn line: {line!r}")
    txn_id = int(tokens[1])
    accesses = []
    mode = None
    abort_below = 0
    it = iter(tokens[2:])
    for tok in it:
        if tok == "R":
            mode = READ
        elif tok == "W":
            mode = WRITE
        elif tok == "A":
            abort_below = int(next(it))
        elif mode is None:
            raise ValueError(f"key before mode marker in {line!r}")
        else:
            accesses.append((Key.parse(tok), mode))
    return Transaction(txn_id, tuple(accesses), abort_below)


def dump_batch(batch: Batch) -> str:
    return "".join(format_txn(t) + "\n" for t in batch.txns)


def parse_batch(text: str, epoch: int = 1) -> Batch:
    txns = [parse_txn(line) for line in text.splitlines() if line.strip() and not line.startswith("#")]
    return Batch(epoch, txns)
