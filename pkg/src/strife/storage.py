"""In-memory tables addressed by primary key.

Every record carries its own concurrency metadata: a lock word used by the
2PL executors, an owner timestamp for WaitDie, and a cluster tag qualified by
an analysis epoch for the partitioner. All metadata transitions go through
the record's latch, which is the compare-and-swap primitive of this engine.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

DEFAULT_PAYLOAD_SIZE = 128

# lock word layout: high bit exclusive, low bits shared count
EXCLUSIVE_BIT = 1 << 62
FREE = 0

NO_CLUSTER = -1


class KeyNotFound(KeyError):
    pass


class DuplicateKey(ValueError):
    pass


class Key(NamedTuple):
    """(table-id, primary-key); tuple order is the global lock order."""

    table: int
    pk: int

    def __str__(self) -> str:
        return f"{self.table}:{self.pk}"

    @classmethod
    def parse(cls, text: str) -> "Key":
        table, _, pk = text.partition(":")
        if not _:
            raise ValueError(f"malformed key {text!r}, expected <table>:<pk>")
        return cls(int(table), int(pk))


class Record:
    # debug instrumentation: lock-word transitions counted while tracing
    tracing = False
    transitions = 0

    __slots__ = (
        "key",
        "payload",
        "latch",
        "lock",
        "owner_ts",
        "tag",
        "tag_epoch",
        "write_epoch",
    )

    def __init__(self, key: Key, payload: bytes) -> None:
        self.key = key
        self.payload = payload
        self.latch = threading.Lock()
        self.lock = FREE
        self.owner_ts = 0
        self.tag = NO_CLUSTER
        self.tag_epoch = 0
        self.write_epoch = 0

    def __repr__(self) -> str:
        return f"Record({self.key}, lock={self.lock:#x}, tag={self.tag}@{self.tag_epoch})"

    # -- cluster tag -------------------------------------------------------

    def cluster(self, epoch: int) -> int:
        """Cluster tag valid for ``epoch``, or NO_CLUSTER."""
        return self.tag if self.tag_epoch == epoch else NO_CLUSTER

    def claim(self, epoch: int, cluster: int) -> int:
        """CAS the tag from NULL to ``cluster`` within ``epoch``.

        Returns the tag held after the call: ``cluster`` when the swap won,
        the competing tag otherwise.
        """
        with self.latch:
            if self.tag_epoch != epoch:
                self.tag = cluster
                self.tag_epoch = epoch
                return cluster
            return self.tag

    # -- lock word ---------------------------------------------------------

    def try_shared(self) -> bool:
        with self.latch:
            word = self.lock
            if word & EXCLUSIVE_BIT:
                return False
            self.lock = word + 1
            if Record.tracing:
                Record.transitions += 1
            return True

    def try_exclusive(self) -> bool:
        with self.latch:
            if self.lock != FREE:
                return False
            self.lock = EXCLUSIVE_BIT
            if Record.tracing:
                Record.transitions += 1
            return True

    def release_shared(self) -> None:
        with self.latch:
            assert self.lock and not self.lock & EXCLUSIVE_BIT, "shared release without holder"
            self.lock -= 1
            if Record.tracing:
                Record.transitions += 1

    def release_exclusive(self) -> None:
        with self.latch:
            assert self.lock == EXCLUSIVE_BIT, "exclusive release without holder"
            self.lock = FREE
            if Record.tracing:
                Record.transitions += 1

    def cas_lock(self, expected: int, new: int) -> bool:
        with self.latch:
            if self.lock != expected:
                return False
            self.lock = new
            if Record.tracing:
                Record.transitions += 1
            return True


class Table:
    def __init__(self, table_id: int, name: str) -> None:
        self.id = table_id
        self.name = name
        self.index: dict[int, Record] = {}

    def __len__(self) -> int:
        return len(self.index)

    def __repr__(self) -> str:
        return f"Table({self.id}, {self.name!r}, rows={len(self)})"


@dataclass(frozen=True)
class TableSpec:
    """One table of a workload schema: id, name and its primary keys."""

    table_id: int
    name: str
    keys: Callable[[], Iterable[int]]


class Storage:
    """The get/put surface shared by every executor.

    Dict point operations are atomic under the interpreter lock, so the
    index needs no latch of its own; records are never deleted or moved,
    so references obtained from ``get`` stay valid for the process lifetime.
    """

    def __init__(self, payload_size: int = DEFAULT_PAYLOAD_SIZE) -> None:
        self.payload_size = payload_size
        self.tables: dict[int, Table] = {}
        self._epoch = 0
        self._epoch_lock = threading.Lock()

    def __len__(self) -> int:
        return sum(len(t) for t in self.tables.values())

    def create_table(self, table_id: int, name: str) -> Table:
        if table_id in self.tables:
            raise DuplicateKey(f"table {table_id} already exists")
        table = self.tables[table_id] = Table(table_id, name)
        return table

    def get(self, key: Key) -> Record:
        try:
            return self.tables[key[0]].index[key[1]]
        except KeyError:
            raise KeyNotFound(key) from None

    def put(self, key: Key, payload: bytes) -> None:
        self.get(key).payload = payload

    def insert(self, key: Key, payload: bytes | None = None) -> Record:
        table = self.tables.get(key[0])
        if table is None:
            table = self.create_table(key[0], f"t{key[0]}")
        if key[1] in table.index:
            raise DuplicateKey(key)
        rec = table.index[key[1]] = Record(key, payload if payload is not None else self.blank())
        return rec

    def blank(self) -> bytes:
        return bytes(self.payload_size)

    def records(self) -> Iterable[Record]:
        for table in self.tables.values():
            yield from table.index.values()

    def new_epoch(self) -> int:
        """Fresh analysis epoch; epoch 0 is the load epoch."""
        with self._epoch_lock:
            self._epoch += 1
            return self._epoch

    def bulk_load(self, schema: Iterable[TableSpec], seed: int = 0) -> "Storage":
        if len(self):
            raise ValueError("bulk_load requires empty storage")
        payload = initial_payload(seed, self.payload_size)
        for spec in schema:
            table = self.create_table(spec.table_id, spec.name)
            index = table.index
            tid = spec.table_id
            for pk in spec.keys():
                if pk in index:
                    raise DuplicateKey(Key(tid, pk))
                index[pk] = Record(Key(tid, pk), payload)
        return self


def initial_payload(seed: int, size: int = DEFAULT_PAYLOAD_SIZE) -> bytes:
    head = hashlib.blake2b(seed.to_bytes(8, "little", signed=True), digest_size=16).digest()
    return (head * (size // 16 + 1))[:size]
