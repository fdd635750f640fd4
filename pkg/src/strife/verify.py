"""Offline oracles: witness replay, clustering validity and brute-force optima.

Nothing here shares code with the partitioner or the executors beyond the
transaction program itself, so these checks stay independent of the paths
they judge.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .partition import Clustering, Mode
from .storage import Key, Storage
from .txn import Batch

StateSnapshot = dict[Key, bytes]
WitnessSchedule = list[int]

ORACLE_LIMIT = 200


class _Cell:
    __slots__ = ("payload",)

    def __init__(self, payload: bytes) -> None:
        self.payload = payload


def touched_keys(batch: Batch) -> set[Key]:
    return {key for txn in batch.txns for key, _ in txn.accesses}


def snapshot(storage: Storage, keys: Iterable[Key]) -> StateSnapshot:
    return {key: storage.get(key).payload for key in keys}


class ReplayDiverged(AssertionError):
    pass


def replay_serial(batch: Batch, schedule: Sequence[int], initial: StateSnapshot) -> StateSnapshot:
    """Run the scheduled txns one at a time from ``initial``.

    Raises ReplayDiverged when a scheduled (committed) txn logically aborts
    during replay, since no serial order with that position explains it.
    """
    state = {key: _Cell(v) for key, v in initial.items()}
    by_id = {t.txn_id: t for t in batch.txns}
    fetch = lambda key, _mode: state[key]  # noqa: E731
    for tid in schedule:
        writes = by_id[tid].run(fetch)
        if writes is None:
            raise ReplayDiverged(f"txn {tid} committed by the engine aborts under the witness order")
        for cell, value in writes:
            cell.payload = value
    return {key: cell.payload for key, cell in state.items()}


def check_serializable(
    batch: Batch,
    final: StateSnapshot,
    witness: Sequence[int],
    initial: StateSnapshot,
    limit: int = ORACLE_LIMIT,
) -> bool:
    if len(batch) > limit:
        raise ValueError(f"oracle limited to {limit} txns, batch has {len(batch)}")
    if len(set(witness)) != len(witness):
        return False
    try:
        replayed = replay_serial(batch, witness, initial)
    except ReplayDiverged:
        return False
    return all(replayed[key] == final[key] for key in replayed)


# -- clustering validity -----------------------------------------------------


def clustering_violations(batch: Batch, clustering: Clustering, alpha: float) -> list[str]:
    """All breaches of partition-exactness, conflict-freedom and the residual bound."""
    n = len(batch)
    problems = []
    where = [None] * n
    for c, members in enumerate(clustering.members):
        for i in members:
            if where[i] is not None:
                problems.append(f"txn index {i} placed twice")
            where[i] = c
    for i in clustering.residual_idx:
        if where[i] is not None:
            problems.append(f"txn index {i} placed twice")
        where[i] = -1
    missing = [i for i in range(n) if where[i] is None]
    if missing:
        problems.append(f"txn indices {missing[:5]} not placed")

    accessors: dict[Key, list[tuple[int, bool]]] = {}
    for i, txn in enumerate(batch.txns):
        for key, mode in txn.accesses:
            accessors.setdefault(key, []).append((i, bool(mode)))
    for key, acc in accessors.items():
        if not any(w for _, w in acc):
            continue
        clusters = {where[i] for i, _ in acc if where[i] is not None and where[i] >= 0}
        if len(clusters) > 1:
            problems.append(f"item {key} conflicts across clusters {sorted(clusters)}")

    if clustering.mode is Mode.NORMAL and len(clustering.residual_idx) > alpha * n:
        problems.append(f"|R|={len(clustering.residual_idx)} exceeds alpha*|B|={alpha * n:g}")
    return problems


# -- brute force -------------------------------------------------------------


def conflict_pairs(batch: Batch) -> list[set[int]]:
    """Conflict adjacency by direct pairwise comparison of access sets."""
    txns = batch.txns
    modes = [dict(t.accesses) for t in txns]
    adj: list[set[int]] = [set() for _ in txns]
    for i in range(len(txns)):
        for j in range(i + 1, len(txns)):
            mi, mj = modes[i], modes[j]
            if any(mi[k] or mj[k] for k in mi.keys() & mj.keys()):
                adj[i].add(j)
                adj[j].add(i)
    return adj


Canonical = tuple[frozenset, frozenset]


@dataclass
class BruteForce:
    """Exhaustive enumeration of valid clusterings for tiny batches.

    A clustering is a residual set R with |R| <= alpha*|B| plus a set
    partition of the rest in which conflicting txns never sit in different
    blocks. Enumeration assigns txns in index order to R, an open block, or
    a new block, so every clustering appears exactly once.
    """

    batch: Batch
    alpha: float
    max_txns: int = 12

    def __post_init__(self) -> None:
        if len(self.batch) > self.max_txns:
            raise ValueError(f"brute force limited to {self.max_txns} txns")
        self.n = len(self.batch)
        self.adj = conflict_pairs(self.batch)
        self.r_cap = int(self.alpha * self.n + 1e-9)

    def _options(self, i: int, block_of: list[int], n_blocks: int, r_used: int) -> list[int]:
        """Legal placements for txn i: -1 for R, b < n_blocks, or n_blocks (new)."""
        opts = []
        if r_used < self.r_cap:
            opts.append(-1)
        placed = {block_of[j] for j in self.adj[i] if j < i and block_of[j] >= 0}
        if len(placed) == 1:
            opts.append(next(iter(placed)))
        elif not placed:
            opts.extend(range(n_blocks + 1))
        return opts

    def valid(self) -> Iterator[Canonical]:
        block_of = [-2] * self.n

        def rec(i: int, n_blocks: int, r_used: int) -> Iterator[Canonical]:
            if i == self.n:
                yield _canonical(block_of)
                return
            for b in self._options(i, block_of, n_blocks, r_used):
                block_of[i] = b
                yield from rec(i + 1, n_blocks + (b == n_blocks), r_used + (b == -1))
            block_of[i] = -2

        yield from rec(0, 0, 0)

    def count(self) -> int:
        return sum(1 for _ in self.valid())

    def optimum(self) -> int:
        """Minimum over valid clusterings of the largest cluster size."""
        best = self.n + 1
        block_of = [-2] * self.n
        sizes: list[int] = []

        def rec(i: int, r_used: int) -> None:
            nonlocal best
            if i == self.n:
                best = min(best, max(sizes, default=0))
                return
            n_blocks = len(sizes)
            for b in self._options(i, block_of, n_blocks, r_used):
                block_of[i] = b
                if b == -1:
                    rec(i + 1, r_used + 1)
                elif b == n_blocks:
                    if best > 1:
                        sizes.append(1)
                        rec(i + 1, r_used)
                        sizes.pop()
                elif sizes[b] + 1 < best:
                    sizes[b] += 1
                    rec(i + 1, r_used)
                    sizes[b] -= 1
            block_of[i] = -2

        rec(0, 0)
        return best

    def contains(self, clustering: Clustering) -> bool:
        """Whether the enumeration produces this clustering (followed step by step)."""
        target = [-2] * self.n
        for c, members in enumerate(clustering.members):
            for i in members:
                target[i] = c
        for i in clustering.residual_idx:
            target[i] = -1
        if any(t == -2 for t in target):
            return False
        relabel: dict[int, int] = {}
        block_of = [-2] * self.n
        r_used = 0
        for i, t in enumerate(target):
            n_blocks = len(relabel)
            b = -1 if t == -1 else relabel.get(t, n_blocks)
            if b not in self._options(i, block_of, n_blocks, r_used):
                return False
            if t != -1:
                relabel.setdefault(t, n_blocks)
            block_of[i] = b
            r_used += b == -1
        return True


def _canonical(block_of: Sequence[int]) -> Canonical:
    blocks: dict[int, set[int]] = {}
    residual = set()
    for i, b in enumerate(block_of):
        if b == -1:
            residual.add(i)
        else:
            blocks.setdefault(b, set()).add(i)
    return frozenset(residual), frozenset(frozenset(v) for v in blocks.values())


def canonical(clustering: Clustering) -> Canonical:
    return frozenset(clustering.residual_idx), frozenset(frozenset(m) for m in clustering.members if m)
