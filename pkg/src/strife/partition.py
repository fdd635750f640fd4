"""Analysis phase: split a batch into conflict-free clusters plus a residual.

Three stages run over the pre-processed access graph:

* spot     - sample ``c`` transactions; every sample whose items are all
             untagged seeds a new cluster and tags its items.
* allocate - scan the batch; a txn whose tagged items agree on one cluster
             joins it (tagging the rest by CAS), one spanning several
             clusters becomes residual. The last round places all-untagged
             txns into a random seed cluster.
* merge    - join cluster pairs co-accessed by many residuals, then
             re-allocate residuals that now map to a single root.
"""

from __future__ import annotations

import itertools
import random
import time
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .pool import WorkerPool
from .storage import NO_CLUSTER, Record, Storage
from .txn import AccessGraph, Batch, Transaction, preprocess

RESIDUAL = -1
UNALLOCATED = -2


class Mode(Enum):
    NORMAL = "normal"
    FALLBACK = "fallback"
    SEQUENTIAL = "sequential"


@dataclass
class PartitionConfig:
    alpha: float = 0.2
    spot_samples: int | None = None  # None: 10 x worker threads
    allocate_rounds: int = 2
    seed: int = 0
    fallback_threshold: float = 0.9

    def __post_init__(self) -> None:
        if not 0 <= self.alpha < 1:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.spot_samples is not None and self.spot_samples < 1:
            raise ValueError("spot_samples must be >= 1")
        if self.allocate_rounds < 1:
            raise ValueError("allocate_rounds must be >= 1")
        if not 0 < self.fallback_threshold <= 1:
            raise ValueError("fallback_threshold must lie in (0, 1]")

    def samples(self, threads: int) -> int:
        if self.spot_samples is None:
            return 10 * threads
        if self.spot_samples < threads:
            raise ValueError(f"spot_samples ({self.spot_samples}) must be >= worker threads ({threads})")
        return self.spot_samples


class ClusterForest:
    """Base clusters with root pointers; merging redirects one root."""

    def __init__(self) -> None:
        self.parent: list[int] = []
        self.size: list[int] = []  # txn count, meaningful at roots

    def __len__(self) -> int:
        return len(self.parent)

    def add(self) -> int:
        cid = len(self.parent)
        self.parent.append(cid)
        self.size.append(0)
        return cid

    def find(self, cid: int) -> int:
        parent = self.parent
        while parent[cid] != cid:
            cid = parent[cid]
        return cid

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        # larger cluster stays root; ties keep the smaller id
        if (self.size[ra], -ra) < (self.size[rb], -rb):
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra

    def roots(self) -> list[int]:
        return [c for c, p in enumerate(self.parent) if c == p]

    def flatten(self) -> None:
        find = self.find
        self.parent = [find(c) for c in range(len(self.parent))]


@dataclass
class StageTimings:
    pre_us: float = 0.0
    spot_us: float = 0.0
    alloc_us: float = 0.0
    merge_us: float = 0.0

    @property
    def total_us(self) -> float:
        return self.pre_us + self.spot_us + self.alloc_us + self.merge_us


@dataclass
class Clustering:
    """Clusters C1..Ck and residual R as batch indices, each in batch order."""

    batch: Batch
    members: list[list[int]]
    residual_idx: list[int]
    mode: Mode = Mode.NORMAL
    cluster_ids: list[int] = field(default_factory=list)
    timings: StageTimings = field(default_factory=StageTimings)
    # the normal-mode clustering a fallback replaced, kept for diagnostics
    candidate: "Clustering | None" = field(default=None, repr=False)
    # per-txn records resolved against the executing storage, when analysis had one
    records: list[list[Record]] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self.cluster_ids:
            self.cluster_ids = list(range(len(self.members)))

    @classmethod
    def fallback(cls, batch: Batch, timings: StageTimings | None = None) -> "Clustering":
        return cls(batch, [], list(range(len(batch))), Mode.FALLBACK, [], timings or StageTimings())

    @classmethod
    def sequential(cls, batch: Batch) -> "Clustering":
        members = [list(range(len(batch)))] if len(batch) else []
        return cls(batch, members, [], Mode.SEQUENTIAL)

    @property
    def clusters(self) -> list[list[Transaction]]:
        txns = self.batch.txns
        return [[txns[i] for i in m] for m in self.members]

    @property
    def residual(self) -> list[Transaction]:
        txns = self.batch.txns
        return [txns[i] for i in self.residual_idx]

    @property
    def sizes(self) -> list[int]:
        return [len(m) for m in self.members]

    @property
    def max_cluster(self) -> int:
        return max(self.sizes, default=0)

    def dump(self) -> str:
        txns = self.batch.txns
        lines = [
            f"cluster {cid}: " + " ".join(str(txns[i].txn_id) for i in m)
            for cid, m in zip(self.cluster_ids, self.members)
        ]
        lines.append("residual: " + " ".join(str(txns[i].txn_id) for i in self.residual_idx))
        t = self.timings
        lines.append(
            f"analysis pre={t.pre_us:.0f} spot={t.spot_us:.0f} alloc={t.alloc_us:.0f} merge={t.merge_us:.0f}"
        )
        return "\n".join(line.rstrip() for line in lines) + "\n"


@dataclass
class Allocation:
    """Mutable analysis state shared by the stages of one partition run."""

    graph: AccessGraph
    forest: ClusterForest
    assign: list[int]  # cluster id, RESIDUAL or UNALLOCATED per txn
    seeds: int = 0  # number of spot clusters k

    @property
    def residual(self) -> list[int]:
        return [i for i, a in enumerate(self.assign) if a == RESIDUAL]


# -- spot --------------------------------------------------------------------


def spot(graph: AccessGraph, cfg: PartitionConfig, threads: int = 1) -> Allocation:
    n = len(graph)
    forest = ClusterForest()
    alloc = Allocation(graph, forest, [UNALLOCATED] * n)
    if n == 0:
        return alloc
    rng = random.Random(cfg.seed)
    epoch = graph.epoch
    items = graph.items
    assign = alloc.assign
    for _ in range(cfg.samples(threads)):
        i = rng.randrange(n)
        if assign[i] != UNALLOCATED:
            continue
        recs = items[i]
        if any(r.tag_epoch == epoch for r in recs):
            continue
        cid = forest.add()
        for r in recs:
            r.claim(epoch, cid)
        assign[i] = cid
        forest.size[cid] += 1
    alloc.seeds = len(forest)
    return alloc


# -- allocate ----------------------------------------------------------------


def _place(recs: list[Record], epoch: int, pick: random.Random | None, k: int) -> int:
    """Classify one txn against current tags; tags its untagged items on success."""
    cluster = NO_CLUSTER
    untagged = []
    for r in recs:
        tag = r.tag if r.tag_epoch == epoch else NO_CLUSTER
        if tag == NO_CLUSTER:
            untagged.append(r)
        elif cluster == NO_CLUSTER:
            cluster = tag
        elif tag != cluster:
            return RESIDUAL
    if cluster == NO_CLUSTER:
        if pick is None:
            return UNALLOCATED
        cluster = pick.randrange(k)
    for r in untagged:
        # a lost CAS means another cluster got there first
        if r.claim(epoch, cluster) != cluster:
            return RESIDUAL
    return cluster


def allocate(alloc: Allocation, cfg: PartitionConfig, pool: WorkerPool | None = None) -> Allocation:
    graph = alloc.graph
    n = len(graph)
    if n == 0:
        return alloc
    epoch = graph.epoch
    items = graph.items
    assign = alloc.assign
    k = alloc.seeds
    threads = pool.threads if pool else 1

    def run_round(last: bool, rnd: int) -> None:
        def chunk(wid: int, idx: Sequence[int]) -> None:
            pick = random.Random(cfg.seed * 1_000_003 + rnd * 7919 + wid) if last else None
            for i in idx:
                if assign[i] == UNALLOCATED:
                    assign[i] = _place(items[i], epoch, pick, k)

        if threads == 1:
            chunk(0, range(n))
        else:
            pool.map_chunks(chunk, range(n))

    for rnd in range(cfg.allocate_rounds):
        run_round(rnd == cfg.allocate_rounds - 1, rnd)

    sizes = alloc.forest.size
    counts = Counter(a for a in assign if a >= 0)
    for cid in range(len(sizes)):
        sizes[cid] = counts.get(cid, 0)
    return alloc


# -- pair counts -------------------------------------------------------------


@dataclass
class PairCounts:
    """N(Ci, Cj) over unordered base-cluster pairs, plus each residual's clusters."""

    pairs: Counter
    touched: dict[int, tuple[int, ...]]  # residual txn index -> base clusters seen

    def __getitem__(self, pair: tuple[int, int]) -> int:
        a, b = pair
        return self.pairs.get((min(a, b), max(a, b)), 0)


def count_pairs(alloc: Allocation, pool: WorkerPool | None = None) -> PairCounts:
    epoch = alloc.graph.epoch
    items = alloc.graph.items
    residual = alloc.residual

    def chunk(_wid: int, idx: Sequence[int]) -> tuple[Counter, dict]:
        local: Counter = Counter()
        touched = {}
        for i in idx:
            cids = tuple(sorted({r.tag for r in items[i] if r.tag_epoch == epoch}))
            touched[i] = cids
            local.update(itertools.combinations(cids, 2))
        return local, touched

    if pool is None or pool.threads == 1:
        parts = [chunk(0, residual)]
    else:
        parts = pool.map_chunks(chunk, residual)
    pairs: Counter = Counter()
    touched: dict[int, tuple[int, ...]] = {}
    for local, t in parts:
        pairs.update(local)
        touched.update(t)
    return PairCounts(pairs, touched)


# -- merge -------------------------------------------------------------------


def should_merge(n_pair: int, size_i: int, size_j: int, alpha: float) -> bool:
    return n_pair > alpha * (size_i + size_j + n_pair)


def _root_pairs(forest: ClusterForest, counts: PairCounts) -> Counter:
    find = forest.find
    agg: Counter = Counter()
    for (a, b), v in counts.pairs.items():
        ra, rb = find(a), find(b)
        if ra != rb:
            agg[(ra, rb) if ra < rb else (rb, ra)] += v
    return agg


def _projected_residual(forest: ClusterForest, counts: PairCounts) -> int:
    find = forest.find
    return sum(1 for cids in counts.touched.values() if len({find(c) for c in cids}) > 1)


def merge_clusters(forest: ClusterForest, counts: PairCounts, alpha: float, batch_size: int) -> int:
    """Merge pairs meeting the criterion until none does; returns merge count.

    Pairs are scanned by descending count, then ascending ids. If the
    fixpoint still leaves more than ``alpha * batch_size`` residuals, the
    heaviest pairs keep merging until the bound holds.
    """
    merges = 0
    while True:
        agg = _root_pairs(forest, counts)
        done: set[int] = set()
        for (a, b), n_pair in sorted(agg.items(), key=lambda kv: (-kv[1], kv[0])):
            if a in done or b in done:
                continue
            if should_merge(n_pair, forest.size[a], forest.size[b], alpha):
                forest.union(a, b)
                done.update((a, b))
                merges += 1
        if not done:
            break
    bound = alpha * batch_size
    while _projected_residual(forest, counts) > bound:
        agg = _root_pairs(forest, counts)
        if not agg:
            break
        (a, b), _ = min(agg.items(), key=lambda kv: (-kv[1], kv[0]))
        forest.union(a, b)
        merges += 1
    forest.flatten()
    return merges


def reallocate(alloc: Allocation, counts: PairCounts, pool: WorkerPool | None = None) -> None:
    """Move residuals whose clusters now share one root into that cluster."""
    epoch = alloc.graph.epoch
    items = alloc.graph.items
    assign = alloc.assign
    root = alloc.forest.parent  # flattened
    candidates = [i for i, cids in counts.touched.items() if len({root[c] for c in cids}) == 1]

    def chunk(_wid: int, idx: Sequence[int]) -> None:
        for i in idx:
            r = root[counts.touched[i][0]]
            ok = True
            for rec in items[i]:
                # untagged at count time, maybe claimed since by another residual
                got = rec.tag if rec.tag_epoch == epoch else rec.claim(epoch, r)
                if root[got] != r:
                    ok = False
                    break
            if ok:
                assign[i] = r

    if pool is None or pool.threads == 1:
        chunk(0, candidates)
    else:
        pool.map_chunks(chunk, candidates)


def merge(alloc: Allocation, counts: PairCounts, cfg: PartitionConfig, pool: WorkerPool | None = None) -> int:
    merges = 0
    if counts.touched:
        merges = merge_clusters(alloc.forest, counts, cfg.alpha, len(alloc.assign))
        reallocate(alloc, counts, pool)
    return merges


# -- driver ------------------------------------------------------------------


def finish(alloc: Allocation, cfg: PartitionConfig, timings: StageTimings) -> Clustering:
    batch = alloc.graph.batch
    n = len(batch)
    find = alloc.forest.find
    groups: dict[int, list[int]] = {}
    residual = []
    for i, a in enumerate(alloc.assign):
        if a >= 0:
            groups.setdefault(find(a), []).append(i)
        else:
            assert a == RESIDUAL, f"txn {i} left unallocated"
            residual.append(i)
    ids = sorted(groups)
    members = [groups[r] for r in ids]
    result = Clustering(batch, members, residual, Mode.NORMAL, ids, timings)
    if n and (result.max_cluster > cfg.fallback_threshold * n or len(residual) > cfg.alpha * n):
        fallback = Clustering.fallback(batch, timings)
        fallback.candidate = result
        return fallback
    return result


def partition(
    batch: Batch,
    cfg: PartitionConfig | None = None,
    storage: Storage | None = None,
    pool: WorkerPool | None = None,
) -> Clustering:
    cfg = cfg or PartitionConfig()
    threads = pool.threads if pool else 1
    timings = StageTimings()
    clock = time.perf_counter

    t0 = clock()
    graph = preprocess(batch, storage, pool)
    t1 = clock()
    alloc = spot(graph, cfg, threads)
    t2 = clock()
    allocate(alloc, cfg, pool)
    counts = count_pairs(alloc, pool)
    t3 = clock()
    merge(alloc, counts, cfg, pool)
    t4 = clock()

    timings.pre_us = (t1 - t0) * 1e6
    timings.spot_us = (t2 - t1) * 1e6
    timings.alloc_us = (t3 - t2) * 1e6
    timings.merge_us = (t4 - t3) * 1e6
    result = finish(alloc, cfg, timings)
    if storage is not None:
        result.records = graph.records
    return result
