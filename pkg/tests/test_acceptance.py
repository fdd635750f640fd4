"""Acceptance criteria 1-11; each test records one pass/fail line."""

from __future__ import annotations

import random
import statistics
import time

import pytest

from strife.bench import RunConfig, run
from strife.executor import StrifeEngine, run_batch
from strife.partition import (
    UNALLOCATED,
    Allocation,
    ClusterForest,
    Clustering,
    Mode,
    PartitionConfig,
    allocate,
    count_pairs,
    merge,
    partition,
    should_merge,
    spot,
)
from strife.pool import WorkerPool
from strife.protocols import PROTOCOLS, run_protocol
from strife.storage import Key
from strife.txn import Batch, preprocess
from strife.verify import BruteForce, check_serializable, clustering_violations, snapshot, touched_keys

from batches import mixed_batch, random_batch, star, storage_for, structured_batches, txn

pytestmark = pytest.mark.slow

ALPHA = 0.2


def test_c01_clustering_validity(criterion):
    rng = random.Random(2024)
    bad = []
    t0 = time.perf_counter()
    with WorkerPool(4) as pool:
        for trial in range(10_000):
            b = mixed_batch(rng, 5, 1000)
            use = pool if trial % 10 == 0 else None
            c = partition(b, PartitionConfig(alpha=ALPHA, seed=trial), pool=use)
            problems = clustering_violations(b, c, ALPHA)
            if problems:
                bad.append((trial, problems[0]))
    elapsed = time.perf_counter() - t0
    criterion(
        1,
        "clustering validity",
        not bad and elapsed < 120,
        f"10000 batches, {len(bad)} invalid, {elapsed:.1f}s (limit 120s)" + (f", first {bad[0]}" if bad else ""),
    )


def _mutate(c: Clustering, batch: Batch) -> Clustering | None:
    """Pull one txn out of a cluster it conflicts with and give it its own cluster first in id order."""
    for members in sorted(c.members, key=len, reverse=True):
        if len(members) < 3:
            return None
        written: dict[Key, list[int]] = {}
        for i in members:
            for k, m in batch.txns[i].accesses:
                written.setdefault(k, []).append(i)
        for i in members[1:]:
            wkeys = batch.txns[i].write_keys
            if any(len(written[k]) > 1 for k in wkeys):
                rest = [[j for j in m if j != i] for m in c.members]
                return Clustering(batch, [[i]] + rest, list(c.residual_idx), Mode.NORMAL)
    return None


def test_c02_serializability_oracle(criterion, fast_switching):
    rng = random.Random(7)
    failures = []
    pools = {t: WorkerPool(t) for t in range(4, 9)}
    try:
        for trial in range(1000):
            threads = 4 + trial % 5
            keys = rng.randint(10, 600)
            b = random_batch(rng, rng.randint(5, 200), keys, rng.randint(1, 6), rng.uniform(0.2, 0.8), abort_below=200)
            s = storage_for(keys, seed=trial)
            initial = snapshot(s, touched_keys(b))
            out = StrifeEngine(s, pools[threads], PartitionConfig(alpha=ALPHA, seed=trial), debug=True).run(b)
            if not check_serializable(b, snapshot(s, touched_keys(b)), out.witness, initial):
                failures.append(trial)

        caught = tried = 0
        trial = 0
        while tried < 100:
            trial += 1
            mrng = random.Random(10_000 + trial)
            b = random_batch(mrng, 100, 300, 4, 0.5)
            c = partition(b, PartitionConfig(alpha=ALPHA, seed=trial))
            bad = _mutate(c, b) if c.mode is Mode.NORMAL else None
            if bad is None:
                continue
            tried += 1
            s = storage_for(300, seed=trial)
            initial = snapshot(s, touched_keys(b))
            out = run_batch(s, b, bad, pools[4 + trial % 5])
            caught += not check_serializable(b, snapshot(s, touched_keys(b)), out.witness, initial)
    finally:
        for p in pools.values():
            p.close()
    criterion(
        2,
        "serializability oracle",
        not failures and caught >= 1,
        f"1000 pipeline trials, {len(failures)} non-serializable; mutation caught {caught}/100",
    )


def test_c03_brute_force_agreement(criterion):
    outside = []
    gaps = []
    n_batches = 0
    for shape, b in structured_batches(12):
        bf = BruteForce(b, ALPHA)
        opt = bf.optimum()
        for seed in range(3):
            c = partition(b, PartitionConfig(alpha=ALPHA, seed=seed))
            judged = c.candidate if c.mode is Mode.FALLBACK else c
            n_batches += 1
            if not bf.contains(judged):
                outside.append((shape, seed))
            gaps.append(judged.max_cluster - opt)
    star_opt = BruteForce(Batch(1, star(0, 4, 0)), ALPHA).optimum()
    criterion(
        3,
        "brute-force agreement",
        not outside and star_opt == 1 and min(gaps) >= 0,
        f"{n_batches} runs, {len(outside)} outside the valid set, star optimum {star_opt}, "
        f"gap mean {statistics.mean(gaps):.2f} max {max(gaps)}",
    )


def test_c04_spot_probability(criterion):
    k, c = 8, 64
    txns = [txn(i, writes=[i % k, 1000 + i]) for i in range(800)]
    b = Batch(1, txns)
    hits = 0
    for seed in range(2000):
        graph = preprocess(b)
        spot(graph, PartitionConfig(spot_samples=c, seed=seed))
        hot = [r for recs in graph.items for r in recs if r.key.pk < k]
        tags = {r.key.pk: r.cluster(graph.epoch) for r in hot}
        hits += len(tags) == k and -1 not in tags.values() and len(set(tags.values())) == k
    frac = hits / 2000
    bound = 1 - (1 - 1 / k) ** c
    criterion(4, "spot-stage probability", frac >= 0.9, f"{frac:.4f} of 2000 seeds (per-item bound {bound:.6f})")


def _two_cluster_merge(n_cross: int) -> tuple[bool, int]:
    c1 = [txn(i, writes=[0, 1000 + i]) for i in range(30)]
    c2 = [txn(100 + i, writes=[1, 2000 + i]) for i in range(40)]
    cross = [txn(500 + i, writes=[0, 1]) for i in range(n_cross)]
    b = Batch(1, c1 + c2 + cross)
    graph = preprocess(b)
    forest = ClusterForest()
    alloc = Allocation(graph, forest, [UNALLOCATED] * len(b))
    for i in (0, 30):
        cid = forest.add()
        for r in graph.items[i]:
            r.claim(graph.epoch, cid)
        alloc.assign[i] = cid
    alloc.seeds = 2
    cfg = PartitionConfig(alpha=ALPHA)
    allocate(alloc, cfg)
    assert forest.size[:2] == [30, 40]
    merge(alloc, count_pairs(alloc), cfg)
    return forest.find(0) == forest.find(1), len(alloc.residual)


def test_c05_merge_criterion(criterion):
    no = should_merge(10, 30, 40, ALPHA)
    yes = should_merge(20, 30, 40, ALPHA)
    merged10, res10 = _two_cluster_merge(10)
    merged20, res20 = _two_cluster_merge(20)
    ok = not no and yes and not merged10 and res10 == 10 and merged20 and res20 == 0
    criterion(
        5,
        "merge criterion",
        ok,
        f"N=10: criterion {no}, merged {merged10}, |R| {res10}; N=20: criterion {yes}, merged {merged20}, |R| {res20}",
    )


def test_c06_protocol_correctness(criterion, fast_switching):
    rng = random.Random(66)
    bad: dict[str, int] = dict.fromkeys(PROTOCOLS, 0)
    lo_aborts = 0
    queue_bad = 0
    pools = {t: WorkerPool(t) for t in range(4, 9)}
    try:
        for protocol in PROTOCOLS:
            for trial in range(500):
                keys = rng.randint(5, 300)
                b = random_batch(rng, rng.randint(5, 150), keys, rng.randint(1, 6), rng.uniform(0.2, 0.8), 200)
                s = storage_for(keys, seed=trial)
                initial = snapshot(s, touched_keys(b))
                res = run_protocol(b, s, protocol, pools[4 + trial % 5])
                ok = res.commits == len(b) - res.logical_aborts
                ok = ok and check_serializable(b, snapshot(s, touched_keys(b)), res.commit_order, initial)
                bad[protocol] += not ok
                if protocol == "lockordered":
                    lo_aborts += res.cc_aborts
                if protocol == "waitdie":
                    queue_bad += res.queue_violations
    finally:
        for p in pools.values():
            p.close()
    criterion(
        6,
        "protocol correctness",
        not any(bad.values()) and lo_aborts == 0 and queue_bad == 0,
        f"failures per protocol {bad}, lockordered cc-aborts {lo_aborts}, waitdie queue violations {queue_bad}",
    )


YCSB_DESK = dict(workload="ycsb", partitions=15, keys=100_000, batch_size=10_000, batches=3, threads=8, seed=42)
REPEATS = 3


def _median_tps(theta: float, engines=("strife", "nowait")) -> dict[str, float]:
    """Median throughput per engine over interleaved repeats, damping machine noise."""
    runs: dict[str, list[float]] = {e: [] for e in engines}
    for _ in range(REPEATS):
        for e in engines:
            runs[e].append(run(RunConfig(protocol=e, theta=theta, **YCSB_DESK)).throughput_tps)
    return {e: statistics.median(v) for e, v in runs.items()}


def test_c07_high_contention_win(criterion):
    t0 = time.perf_counter()
    tps = _median_tps(0.9)
    elapsed = time.perf_counter() - t0
    ratio = tps["strife"] / tps["nowait"]
    criterion(
        7,
        "high-contention win",
        ratio >= 1.3 and elapsed < 300,
        f"theta 0.9, median of {REPEATS}: strife {tps['strife']:.0f} tps, nowait {tps['nowait']:.0f} tps, "
        f"ratio {ratio:.2f} (need >= 1.3), {elapsed:.0f}s",
    )


def test_c08_low_contention_loss(criterion):
    tps = _median_tps(0.1)
    ratio = tps["nowait"] / tps["strife"]
    criterion(
        8,
        "low-contention loss",
        ratio >= 1.0,
        f"theta 0.1, median of {REPEATS}: nowait {tps['nowait']:.0f} tps, strife {tps['strife']:.0f} tps, "
        f"nowait/strife {ratio:.2f} (need >= 1.0)",
    )


TPCC_DESK = dict(workload="tpcc", protocol="strife", batch_size=10_000, batches=3, seed=42)


def test_c09_warehouse_sweep(criterion):
    ws = [2, 4, 8, 15]
    cfree, resid = [], []
    for w in ws:
        rep = run(RunConfig(warehouses=w, threads=8, **TPCC_DESK))
        cfree.append(statistics.mean(r["t_cfree_us"] for r in rep.rows) / 1e3)
        resid.append(statistics.mean(r["residual_size"] for r in rep.rows))
    # a step up of at most 10% counts as noise
    decreasing = all(b < a * 1.10 for a, b in zip(cfree, cfree[1:]))
    non_increasing = all(b <= a for a, b in zip(resid, resid[1:]))
    criterion(
        9,
        "warehouse sweep",
        decreasing and non_increasing,
        f"W {ws}: conflict-free ms {[round(x, 1) for x in cfree]} (decreasing within 10%: {decreasing}); "
        f"residual {[round(x) for x in resid]} (non-increasing: {non_increasing})",
    )


def test_c10_scalability_knee(criterion):
    tps = {}
    for t in (2, 4, 8):
        tps[t] = run(RunConfig(warehouses=4, threads=t, **TPCC_DESK)).throughput_tps
    speedup = tps[4] / tps[2]
    knee = (tps[8] - tps[4]) < (tps[4] - tps[2])
    criterion(
        10,
        "scalability knee",
        speedup >= 1.6 and knee,
        f"tps {{2: {tps[2]:.0f}, 4: {tps[4]:.0f}, 8: {tps[8]:.0f}}}; 4/2 speedup {speedup:.2f} (need >= 1.6); "
        f"4->8 gain smaller than 2->4: {knee}",
    )


@pytest.mark.parametrize("warehouses", [8, 15])
def test_c11_partitionable_tpcc(criterion, warehouses):
    rep = run(
        RunConfig(
            warehouses=warehouses,
            threads=8,
            remote_payment=0.0,
            remote_item=0.0,
            **{**TPCC_DESK, "batches": 5},
        )
    )
    shapes = [(r["clusters"], r["residual_size"]) for r in rep.rows]
    ok = all(c == warehouses and res == 0 for c, res in shapes)
    criterion(11, f"partitionable tpcc W={warehouses}", ok, f"(clusters, |R|) per batch {shapes}")
