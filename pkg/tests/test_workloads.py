import random

import numpy as np
import pytest
from scipy import stats

from strife.partition import PartitionConfig, partition
from strife.storage import Key
from strife.txn import WRITE, build_conflict_graph, dump_batch
from strife.workloads import (
    CUSTOMER,
    DISTRICT,
    ITEM,
    ORDER,
    STOCK,
    WAREHOUSE,
    TpccConfig,
    YcsbConfig,
    gen_tpcc_batch,
    gen_ycsb_batch,
    is_payment,
    is_remote_payment,
    load,
    tpcc_schema,
    ycsb_schema,
    zipf_pmf,
    zipf_rank1_mass,
)

SMALL_TPCC = TpccConfig(warehouses=4, items=1000, customers=100)


def test_generators_are_pure():
    assert dump_batch(gen_tpcc_batch(SMALL_TPCC, 500, 3)) == dump_batch(gen_tpcc_batch(SMALL_TPCC, 500, 3))
    cfg = YcsbConfig(keys=10_000, partitions=4)
    assert dump_batch(gen_ycsb_batch(cfg, 500, 3)) == dump_batch(gen_ycsb_batch(cfg, 500, 3))
    assert dump_batch(gen_ycsb_batch(cfg, 500, 3)) != dump_batch(gen_ycsb_batch(cfg, 500, 4))


def test_generated_keys_exist():
    s = load(tpcc_schema(SMALL_TPCC))
    for t in gen_tpcc_batch(SMALL_TPCC, 2000, 1):
        for k in t.keys:
            s.get(k)
    cfg = YcsbConfig(keys=5000, partitions=5, theta=0.5)
    s = load(ycsb_schema(cfg))
    for t in gen_ycsb_batch(cfg, 500, 1):
        for k in t.keys:
            s.get(k)


def test_tpcc_zero_remote_stays_home():
    cfg = TpccConfig(warehouses=6, remote_payment=0, remote_item=0, items=1000, customers=100)
    for t in gen_tpcc_batch(cfg, 3000, 5):
        homes = {cfg.warehouse_of(k) for k in t.keys} - {None}
        assert len(homes) == 1


def test_tpcc_zero_remote_components_single_warehouse():
    cfg = TpccConfig(warehouses=5, remote_payment=0, remote_item=0, items=1000, customers=100)
    b = gen_tpcc_batch(cfg, 800, 6)
    for comp in build_conflict_graph(b).components():
        homes = {cfg.warehouse_of(k) for i in comp for k in b.txns[i].keys} - {None}
        assert len(homes) == 1


def test_remote_payment_binomial():
    cfg = TpccConfig(warehouses=8, items=1000, customers=100)
    b = gen_tpcc_batch(cfg, 100_000, 7)
    payments = [t for t in b if is_payment(t)]
    remote = sum(is_remote_payment(t, cfg) for t in payments)
    assert abs(len(payments) - 50_000) < 5 * (100_000 * 0.25) ** 0.5
    expected = 0.15 * len(payments)
    sd = (len(payments) * 0.15 * 0.85) ** 0.5
    assert abs(remote - expected) < 4 * sd
    assert abs(remote - 7500) < 4 * sd + abs(len(payments) - 50_000) * 0.15


def test_new_order_shape():
    b = gen_tpcc_batch(TpccConfig(warehouses=2, items=1000, customers=100), 4000, 8)
    sizes = []
    remote_stock = 0
    stock = 0
    for t in b:
        if is_payment(t):
            assert [k.table for k in t.keys] == [WAREHOUSE, DISTRICT, CUSTOMER]
            assert all(m is WRITE for _, m in t.accesses)
            continue
        modes = dict((k.table, m) for k, m in t.accesses)
        assert modes[WAREHOUSE] is not WRITE and modes[DISTRICT] is WRITE and modes[CUSTOMER] is not WRITE
        assert modes[STOCK] is WRITE and modes[ITEM] is not WRITE and modes[ORDER] is WRITE
        items = [k for k in t.keys if k.table == ITEM]
        sizes.append(len(items))
        home = t.keys[0].pk
        for k in t.keys:
            if k.table == STOCK:
                stock += 1
                remote_stock += k.pk // 1000 != home
    assert 9 <= np.mean(sizes) <= 11 and min(sizes) >= 5 and max(sizes) <= 15
    assert abs(remote_stock / stock - 0.01) < 0.004


def test_ycsb_shape():
    cfg = YcsbConfig(keys=40_000, partitions=4, theta=0.9)
    b = gen_ycsb_batch(cfg, 3000, 9)
    writes = total = 0
    for t in b:
        assert 1 <= len(t.accesses) <= 20
        parts = {k.pk // cfg.partition_size for k in t.keys}
        assert len(parts) == 1
        writes += sum(m is WRITE for _, m in t.accesses)
        total += len(t.accesses)
    assert 0.5 < writes / total < 0.6  # duplicates upgrade to write


def test_zipf_rank1_matches_law():
    n, theta = 100_000, 0.9
    cfg = YcsbConfig(keys=n, partitions=1, theta=theta)
    b = gen_ycsb_batch(cfg, 20_000, 10)
    counts = np.zeros(n)
    draws = 0
    for t in b:
        for k in t.keys:
            counts[k.pk] += 1
            draws += 1
    # duplicates inside a txn collapse, so compare per-txn hit rate against 1-(1-p)^20
    p1 = zipf_rank1_mass(n, theta)
    per_txn = 1 - (1 - p1) ** 20
    assert abs(counts[0] / len(b) - per_txn) / per_txn < 0.10
    assert abs(zipf_pmf(n, theta)[0] - p1) < 1e-12


def test_theta_zero_uniform_chi_square():
    cfg = YcsbConfig(keys=200, partitions=1, theta=0.0, accesses=20)
    b = gen_ycsb_batch(cfg, 5000, 11)
    counts = np.bincount([k.pk for t in b for k in t.keys], minlength=200)
    assert stats.chisquare(counts).pvalue > 0.001


def test_partition_ranges():
    cfg = YcsbConfig(keys=100_000, partitions=4)
    assert cfg.partition_range(3) == range(75_000, 100_000)
    with pytest.raises(ValueError):
        YcsbConfig(keys=30, partitions=4)
    with pytest.raises(ValueError):
        YcsbConfig(theta=-1)
    with pytest.raises(ValueError):
        TpccConfig(remote_payment=1.5)


def test_partitionable_tpcc_clusters_per_warehouse():
    cfg = TpccConfig(warehouses=4, remote_payment=0, remote_item=0, items=1000, customers=100)
    s = load(tpcc_schema(cfg))
    c = partition(gen_tpcc_batch(cfg, 2000, 12), PartitionConfig(spot_samples=80), storage=s)
    assert len(c.members) == 4 and c.residual_idx == []
