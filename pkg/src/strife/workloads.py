"""Seeded batch generators: a New-Order/Payment TPC-C subset and partitioned YCSB."""

from __future__ import annotations

import random
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .storage import Key, Storage, TableSpec
from .txn import READ, WRITE, Batch, Transaction

# -- YCSB --------------------------------------------------------------------

USERTABLE = 0


@dataclass
class YcsbConfig:
    keys: int = 100_000
    payload: int = 128
    accesses: int = 20
    write_prob: float = 0.5
    partitions: int = 1
    theta: float = 0.9

    def __post_init__(self) -> None:
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        if not 0 <= self.write_prob <= 1:
            raise ValueError("write_prob must lie in [0, 1]")
        if self.partitions < 1 or self.keys // self.partitions < self.accesses:
            raise ValueError(f"{self.partitions} partitions of {self.keys} keys leave fewer keys than accesses")

    @property
    def partition_size(self) -> int:
        return self.keys // self.partitions

    def partition_range(self, p: int) -> range:
        size = self.partition_size
        return range(p * size, (p + 1) * size)


def ycsb_schema(cfg: YcsbConfig) -> list[TableSpec]:
    return [TableSpec(USERTABLE, "usertable", lambda: range(cfg.keys))]


@lru_cache(maxsize=16)
def zipf_pmf(n: int, theta: float) -> np.ndarray:
    """P(rank r) proportional to 1 / (r + 1)^theta for r in 0..n-1."""
    w = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** theta
    return w / w.sum()


@lru_cache(maxsize=16)
def _zipf_cdf(n: int, theta: float) -> np.ndarray:
    cdf = np.cumsum(zipf_pmf(n, theta))
    cdf[-1] = 1.0
    return cdf


def zipf_rank1_mass(n: int, theta: float) -> float:
    """Closed form of the hottest key's probability: 1 / H(n, theta)."""
    return 1.0 / sum(1.0 / (r**theta) for r in range(1, n + 1))


def zipf_ranks(rng: np.random.Generator, n: int, theta: float, shape) -> np.ndarray:
    return np.searchsorted(_zipf_cdf(n, theta), rng.random(shape), side="right")


class YcsbGenerator:
    """Successive YCSB batches with globally unique txn ids."""

    def __init__(self, cfg: YcsbConfig, seed: int = 0) -> None:
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.next_id = 0
        self.epoch = 0

    def batch(self, size: int) -> Batch:
        cfg = self.cfg
        rng = self.rng
        parts = rng.integers(cfg.partitions, size=size)
        ranks = zipf_ranks(rng, cfg.partition_size, cfg.theta, (size, cfg.accesses))
        keys = (ranks + (parts * cfg.partition_size)[:, None]).tolist()
        writes = (rng.random((size, cfg.accesses)) < cfg.write_prob).tolist()
        txns = []
        tid = self.next_id
        make = Transaction.make
        for ks, ws in zip(keys, writes):
            txns.append(make(tid, [(Key(USERTABLE, k), WRITE if w else READ) for k, w in zip(ks, ws)]))
            tid += 1
        self.next_id = tid
        self.epoch += 1
        return Batch(self.epoch, txns)


def gen_ycsb_batch(cfg: YcsbConfig, size: int, seed: int) -> Batch:
    return YcsbGenerator(cfg, seed).batch(size)


# -- TPC-C -------------------------------------------------------------------

WAREHOUSE, DISTRICT, CUSTOMER, ITEM, STOCK, ORDER, ORDER_LINE = range(1, 8)
LINES_PER_ORDER_SLOT = 16


@dataclass
class TpccConfig:
    warehouses: int = 4
    remote_payment: float = 0.15
    remote_item: float = 0.01
    items: int = 100_000
    districts: int = 10
    customers: int = 1_000  # per district
    order_slots: int = 64  # per district, reused round-robin
    min_lines: int = 5
    max_lines: int = 15
    new_order_fraction: float = 0.5
    invalid_item_per_10k: int = 100  # New-Order rollback rate

    def __post_init__(self) -> None:
        for name in ("remote_payment", "remote_item", "new_order_fraction"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.warehouses < 1:
            raise ValueError("warehouses must be >= 1")
        if not 1 <= self.min_lines <= self.max_lines < LINES_PER_ORDER_SLOT:
            raise ValueError(f"order lines must satisfy 1 <= min <= max < {LINES_PER_ORDER_SLOT}")
        if self.items < self.max_lines:
            raise ValueError("need at least max_lines distinct items")

    # primary-key encodings
    def district_pk(self, w: int, d: int) -> int:
        return w * self.districts + d

    def customer_pk(self, w: int, d: int, c: int) -> int:
        return self.district_pk(w, d) * self.customers + c

    def stock_pk(self, w: int, i: int) -> int:
        return w * self.items + i

    def order_pk(self, w: int, d: int, slot: int) -> int:
        return self.district_pk(w, d) * self.order_slots + slot

    def warehouse_of(self, key: Key) -> int | None:
        """Home warehouse of a row, None for the warehouse-less item table."""
        t, pk = key
        if t == WAREHOUSE:
            return pk
        if t == DISTRICT:
            return pk // self.districts
        if t == CUSTOMER:
            return pk // (self.customers * self.districts)
        if t == STOCK:
            return pk // self.items
        if t == ORDER:
            return pk // (self.order_slots * self.districts)
        if t == ORDER_LINE:
            return pk // (LINES_PER_ORDER_SLOT * self.order_slots * self.districts)
        return None


def tpcc_schema(cfg: TpccConfig) -> list[TableSpec]:
    nw, nd = cfg.warehouses, cfg.districts
    n_orders = nw * nd * cfg.order_slots
    return [
        TableSpec(WAREHOUSE, "warehouse", lambda: range(nw)),
        TableSpec(DISTRICT, "district", lambda: range(nw * nd)),
        TableSpec(CUSTOMER, "customer", lambda: range(nw * nd * cfg.customers)),
        TableSpec(ITEM, "item", lambda: range(cfg.items)),
        TableSpec(STOCK, "stock", lambda: range(nw * cfg.items)),
        TableSpec(ORDER, "order", lambda: range(n_orders)),
        TableSpec(
            ORDER_LINE,
            "order_line",
            lambda: (o * LINES_PER_ORDER_SLOT + ln for o in range(n_orders) for ln in range(cfg.max_lines)),
        ),
    ]


class TpccGenerator:
    """Successive New-Order/Payment batches.

    Order rows are addressed through a per-district slot counter, so the
    district row stays the real contention point for New-Order.
    """

    def __init__(self, cfg: TpccConfig, seed: int = 0) -> None:
        self.cfg = cfg
        self.rng = random.Random(seed)
        self.next_id = 0
        self.epoch = 0
        self.next_slot = [0] * (cfg.warehouses * cfg.districts)

    def _other_warehouse(self, w: int) -> int:
        o = self.rng.randrange(self.cfg.warehouses - 1)
        return o + (o >= w)

    def new_order(self, tid: int) -> Transaction:
        cfg, rng = self.cfg, self.rng
        w = rng.randrange(cfg.warehouses)
        d = rng.randrange(cfg.districts)
        c = rng.randrange(cfg.customers)
        dpk = cfg.district_pk(w, d)
        slot = self.next_slot[dpk]
        self.next_slot[dpk] = (slot + 1) % cfg.order_slots
        opk = cfg.order_pk(w, d, slot)
        acc = [
            (Key(WAREHOUSE, w), READ),
            (Key(DISTRICT, dpk), WRITE),
            (Key(CUSTOMER, cfg.customer_pk(w, d, c)), READ),
        ]
        items = rng.sample(range(cfg.items), rng.randint(cfg.min_lines, cfg.max_lines))
        remote_ok = cfg.warehouses > 1
        for i in items:
            supply = self._other_warehouse(w) if remote_ok and rng.random() < cfg.remote_item else w
            acc.append((Key(ITEM, i), READ))
            acc.append((Key(STOCK, cfg.stock_pk(supply, i)), WRITE))
        acc.append((Key(ORDER, opk), WRITE))
        acc.extend((Key(ORDER_LINE, opk * LINES_PER_ORDER_SLOT + ln), WRITE) for ln in range(len(items)))
        return Transaction.make(tid, acc, cfg.invalid_item_per_10k)

    def payment(self, tid: int) -> Transaction:
        cfg, rng = self.cfg, self.rng
        w = rng.randrange(cfg.warehouses)
        d = rng.randrange(cfg.districts)
        if cfg.warehouses > 1 and rng.random() < cfg.remote_payment:
            cw, cd = self._other_warehouse(w), rng.randrange(cfg.districts)
        else:
            cw, cd = w, d
        c = rng.randrange(cfg.customers)
        return Transaction.make(
            tid,
            [
                (Key(WAREHOUSE, w), WRITE),
                (Key(DISTRICT, cfg.district_pk(w, d)), WRITE),
                (Key(CUSTOMER, cfg.customer_pk(cw, cd, c)), WRITE),
            ],
        )

    def batch(self, size: int) -> Batch:
        txns = []
        for _ in range(size):
            gen = self.new_order if self.rng.random() < self.cfg.new_order_fraction else self.payment
            txns.append(gen(self.next_id))
            self.next_id += 1
        self.epoch += 1
        return Batch(self.epoch, txns)


def gen_tpcc_batch(cfg: TpccConfig, size: int, seed: int) -> Batch:
    return TpccGenerator(cfg, seed).batch(size)


def is_payment(txn: Transaction) -> bool:
    return not any(k.table == ORDER for k, _ in txn.accesses)


def is_remote_payment(txn: Transaction, cfg: TpccConfig) -> bool:
    home = {cfg.warehouse_of(k) for k, _ in txn.accesses if k.table != CUSTOMER}
    return is_payment(txn) and any(cfg.warehouse_of(k) not in home for k, _ in txn.accesses if k.table == CUSTOMER)


def load(schema: list[TableSpec], seed: int = 0, payload: int = 128) -> Storage:
    return Storage(payload).bulk_load(schema, seed)
