"""Benchmark harness: one warm-up batch, then timed batches, one report row each."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Sequence

from .executor import StrifeEngine
from .partition import PartitionConfig
from .pool import WorkerPool
from .protocols import PROTOCOLS, run_protocol
from .storage import Storage
from .workloads import TpccConfig, TpccGenerator, YcsbConfig, YcsbGenerator, load, tpcc_schema, ycsb_schema

ENGINES = ("strife",) + PROTOCOLS
COLUMNS = [
    "batch",
    "protocol",
    "threads",
    "throughput_tps",
    "t_pre_us",
    "t_spot_us",
    "t_alloc_us",
    "t_merge_us",
    "t_cfree_us",
    "t_residual_us",
    "clusters",
    "max_cluster",
    "residual_size",
    "cc_aborts",
    "commits",
]
EXTRA_COLUMNS = ["eta1_us", "eta2_us"]

YCSB_ONLY = {"theta", "partitions", "keys"}
TPCC_ONLY = {"warehouses", "remote_payment", "remote_item", "items", "customers"}


@dataclass
class RunConfig:
    workload: str = "ycsb"
    protocol: str = "strife"
    threads: int = 8
    batch_size: int = 10_000
    batches: int = 5
    warmup: int = 1
    alpha: float = 0.2
    spot_samples: int | None = None
    seed: int = 42
    emit: str = "csv"
    out: str | None = None
    # ycsb
    theta: float = 0.9
    partitions: int = 1
    keys: int = 100_000
    # tpcc
    warehouses: int = 4
    remote_payment: float = 0.15
    remote_item: float = 0.01
    items: int = 10_000
    customers: int = 1_000
    debug: bool = False

    def __post_init__(self) -> None:
        if self.workload not in ("ycsb", "tpcc"):
            raise ValueError(f"workload must be ycsb or tpcc, got {self.workload!r}")
        if self.protocol not in ENGINES:
            raise ValueError(f"protocol must be one of {', '.join(ENGINES)}, got {self.protocol!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.batches < 1:
            raise ValueError("batches must be >= 1")
        if self.batch_size < 1 or self.warmup < 0:
            raise ValueError("batch_size must be >= 1 and warmup >= 0")
        if self.emit not in ("csv", "json"):
            raise ValueError("emit must be csv or json")
        PartitionConfig(alpha=self.alpha, spot_samples=self.spot_samples).samples(self.threads)

    def ycsb(self) -> YcsbConfig:
        return YcsbConfig(keys=self.keys, partitions=self.partitions, theta=self.theta)

    def tpcc(self) -> TpccConfig:
        return TpccConfig(
            warehouses=self.warehouses,
            remote_payment=self.remote_payment,
            remote_item=self.remote_item,
            items=self.items,
            customers=self.customers,
        )


@dataclass
class Report:
    config: RunConfig
    rows: list[dict]  # per timed batch
    total: dict  # aggregate row

    @property
    def throughput_tps(self) -> float:
        return self.total["throughput_tps"]

    def all_rows(self) -> list[dict]:
        return self.rows + [self.total]


def _setup(cfg: RunConfig):
    if cfg.workload == "ycsb":
        wl = cfg.ycsb()
        return load(ycsb_schema(wl), cfg.seed), YcsbGenerator(wl, cfg.seed)
    wl = cfg.tpcc()
    return load(tpcc_schema(wl), cfg.seed), TpccGenerator(wl, cfg.seed)


def _row(cfg: RunConfig, batch_no: int, wall_us: float, commits: int, cc_aborts: int, **phase) -> dict:
    row = dict.fromkeys(COLUMNS + EXTRA_COLUMNS, 0)
    row.update(phase)
    row.update(
        batch=batch_no,
        protocol=cfg.protocol,
        threads=cfg.threads,
        commits=commits,
        cc_aborts=cc_aborts,
        throughput_tps=commits / (wall_us / 1e6) if wall_us else 0.0,
        eta1_us="",
        eta2_us="",
    )
    row["_wall_us"] = wall_us
    return row


def _run_batch(cfg: RunConfig, storage: Storage, batch, pool: WorkerPool, engine: StrifeEngine | None, no: int):
    if engine is not None:
        m = engine.run(batch).metrics
        a = m.analysis
        return _row(
            cfg,
            no,
            m.wall_us,
            m.commits,
            m.cc_aborts,
            t_pre_us=a.pre_us,
            t_spot_us=a.spot_us,
            t_alloc_us=a.alloc_us,
            t_merge_us=a.merge_us,
            t_cfree_us=m.cfree_us,
            t_residual_us=m.residual_us,
            clusters=m.clusters,
            max_cluster=m.max_cluster,
            residual_size=m.residual_size,
        )
    res = run_protocol(batch, storage, cfg.protocol, pool)
    # a baseline runs the whole batch under concurrency control
    return _row(
        cfg,
        no,
        res.elapsed_s * 1e6,
        res.commits,
        res.cc_aborts,
        t_residual_us=res.elapsed_s * 1e6,
        residual_size=len(batch),
    )


def aggregate(cfg: RunConfig, rows: list[dict]) -> dict:
    wall = sum(r["_wall_us"] for r in rows)
    commits = sum(r["commits"] for r in rows)
    total = _row(cfg, "all", wall, commits, sum(r["cc_aborts"] for r in rows))
    for col in ("t_pre_us", "t_spot_us", "t_alloc_us", "t_merge_us", "t_cfree_us", "t_residual_us"):
        total[col] = sum(r[col] for r in rows)
    total["clusters"] = sum(r["clusters"] for r in rows)
    total["residual_size"] = sum(r["residual_size"] for r in rows)
    total["max_cluster"] = max((r["max_cluster"] for r in rows), default=0)
    total["eta1_us"], total["eta2_us"] = fit_eta(rows, cfg.threads)
    return total


def fit_eta(rows: list[dict], threads: int) -> tuple[float, float]:
    """Mean per-txn cost without and with concurrency control.

    The conflict-free phase lasts about as long as its largest cluster, and
    the residual phase spreads |R| txns over every worker.
    """
    cfree = sum(r["t_cfree_us"] for r in rows)
    biggest = sum(r["max_cluster"] for r in rows)
    res = sum(r["t_residual_us"] for r in rows)
    n_res = sum(r["residual_size"] for r in rows)
    eta1 = cfree / biggest if biggest else 0.0
    eta2 = res * threads / n_res if n_res else 0.0
    return eta1, eta2


def run(cfg: RunConfig) -> Report:
    storage, gen = _setup(cfg)
    with WorkerPool(cfg.threads) as pool:
        engine = None
        if cfg.protocol == "strife":
            pcfg = PartitionConfig(alpha=cfg.alpha, spot_samples=cfg.spot_samples, seed=cfg.seed)
            engine = StrifeEngine(storage, pool, pcfg, debug=cfg.debug)
        for _ in range(cfg.warmup):
            _run_batch(cfg, storage, gen.batch(cfg.batch_size), pool, engine, -1)
        rows = [
            _run_batch(cfg, storage, gen.batch(cfg.batch_size), pool, engine, no) for no in range(cfg.batches)
        ]
    report = Report(cfg, rows, aggregate(cfg, rows))
    if cfg.out:
        write_report([report], cfg.out, cfg.emit)
    return report


def _coerce(name: str, value: Any) -> Any:
    field_types = {f.name: f.type for f in fields(RunConfig)}
    if name not in field_types:
        raise ValueError(f"unknown setting {name!r}")
    if not isinstance(value, str):
        return value
    kind = field_types[name]
    if "bool" in kind:
        return value.lower() in ("1", "true", "yes", "on")
    if value.lower() in ("none", "") and "None" in kind:
        return None
    if kind.startswith("int"):
        return int(value)
    if kind.startswith("float"):
        return float(value)
    return value


def sweep(base: RunConfig, axis: str, values: Sequence[Any]) -> list[Report]:
    axis = axis.replace("-", "_")
    names = {f.name for f in fields(RunConfig)}
    if axis not in names or axis in ("out", "emit", "debug"):
        raise ValueError(f"cannot sweep {axis!r}; choose a run setting such as threads or warehouses")
    if axis in YCSB_ONLY and base.workload != "ycsb":
        raise ValueError(f"axis {axis!r} does not apply to workload {base.workload!r}")
    if axis in TPCC_ONLY and base.workload != "tpcc":
        raise ValueError(f"axis {axis!r} does not apply to workload {base.workload!r}")
    reports = []
    for v in values:
        cfg = dataclasses.replace(base, out=None, **{axis: _coerce(axis, v)})
        report = run(cfg)
        for row in report.all_rows():
            row[axis] = getattr(cfg, axis)
        reports.append(report)
    if base.out:
        write_report(reports, base.out, base.emit, axis)
    return reports


def _public(row: dict, columns: list[str]) -> dict:
    return {c: row[c] for c in columns}


def render(reports: Sequence[Report], emit: str, axis: str | None = None) -> str:
    columns = ([axis] if axis else []) + COLUMNS + EXTRA_COLUMNS
    buf = io.StringIO()
    if emit == "csv":
        w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for rep in reports:
            for row in rep.all_rows():
                w.writerow(_public(row, columns))
    else:
        for rep in reports:
            for row in rep.all_rows():
                buf.write(json.dumps(_public(row, columns)) + "\n")
    return buf.getvalue()


def write_report(reports: Sequence[Report], path: str, emit: str, axis: str | None = None) -> None:
    Path(path).write_text(render(reports, emit, axis))


def read_config_file(path: str) -> dict[str, Any]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        out[k] = _coerce(k, v)
    return out


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Run batch-execution benchmarks.")
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--workload", choices=["ycsb", "tpcc"])
    p.add_argument("--protocol", choices=ENGINES)
    p.add_argument("--threads", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--batches", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--spot-samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--emit", choices=["csv", "json"])
    p.add_argument("--out")
    p.add_argument("--theta", type=float)
    p.add_argument("--partitions", type=int)
    p.add_argument("--keys", type=int)
    p.add_argument("--warehouses", type=int)
    p.add_argument("--remote-payment", type=float)
    p.add_argument("--remote-item", type=float)
    p.add_argument("--items", type=int)
    p.add_argument("--customers", type=int)
    p.add_argument("--debug", action="store_true", default=None)
    p.add_argument("--sweep", metavar="AXIS", help="run setting to vary")
    p.add_argument("--values", nargs="+", help="values for --sweep")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    settings: dict[str, Any] = read_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            settings[f.name] = v
    return RunConfig(**settings)


def main(argv: Sequence[str] | None = None) -> int:
    p = parser()
    args = p.parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.sweep:
            if not args.values:
                p.error("--sweep needs --values")
            reports = sweep(cfg, args.sweep, args.values)
            axis = args.sweep.replace("-", "_")
        else:
            reports, axis = [run(cfg)], None
    except ValueError as exc:
        p.error(str(exc))
    if not cfg.out:
        sys.stdout.write(render(reports, cfg.emit, axis))
    return 0


if __name__ == "__main__":
    sys.exit(main())
