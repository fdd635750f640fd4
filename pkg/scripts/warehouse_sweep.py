"""Throughput and phase times of every engine as TPC-C warehouses grow."""

import argparse
import dataclasses
from pathlib import Path

from strife.bench import ENGINES, RunConfig, render, sweep


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--warehouses", nargs="+", default=["2", "4", "8", "15"])
    p.add_argument("--threads", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=10_000)
    p.add_argument("--batches", type=int, default=3)
    p.add_argument("--engines", nargs="+", default=list(ENGINES))
    p.add_argument("--out", default="results/warehouse_sweep.csv")
    args = p.parse_args()

    base = RunConfig(workload="tpcc", threads=args.threads, batch_size=args.batch_size, batches=args.batches)
    reports = []
    for engine in args.engines:
        reps = sweep(dataclasses.replace(base, protocol=engine), "warehouses", args.warehouses)
        for rep in reps:
            t = rep.total
            print(f"{engine:>14} W={rep.config.warehouses:<3} {t['throughput_tps']:9.0f} tps  "
                  f"cfree {t['t_cfree_us'] / 1e3:8.1f} ms  residual {t['t_residual_us'] / 1e3:8.1f} ms  "
                  f"|R| {t['residual_size']}")
        reports += reps
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(render(reports, "csv", "warehouses"))


if __name__ == "__main__":
    main()
