"""Engine throughput against worker threads on a contended TPC-C configuration."""

import argparse
import dataclasses
from pathlib import Path

from strife.bench import ENGINES, RunConfig, render, sweep


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--threads", nargs="+", default=["1", "2", "4", "8"])
    p.add_argument("--warehouses", type=int, default=4)
    p.add_argument("--batch-size", type=int, default=10_000)
    p.add_argument("--batches", type=int, default=3)
    p.add_argument("--engines", nargs="+", default=list(ENGINES))
    p.add_argument("--out", default="results/thread_sweep.csv")
    args = p.parse_args()

    base = RunConfig(workload="tpcc", warehouses=args.warehouses, batch_size=args.batch_size, batches=args.batches)
    reports = []
    for engine in args.engines:
        reps = sweep(dataclasses.replace(base, protocol=engine), "threads", args.threads)
        for rep in reps:
            t = rep.total
            print(f"{engine:>14} threads={rep.config.threads:<3} {t['throughput_tps']:9.0f} tps  "
                  f"eta1 {t['eta1_us'] or 0:6.1f} us  eta2 {t['eta2_us'] or 0:6.1f} us")
        reports += reps
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(render(reports, "csv", "threads"))


if __name__ == "__main__":
    main()
