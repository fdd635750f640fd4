"""YCSB contention sweep: throughput of each engine against the zipfian constant."""

import argparse
import dataclasses
from pathlib import Path

from strife.bench import ENGINES, RunConfig, render, sweep


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--thetas", nargs="+", default=["0.1", "0.3", "0.5", "0.7", "0.8", "0.9", "0.99"])
    p.add_argument("--partitions", type=int, default=15)
    p.add_argument("--threads", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=10_000)
    p.add_argument("--batches", type=int, default=3)
    p.add_argument("--engines", nargs="+", default=list(ENGINES))
    p.add_argument("--out", default="results/theta_sweep.csv")
    args = p.parse_args()

    base = RunConfig(
        workload="ycsb",
        partitions=args.partitions,
        threads=args.threads,
        batch_size=args.batch_size,
        batches=args.batches,
    )
    reports = []
    for engine in args.engines:
        reps = sweep(dataclasses.replace(base, protocol=engine), "theta", args.thetas)
        for rep in reps:
            t = rep.total
            print(f"{engine:>14} theta={rep.config.theta:<5} {t['throughput_tps']:9.0f} tps  "
                  f"cc-aborts {t['cc_aborts']:>8}  |R| {t['residual_size']}")
        reports += reps
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(render(reports, "csv", "theta"))


if __name__ == "__main__":
    main()
