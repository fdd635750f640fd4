"""Directional baseline checks at desk scale.

Prints one line per claim with the measured numbers:
  nowait      YCSB theta=0.9: aborts > 0 and throughput below strife
  waitdie     TPC-C W=4: abort rate > 25%
  lockordered TPC-C W=2 throughput well below W=15
  wfg         TPC-C W=4: throughput below nowait
"""

import argparse

from strife.bench import RunConfig, run


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--threads", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=10_000)
    p.add_argument("--batches", type=int, default=3)
    args = p.parse_args()
    common = dict(threads=args.threads, batch_size=args.batch_size, batches=args.batches, seed=42)
    ycsb = dict(workload="ycsb", theta=0.9, partitions=15, **common)

    def tpcc(protocol, w):
        return run(RunConfig(workload="tpcc", protocol=protocol, warehouses=w, **common)).total

    nw = run(RunConfig(protocol="nowait", **ycsb)).total
    st = run(RunConfig(protocol="strife", **ycsb)).total
    ok = nw["cc_aborts"] > 0 and nw["throughput_tps"] < st["throughput_tps"]
    print(f"nowait      {'PASS' if ok else 'FAIL'}  aborts {nw['cc_aborts']}, "
          f"{nw['throughput_tps']:.0f} tps vs strife {st['throughput_tps']:.0f}")

    wd = tpcc("waitdie", 4)
    rate = wd["cc_aborts"] / (wd["cc_aborts"] + wd["commits"])
    print(f"waitdie     {'PASS' if rate > 0.25 else 'FAIL'}  abort rate {rate:.1%} at W=4")

    lo2, lo15 = tpcc("lockordered", 2), tpcc("lockordered", 15)
    ratio = lo15["throughput_tps"] / lo2["throughput_tps"]
    print(f"lockordered {'PASS' if ratio > 2 else 'FAIL'}  W=2 {lo2['throughput_tps']:.0f} tps, "
          f"W=15 {lo15['throughput_tps']:.0f} tps ({ratio:.2f}x)")

    wfg, nw4 = tpcc("waitsforgraph", 4), tpcc("nowait", 4)
    ok = wfg["throughput_tps"] < nw4["throughput_tps"]
    print(f"wfg         {'PASS' if ok else 'FAIL'}  {wfg['throughput_tps']:.0f} tps vs nowait {nw4['throughput_tps']:.0f}")


if __name__ == "__main__":
    main()
