#!/usr/bin/env python3
"""Segment-size sweep: compute-node cap and cold-node total for N in 20, 50, 100, 250."""

import argparse
import json
from pathlib import Path

from segchain.harness import fig4_config, run_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out/fig4"))
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--sizes", default="20,50,100,250")
    args = ap.parse_args()

    sizes = tuple(int(x) for x in args.sizes.split(","))
    run_experiment(fig4_config(seed=args.seed, output_dir=args.out, sweep_blocks_per_segment=sizes))
    summary = json.loads((args.out / "summary.json").read_text())

    print(f"{'N':>5s} {'segments':>9s} {'blocks':>7s} {'compute max':>12s} {'cold final':>12s}")
    for n in sizes:
        s = summary[f"segmented-n{n}"]
        print(f"{n:5d} {s['segment_count']:9d} {s['total_blocks']:7d} "
              f"{s['max_bytes']['compute-00']:12d} {s['final_bytes']['cold-00']:12d}")


if __name__ == "__main__":
    main()
