#!/usr/bin/env python3
"""Storage over time for archive, full, rolling and segmented (N=10) nodes.

Writes report.csv, summary.json and the segment files, then prints the
per-curve peak and final byte counts.
"""

import argparse
import json
import time
from pathlib import Path

from segchain.harness import fig3_config, pivot_report, read_report, run_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("out/fig3"))
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--blocks", type=int, default=1000)
    args = ap.parse_args()

    t0 = time.perf_counter()
    report = run_experiment(fig3_config(seed=args.seed, output_dir=args.out, total_payload_blocks=args.blocks))
    elapsed = time.perf_counter() - t0

    header, body = pivot_report(read_report(report))
    print(f"{report} ({elapsed:.1f}s)")
    print(f"{'curve':32s} {'max bytes':>12s} {'final bytes':>12s}")
    for col, name in enumerate(header[1:], 1):
        values = [row[col] for row in body if row[col] != ""]
        print(f"{name:32s} {max(values):12d} {values[-1]:12d}")
    summary = json.loads((args.out / "summary.json").read_text())
    for label, s in summary.items():
        print(f"{label}: {s['segment_count']} segments, {s['total_blocks']} blocks, head {s['head_hash'][:16]}")


if __name__ == "__main__":
    main()
