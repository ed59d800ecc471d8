#!/usr/bin/env python3
"""Reproduce all five environment-similarity studies plus the solo
baselines, then print the cross-group comparison table.

    python3 scripts/run_all_groups.py --out results [--runs 10 --epochs 100 --seed 0]

Each group lands in results/<label>/ as raw.csv, mean.csv and curves.svg;
the comparison table (and any ordering flags) is written to
results/compare.txt as well as stdout.
"""

import argparse
import time
from pathlib import Path

from fedsplit.experiments import (
    ExperimentSpec,
    Group,
    Mode,
    compare_report,
    run_experiment,
)

CONFIGS = [
    ("same", Group.SAME, Mode.COOP),
    ("similar", Group.SIMILAR, Mode.COOP),
    ("diff-tall", Group.DIFF_TALL, Mode.COOP),
    ("diff-fat", Group.DIFF_FAT, Mode.COOP),
    ("totally-diff", Group.TOTALLY_DIFF, Mode.COOP),
    ("solo-a", Group.SAME, Mode.SOLO_A),
    ("solo-b", Group.SIMILAR, Mode.SOLO_B),
]


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="results")
    parser.add_argument("--runs", type=int, default=10)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    labeled = []
    for label, group, mode in CONFIGS:
        t0 = time.time()
        spec = ExperimentSpec(group, mode, epochs=args.epochs, runs=args.runs,
                              base_seed=args.seed)
        curves = run_experiment(spec, out_dir=out / label)
        print(f"{label:13s} done in {time.time() - t0:6.1f}s "
              f"(final mean {curves.mean[0, -1]:.1f})", flush=True)
        if mode is Mode.COOP or label == "solo-a":
            labeled.append((label, curves))

    report = compare_report(labeled)
    text = report.format()
    print()
    print(text)
    (out / "compare.txt").write_text(text + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
