#!/usr/bin/env python3
"""Scaling curve: median epoch time across a doubling ladder of graphs.

Prints the per-scale table and the linear fit of time against |V| + |E|;
optionally writes the JSON report and a CSV for plotting.
"""

import argparse

from hetconv.bench import default_scale_specs, run_scaling
from hetconv.io import atomic_write_text, write_json
from hetconv.train import TrainConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scales", type=int, default=6)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="JSON report path")
    ap.add_argument("--csv", default=None, help="CSV path for plotting")
    args = ap.parse_args()

    report = run_scaling(
        default_scale_specs(seed=args.seed, n_scales=args.scales),
        TrainConfig(seed=args.seed),
        repeats=args.repeats,
    )
    print(report.to_text())
    if args.out:
        write_json(args.out, report.to_json())
    if args.csv:
        atomic_write_text(args.csv, report.to_csv())


if __name__ == "__main__":
    main()
