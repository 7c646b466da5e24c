"""Rate x target sweep printed as an observed-rate / accuracy table.

    python3 scripts/sweep_table.py scripts/configs/table.json --out runs/table

Rows are fixed rates, columns are targets (plus the magnitude-pruning
baseline); each cell shows mean observed rate, gap and accuracy over seeds.
"""
import argparse
import logging
from pathlib import Path

from pmp.cli import run_sweep
from pmp.config import load_config
from pmp.report import summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out", help="output directory (default: from the config)")
    ap.add_argument("--jobs", type=int, help="worker processes")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    cfg = load_config(args.config)
    if args.jobs:
        cfg.sweep.jobs = args.jobs
    out = Path(args.out) if args.out else cfg.output_dir()
    cells = {(c["fixed_pr"], c["target_kind"]): c for c in summarize(run_sweep(cfg, out))}

    kinds = list(dict.fromkeys(k for _, k in cells))
    print(f"{'rate':>6} " + " ".join(f"{k:>26}" for k in kinds))
    for rate in sorted({r for r, _ in cells}):
        parts = []
        for k in kinds:
            c = cells.get((rate, k))
            parts.append(f"{'-':>26}" if c is None else
                         f"{c['observed_pr']:>8.4f} ±{c['gap']:.4f} acc {c['accuracy']:.3f}")
        print(f"{rate:>6g} " + " ".join(parts))
    print(f"\nreport: {out / 'report.csv'}")


if __name__ == "__main__":
    main()
