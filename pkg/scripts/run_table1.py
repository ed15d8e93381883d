"""Train the six grid-world settings over several seeds and print the ablation table.

    python scripts/run_table1.py --workers 4 --out runs/table1

Pass ``--csv`` to summarize an existing run instead of training.
"""

import argparse
import sys
from pathlib import Path

from lamlab.config import resolve_config
from lamlab.experiments import read_rows, run_experiment
from lamlab.report import grid_summary, grid_summary_markdown

# published controllable-loss means, for the side-by-side column
REFERENCE = {
    "no_noise": 0.624,
    "low_noise": 0.781,
    "high_noise": 1.046,
    "correlated_policy": 1.997,
    "augmentation": 0.415,
    "action_prediction": 0.295,
}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--steps", default="16000")
    ap.add_argument("--workers", default="1")
    ap.add_argument("--out", default="runs/table1")
    ap.add_argument("--csv", help="summarize this CSV instead of training")
    args = ap.parse_args()

    if args.csv:
        rows = read_rows(args.csv)
    else:
        cfg = resolve_config(
            {"experiment": "table1"},
            {"seeds": args.seeds, "grid_steps": args.steps, "workers": args.workers, "plot": "false"},
        )
        res = run_experiment(cfg, Path(args.out), log=lambda m: print(m, file=sys.stderr))
        rows = res.rows
        print(f"rows written to {res.csv_path}")

    summary = grid_summary(rows)
    print(grid_summary_markdown(summary))
    print("| Setting | Controllable | Reference | Difference |")
    print("|---|---|---|---|")
    seen = set()
    for r in summary:
        key = r["grid_setting"]
        if key in seen:
            continue
        seen.add(key)
        got, ref = r["controllable_mean"], REFERENCE[key]
        print(f"| {key} | {got:.3f} | {ref:.3f} | {got - ref:+.3f} |")
    return 0


if __name__ == "__main__":
    sys.exit(main())
