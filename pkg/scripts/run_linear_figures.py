"""Run every linear-LAM sweep and write CSVs plus SVG plots.

    python scripts/run_linear_figures.py --profile desk --out runs/linear
"""

import argparse
import sys
from pathlib import Path

from lamlab.config import resolve_config
from lamlab.experiments import run_experiment

LINEAR_EXPERIMENTS = ("fig4_left", "fig4_mid", "fig4_right", "fig5_policy", "fig5_aug", "fig5_actpred")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--profile", default="desk", choices=("desk", "paper"))
    ap.add_argument("--seeds", default=None, help="comma-separated seeds (profile default otherwise)")
    ap.add_argument("--workers", default="1")
    ap.add_argument("--only", nargs="*", choices=LINEAR_EXPERIMENTS, help="subset of experiments")
    ap.add_argument("--out", default="runs/linear")
    args = ap.parse_args()

    failed = 0
    for name in args.only or LINEAR_EXPERIMENTS:
        overrides = {"workers": args.workers}
        if args.seeds:
            overrides["seeds"] = args.seeds
        cfg = resolve_config({"experiment": name, "profile": args.profile}, overrides)
        res = run_experiment(cfg, Path(args.out) / name)
        failed += res.failed
        print(f"{name}: {len(res.rows)} rows, {res.failed} failed -> {res.csv_path}")
        for fig in res.figures:
            print(f"  {fig}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
