"""Command-line entry point: ``lamlab <subcommand> --help``.

Outputs go under ``--out`` when given, else ``$LAMLAB_OUT``, else
``./lamlab_out``.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import EXPERIMENTS, GRID_SETTINGS, PROFILES, load_config, output_root, resolve_config
from .datagen import NoiseSpec, make_env, sample_batch
from .errors import LamLabError
from .evaluator import llo
from .experiments import read_rows, run_experiment
from .gridworld import BOUNDARIES, GridEnvSpec, GridTrainConfig, eval_grid, sample_grid_batch, train_grid
from .linear_lam import TrainConfig, expected_recon_loss, train
from .numerics import substream
from .oracle import SubspaceNotUniqueWarning, optimal_BD, optimal_loss, pca_oracle
from .report import grid_summary, grid_summary_markdown, write_figures
from .storage import batch_to_csv, load_grid_model, load_linear, save_batch, save_grid_model, save_linear

ENV_KEYS = ("d_o", "d_a", "d_b", "sigma_q", "sigma_iid", "sigma_exo", "chi", "seed", "orthogonal_exo")


def _add_env_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("linear environment")
    g.add_argument("--d-o", type=int, default=128, help="observation dimension")
    g.add_argument("--d-a", type=int, default=8, help="action dimension")
    g.add_argument("--d-b", type=int, default=8, help="exogenous action dimension")
    g.add_argument("--sigma-q", type=float, default=1.0, help="std of controllable changes")
    g.add_argument("--sigma-iid", type=float, default=0.0, help="std of isotropic noise")
    g.add_argument("--sigma-exo", type=float, default=0.0, help="std of exogenous-agent noise")
    g.add_argument("--chi", type=float, default=0.0, help="policy determinism in [0, 1]")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--orthogonal-exo", action="store_true", help="make Y orthogonal to X")


def _env_args(args) -> dict:
    return {k: getattr(args, k) for k in ENV_KEYS}


def _env_from(d: dict):
    return make_env(
        d_o=d["d_o"],
        d_a=d["d_a"],
        d_b=d["d_b"],
        sigma_q=d["sigma_q"],
        noise=NoiseSpec.mixed(d["sigma_iid"], d["sigma_exo"]),
        chi=d["chi"],
        seed=d["seed"],
        orthogonalize_Y_against_X=d["orthogonal_exo"],
    )


def _add_grid_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("grid world")
    g.add_argument("--setting", choices=sorted(GRID_SETTINGS), help="preset ablation setting")
    g.add_argument("--noise", choices=("none", "low", "high"), default=None)
    g.add_argument("--policy", choices=("uniform", "correlated"), default=None)
    g.add_argument("--boundary", choices=BOUNDARIES, default=None, help="horizontal edge rule (default clip)")
    g.add_argument("--seed", type=int, default=0)


def _grid_env(args) -> tuple[GridEnvSpec, dict]:
    env_kw, train_kw = GRID_SETTINGS[args.setting] if args.setting else ({}, {})
    env_kw = dict(env_kw)
    if args.noise:
        env_kw["noise"] = args.noise
    if args.policy:
        env_kw["policy"] = args.policy
    if args.boundary:
        env_kw["boundary"] = args.boundary
    return GridEnvSpec(seed=args.seed, **env_kw), dict(train_kw)


def _out(args, name: str) -> Path:
    if args.out:
        return Path(args.out)
    return output_root() / name


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


# ------------------------------------------------------------------ commands

def cmd_gen(args) -> int:
    rng = substream(args.seed, "gen")
    if args.grid:
        env, _ = _grid_env(args)
        batch = sample_grid_batch(env, args.n, rng)
        meta = {"env": asdict(env), "layout": "row-major 4x4"}
    else:
        env = _env_from(_env_args(args))
        batch = sample_batch(env, args.n, args.label_fraction, rng)
        meta = {"env": _env_args(args), "label_fraction": args.label_fraction}
    path = save_batch(_out(args, "batch.lamb"), batch, meta)
    result = {"batch": str(path), "n": batch.n}
    if args.csv:
        result["csv"] = str(batch_to_csv(Path(args.csv), batch))
    _print(result)
    return 0


def cmd_train_linear(args) -> int:
    env_d = _env_args(args)
    env = _env_from(env_d)
    cfg = TrainConfig(
        d_z=args.d_z or env.d_a,
        steps=args.steps,
        batch=args.batch,
        lr=args.lr,
        lr_final=args.lr_final,
        aug_magnitude=args.aug,
        action_weight=args.action_weight,
        label_fraction=args.label_fraction,
        seed=args.seed,
    )
    res = train(env, cfg)
    path = save_linear(_out(args, "linear.lamc"), res.params, {"env": env_d, "train": cfg.to_dict()})
    summary = {
        "checkpoint": str(path),
        "population_loss": expected_recon_loss(res.params, env, cfg.aug_magnitude),
        "last_batch_loss": float(res.recon_trace[-1]),
        "wall_time": res.wall_time,
    }
    if env.chi == 0 and cfg.aug_magnitude == 0:
        summary["oracle_loss"] = optimal_loss(pca_oracle(env, cfg.d_z))
    _print(summary)
    return 0


def cmd_eval_llo(args) -> int:
    params, meta = load_linear(args.checkpoint)
    env = _env_from(meta["env"])
    rep = llo(params, env, n_eval=args.n_eval, latent_kind=args.latent_kind)
    _print(rep.to_dict())
    return 0


def cmd_oracle(args) -> int:
    env = _env_from(_env_args(args))
    d_z = args.d_z or env.d_a
    orc = pca_oracle(env, d_z)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SubspaceNotUniqueWarning)
        optimal_BD(orc)
    _print(
        {
            "d_z": d_z,
            "optimal_loss": optimal_loss(orc),
            "eigenvalues": orc.eig.eigenvalues[: max(2 * d_z, 1)].tolist(),
            "subspace_unique": not caught,
        }
    )
    return 0


def cmd_train_grid(args) -> int:
    env, train_kw = _grid_env(args)
    if args.augment:
        train_kw["augment"] = True
    if args.label_fraction is not None:
        train_kw["label_fraction"] = args.label_fraction
    cfg = GridTrainConfig(steps=args.steps, batch=args.batch, lr=args.lr, seed=args.seed, **train_kw)
    res = train_grid(env, cfg)
    meta = {"env": asdict(env)}
    path = save_grid_model(_out(args, "grid.lamc"), res.model, meta)
    _print(
        {
            "checkpoint": str(path),
            "final_recon": float(np.mean(res.recon_trace[-100:])),
            "dead_code_restarts": res.reinit_count,
            "wall_time": res.wall_time,
        }
    )
    return 0


def cmd_eval_grid(args) -> int:
    model, meta = load_grid_model(args.checkpoint)
    env = GridEnvSpec(**meta["env"])
    ev = eval_grid(model, env, n_eval=args.n_eval)
    _print(
        {
            "controllable_loss": ev.controllable_loss,
            "stochastic_loss": ev.stochastic_loss,
            "code_usage": list(ev.code_usage),
            "n_eval": ev.n_eval,
        }
    )
    return 0


def _parse_sets(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise LamLabError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_experiment(args) -> int:
    file_values = load_config(args.config) if args.config else {}
    overrides = _parse_sets(args.set)
    for key in ("experiment", "profile", "seeds", "workers"):
        v = getattr(args, key)
        if v is not None:
            overrides[key] = str(v)
    cfg = resolve_config(file_values, overrides)
    out = Path(args.out) if args.out else None
    res = run_experiment(cfg, out, log=lambda m: print(m, file=sys.stderr))
    _print({"csv": str(res.csv_path), "figures": [str(p) for p in res.figures], "rows": len(res.rows), "failed": res.failed})
    if cfg.experiment == "table1":
        print(grid_summary_markdown(grid_summary(res.rows)))
    return 0 if res.ok else 1


def cmd_report(args) -> int:
    csv_path = Path(args.csv)
    rows = read_rows(csv_path)
    if not rows:
        raise LamLabError(f"{csv_path}: no rows")
    cfg_file = csv_path.parent / "config.txt"
    file_values = load_config(cfg_file) if cfg_file.exists() else {"experiment": rows[0]["experiment"]}
    cfg = resolve_config(file_values)
    out = Path(args.out) if args.out else csv_path.parent
    out.mkdir(parents=True, exist_ok=True)
    paths = write_figures(cfg, rows, out)
    _print({"figures": [str(p) for p in paths]})
    if cfg.experiment == "table1":
        print(grid_summary_markdown(grid_summary(rows)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lamlab", description="Latent action model laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="sample a batch of transitions to a container file")
    _add_env_flags(p)
    p.add_argument("--grid", action="store_true", help="sample grid-world transitions instead")
    p.add_argument("--setting", choices=sorted(GRID_SETTINGS))
    p.add_argument("--noise", choices=("none", "low", "high"))
    p.add_argument("--policy", choices=("uniform", "correlated"))
    p.add_argument("--boundary", choices=BOUNDARIES)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--label-fraction", type=float, default=0.0)
    p.add_argument("--csv", help="also write a CSV copy here")
    p.add_argument("--out", help="container path")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train-linear", help="train a linear LAM and save a checkpoint")
    _add_env_flags(p)
    p.add_argument("--d-z", type=int, default=None, help="latent dimension (default d_a)")
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-final", type=float, default=None, help="final learning rate of a geometric decay")
    p.add_argument("--aug", type=float, default=0.0, help="augmentation variance")
    p.add_argument("--label-fraction", type=float, default=0.0)
    p.add_argument("--action-weight", type=float, default=None)
    p.add_argument("--out", help="checkpoint path")
    p.set_defaults(func=cmd_train_linear)

    p = sub.add_parser("eval-llo", help="LLO of a linear checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--n-eval", type=int, default=20000)
    p.add_argument("--latent-kind", choices=("surrogate", "true_latent"), default="surrogate")
    p.set_defaults(func=cmd_eval_llo)

    p = sub.add_parser("oracle", help="closed-form PCA optimum for an environment")
    _add_env_flags(p)
    p.add_argument("--d-z", type=int, default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("train-grid", help="train the grid-world VQ model")
    _add_grid_flags(p)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--label-fraction", type=float, default=None)
    p.add_argument("--steps", type=int, default=16000)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out", help="checkpoint path")
    p.set_defaults(func=cmd_train_grid)

    p = sub.add_parser("eval-grid", help="controllable and stochastic loss of a grid checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--n-eval", type=int, default=4096)
    p.set_defaults(func=cmd_eval_grid)

    p = sub.add_parser("experiment", help="run a named sweep and write CSV and plots")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--workers", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key (repeatable)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="regenerate plots and tables from a sweep CSV")
    p.add_argument("csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (LamLabError, ValueError, OSError) as exc:
        print(f"lamlab {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
