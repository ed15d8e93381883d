"""Named sweeps over the linear LAM and the grid world.

Every (sweep point, seed) becomes one CSV row. Rows are sorted by the axis
values and then the seed, and floats are written with ``repr`` so two runs
of the same config give byte-identical files apart from ``wall_clock``.
"""

from __future__ import annotations

import csv
import itertools
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import GRID_SETTINGS, ExperimentConfig, output_root
from .datagen import NoiseSpec, make_env
from .evaluator import llo
from .gridworld import GridEnvSpec, GridTrainConfig, eval_grid, train_grid
from .linear_lam import TrainConfig, expected_recon_loss, train
from .oracle import optimal_loss, pca_oracle

__all__ = [
    "CSV_SCHEMA_VERSION",
    "CSV_COLUMNS",
    "SweepPoint",
    "expand_points",
    "run_point",
    "run_experiment",
    "write_rows",
    "read_rows",
]

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "schema_version",
    "experiment",
    "status",
    "seed",
    "d_o",
    "d_a",
    "d_z",
    "sigma_iid",
    "sigma_exo",
    "chi",
    "aug",
    "label_fraction",
    "grid_setting",
    "latent_kind",
    "nmse_q",
    "nmse_eps",
    "nmse_o",
    "llo",
    "controllable_loss",
    "stochastic_loss",
    "final_train_loss",
    "last_batch_loss",
    "oracle_loss",
    "min_code_usage",
    "wall_clock",
    "error",
)
# excluded from reproducibility comparisons
NONDETERMINISTIC_COLUMNS = ("wall_clock",)


@dataclass(frozen=True)
class SweepPoint:
    experiment: str
    seed: int
    d_a: int | None = None
    d_z: int | None = None
    sigma_iid: float | None = None
    sigma_exo: float | None = None
    chi: float | None = None
    aug: float | None = None
    label_fraction: float | None = None
    grid_setting: str | None = None

    @property
    def is_grid(self) -> bool:
        return self.grid_setting is not None

    def sort_key(self):
        grid_rank = list(GRID_SETTINGS).index(self.grid_setting) if self.is_grid else -1
        axes = (self.d_a, self.d_z, self.sigma_iid, self.sigma_exo, self.chi, self.aug, self.label_fraction)
        return tuple(-1 if v is None else v for v in axes) + (grid_rank, self.seed)


def expand_points(cfg: ExperimentConfig) -> list[SweepPoint]:
    """Cartesian product of the axes and seeds, in output order."""
    if cfg.experiment == "table1":
        pts = [SweepPoint("table1", s, grid_setting=g) for g in cfg.grid_settings for s in cfg.seeds]
    else:
        pts = []
        for d_a, d_z, s_iid, s_exo, chi, aug, lam, seed in itertools.product(
            cfg.d_a, cfg.d_z, cfg.sigma_iid, cfg.sigma_exo, cfg.chi, cfg.aug, cfg.label_fraction, cfg.seeds
        ):
            d_z = d_a if d_z is None else d_z
            pts.append(SweepPoint(cfg.experiment, seed, d_a, d_z, s_iid, s_exo, chi, aug, lam))
        # a d_z list containing both "d_a" and the same number collapses
        pts = list(dict.fromkeys(pts))
    return sorted(pts, key=SweepPoint.sort_key)


def _base_row(cfg: ExperimentConfig, pt: SweepPoint) -> dict:
    row = {c: None for c in CSV_COLUMNS}
    row.update({k: v for k, v in asdict(pt).items() if k in row})
    row["schema_version"] = CSV_SCHEMA_VERSION
    row["status"] = "ok"
    if not pt.is_grid:
        row["d_o"] = cfg.d_o
        row["latent_kind"] = cfg.latent_kind
    return row


def _run_linear(cfg: ExperimentConfig, pt: SweepPoint, row: dict):
    env = make_env(
        d_o=cfg.d_o,
        d_a=pt.d_a,
        d_b=cfg.d_b,
        sigma_q=cfg.sigma_q,
        noise=NoiseSpec.mixed(pt.sigma_iid, pt.sigma_exo),
        chi=pt.chi,
        seed=pt.seed,
        orthogonalize_Y_against_X=cfg.orthogonal_exo,
    )
    tcfg = TrainConfig(
        d_z=pt.d_z,
        steps=cfg.steps,
        batch=cfg.batch,
        lr=cfg.lr,
        lr_final=cfg.lr_final,
        aug_magnitude=pt.aug,
        action_weight=cfg.action_weight,
        label_fraction=pt.label_fraction,
        seed=pt.seed,
    )
    result = train(env, tcfg)
    report = llo(result.params, env, n_eval=cfg.n_eval, latent_kind=cfg.latent_kind)
    row.update(nmse_q=report.nmse_q, nmse_eps=report.nmse_eps, nmse_o=report.nmse_o, llo=report.llo)
    row["final_train_loss"] = expected_recon_loss(result.params, env, pt.aug)
    row["last_batch_loss"] = float(result.recon_trace[-1])
    if pt.chi == 0 and pt.aug == 0:
        row["oracle_loss"] = optimal_loss(pca_oracle(env, pt.d_z))


def _run_grid(cfg: ExperimentConfig, pt: SweepPoint, row: dict):
    env_kw, train_kw = GRID_SETTINGS[pt.grid_setting]
    env = GridEnvSpec(seed=pt.seed, **env_kw)
    gcfg = GridTrainConfig(steps=cfg.grid_steps, batch=cfg.grid_batch, seed=pt.seed, **train_kw)
    result = train_grid(env, gcfg)
    ev = eval_grid(result.model, env, n_eval=cfg.grid_n_eval)
    row["controllable_loss"] = ev.controllable_loss
    row["stochastic_loss"] = ev.stochastic_loss
    row["min_code_usage"] = min(ev.code_usage)
    row["final_train_loss"] = float(np.mean(result.recon_trace[-100:]))
    row["last_batch_loss"] = float(result.recon_trace[-1])


def run_point(cfg: ExperimentConfig, pt: SweepPoint) -> dict:
    """One CSV row; a failure is caught and recorded instead of raised."""
    row = _base_row(cfg, pt)
    t0 = time.perf_counter()
    try:
        (_run_grid if pt.is_grid else _run_linear)(cfg, pt, row)
    except Exception as exc:  # isolate sweep points from each other
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        row["_traceback"] = traceback.format_exc()
    row["wall_clock"] = time.perf_counter() - t0
    return row


def _format(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path: str | Path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_format(row.get(c)) for c in CSV_COLUMNS])
    return path


def read_rows(path: str | Path) -> list[dict]:
    """Rows with numeric columns converted back to numbers (empty cells become None)."""
    text_cols = {"experiment", "status", "grid_setting", "latent_kind", "error"}
    int_cols = {"schema_version", "seed", "d_o", "d_a", "d_z"}
    out = []
    with Path(path).open(newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for k, v in raw.items():
                if v == "":
                    row[k] = None
                elif k in text_cols:
                    row[k] = v
                elif k in int_cols:
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            out.append(row)
    return out


@dataclass
class ExperimentOutput:
    rows: list[dict]
    csv_path: Path
    figures: list[Path]
    failed: int

    @property
    def ok(self) -> bool:
        return self.failed == 0


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, log=None) -> ExperimentOutput:
    """Run the sweep, write ``<experiment>.csv`` (and SVG plots) under ``out_dir``.

    Rows are written even when some points fail; ``failed`` counts them.
    """
    from .report import write_figures

    out = Path(out_dir) if out_dir is not None else output_root(cfg) / cfg.experiment
    points = expand_points(cfg)
    if cfg.workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(run_point, itertools.repeat(cfg), points))
    else:
        rows = []
        for i, pt in enumerate(points, 1):
            rows.append(run_point(cfg, pt))
            if log is not None:
                log(f"[{i}/{len(points)}] {rows[-1]['status']} {pt}")
    failed = sum(r["status"] != "ok" for r in rows)
    if failed and log is not None:
        for r in rows:
            if r["status"] != "ok":
                log(r.get("_traceback", r["error"]))
    csv_path = write_rows(out / f"{cfg.experiment}.csv", rows)
    (out / "config.txt").write_text(cfg.to_text())
    figures = write_figures(cfg, rows, out) if cfg.plot else []
    return ExperimentOutput(rows=rows, csv_path=csv_path, figures=figures, failed=failed)
