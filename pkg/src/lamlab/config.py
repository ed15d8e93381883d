"""Experiment configuration in a flat ``key = value`` text format.

One setting per line, ``#`` starts a comment, list values are
comma-separated::

    experiment = fig4_mid
    profile = desk
    sigma_iid = 0, 0.25, 0.5, 1, 2
    seeds = 0, 1, 2

Resolution order: base defaults (``d_o=128, d_a=8, batch=128,
steps=4000``), then the profile preset, then the experiment's default axes,
then file values, then command-line overrides.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

__all__ = [
    "EXPERIMENTS",
    "GRID_SETTINGS",
    "PROFILES",
    "ExperimentConfig",
    "parse_config_text",
    "load_config",
    "resolve_config",
    "output_root",
]

EXPERIMENTS = ("fig4_left", "fig4_mid", "fig4_right", "fig5_policy", "fig5_aug", "fig5_actpred", "table1")

# each grid setting maps to (GridEnvSpec kwargs, GridTrainConfig kwargs)
GRID_SETTINGS = {
    "no_noise": ({"noise": "none"}, {}),
    "low_noise": ({"noise": "low"}, {}),
    "high_noise": ({"noise": "high"}, {}),
    "correlated_policy": ({"policy": "correlated"}, {}),
    "augmentation": ({}, {"augment": True}),
    "action_prediction": ({}, {"label_fraction": 0.01}),
}

PROFILES = {
    # full-scale linear settings
    "paper": {},
    # minutes on a laptop core
    "desk": {
        "d_o": 32,
        "d_a": (4,),
        "d_b": 4,
        "steps": 1000,
        "lr": 1e-2,
        "lr_final": 1e-4,
        "n_eval": 8000,
        "seeds": (0, 1, 2),
        "grid_steps": 4000,
    },
}

_AXES = ("d_z", "sigma_iid", "sigma_exo", "chi", "aug", "label_fraction")

# x axis, line axis and axis defaults (None means "use d_a")
_EXPERIMENT_DEFAULTS = {
    "fig4_left": {"x": "d_z", "line": "d_a", "d_z": (1, 2, 4, 8, 16)},
    "fig4_mid": {"x": "sigma_iid", "line": "d_z", "sigma_iid": (0.0, 0.25, 0.5, 1.0, 2.0)},
    "fig4_right": {"x": "d_z", "line": "sigma_exo", "d_z": (1, 2, 4, 8, 16), "sigma_exo": (0.5, 1.0, 2.0)},
    "fig5_policy": {"x": "chi", "line": "sigma_iid", "chi": (0.0, 0.25, 0.5, 0.75, 1.0)},
    "fig5_aug": {
        "x": "aug",
        "line": "sigma_iid",
        "aug": (0.0, 0.01, 0.05, 0.1, 0.2),
        "sigma_iid": (0.0, 0.5),
        "latent_kind": "true_latent",
    },
    "fig5_actpred": {
        "x": "sigma_exo",
        "line": "label_fraction",
        "sigma_exo": (0.5, 1.0, 2.0),
        "label_fraction": (0.0, 0.01),
        "aug": (0.1,),
        "orthogonal_exo": True,
    },
    "table1": {"x": "grid_setting", "line": None},
}


@dataclass
class ExperimentConfig:
    experiment: str = "fig4_left"
    profile: str = "paper"
    d_o: int = 128
    d_a: tuple[int, ...] = (8,)
    d_b: int = 8
    sigma_q: float = 1.0
    batch: int = 128
    steps: int = 4000
    lr: float = 1e-3
    lr_final: float | None = None
    n_eval: int = 20000
    latent_kind: str = "surrogate"
    d_z: tuple[int | None, ...] = (None,)
    sigma_iid: tuple[float, ...] = (0.0,)
    sigma_exo: tuple[float, ...] = (0.0,)
    chi: tuple[float, ...] = (0.0,)
    aug: tuple[float, ...] = (0.0,)
    label_fraction: tuple[float, ...] = (0.0,)
    action_weight: float | None = None
    orthogonal_exo: bool = False
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    workers: int = 1
    out_dir: str = ""
    grid_settings: tuple[str, ...] = tuple(GRID_SETTINGS)
    grid_steps: int = 16000
    grid_batch: int = 16
    grid_n_eval: int = 4096
    plot: bool = True

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}", "experiment")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}", "profile")
        for key in ("d_o", "d_b", "batch", "steps", "n_eval", "workers", "grid_steps", "grid_batch", "grid_n_eval"):
            if getattr(self, key) < 1:
                raise ConfigError("must be >= 1", key)
        if self.n_eval < 4:
            raise ConfigError("must be >= 4", "n_eval")
        for key in ("d_a", "seeds", "grid_settings") + _AXES:
            if len(getattr(self, key)) == 0:
                raise ConfigError("axis must be nonempty", key)
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct", "seeds")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be >= 0", "seeds")
        for d_a in self.d_a:
            if not 1 <= d_a <= self.d_o:
                raise ConfigError(f"{d_a} outside [1, d_o={self.d_o}]", "d_a")
        if self.d_b > self.d_o:
            raise ConfigError(f"must be <= d_o={self.d_o}", "d_b")
        for d_z in self.d_z:
            if d_z is not None and not 1 <= d_z <= self.d_o:
                raise ConfigError(f"{d_z} outside [1, d_o={self.d_o}]", "d_z")
        for key in ("sigma_iid", "sigma_exo", "aug"):
            if any(v < 0 for v in getattr(self, key)):
                raise ConfigError("values must be >= 0", key)
        for key in ("chi", "label_fraction"):
            if any(not 0.0 <= v <= 1.0 for v in getattr(self, key)):
                raise ConfigError("values must lie in [0, 1]", key)
        if self.sigma_q < 0:
            raise ConfigError("must be >= 0", "sigma_q")
        if self.lr <= 0 or (self.lr_final is not None and self.lr_final <= 0):
            raise ConfigError("learning rates must be > 0", "lr" if self.lr <= 0 else "lr_final")
        if self.action_weight is not None and self.action_weight < 0:
            raise ConfigError("must be >= 0", "action_weight")
        if self.latent_kind not in ("surrogate", "true_latent"):
            raise ConfigError(f"unknown latent kind {self.latent_kind!r}", "latent_kind")
        for s in self.grid_settings:
            if s not in GRID_SETTINGS:
                raise ConfigError(f"unknown grid setting {s!r}; choose from {', '.join(GRID_SETTINGS)}", "grid_settings")
        if self.orthogonal_exo and max(self.d_a) + self.d_b > self.d_o:
            raise ConfigError("orthogonal exogenous noise needs d_a + d_b <= d_o", "orthogonal_exo")
        return self

    @property
    def x_axis(self) -> str:
        return _EXPERIMENT_DEFAULTS[self.experiment]["x"]

    @property
    def line_axis(self) -> str | None:
        return _EXPERIMENT_DEFAULTS[self.experiment]["line"]

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join("d_a" if x is None else str(x) for x in v)
            elif v is None:
                v = "none"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return asdict(self)


_FIELD_TYPES = {f.name: f for f in fields(ExperimentConfig)}
_LIST_ITEM = {
    "d_a": int,
    "d_z": "d_z",
    "sigma_iid": float,
    "sigma_exo": float,
    "chi": float,
    "aug": float,
    "label_fraction": float,
    "seeds": int,
    "grid_settings": str,
}
_SCALARS = {
    "experiment": str,
    "profile": str,
    "d_o": int,
    "d_b": int,
    "sigma_q": float,
    "batch": int,
    "steps": int,
    "lr": float,
    "lr_final": "optional_float",
    "n_eval": int,
    "latent_kind": str,
    "action_weight": "optional_float",
    "orthogonal_exo": bool,
    "workers": int,
    "out_dir": str,
    "grid_steps": int,
    "grid_batch": int,
    "grid_n_eval": int,
    "plot": bool,
}
# accepted spellings
_ALIASES = {"lambda": "label_fraction", "aug_magnitude": "aug", "seed": "seeds"}


def _parse_bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}", key)


def _parse_value(key: str, text: str):
    try:
        if key in _LIST_ITEM:
            kind = _LIST_ITEM[key]
            items = [t.strip() for t in text.split(",") if t.strip()]
            if kind == "d_z":
                return tuple(None if t.lower() == "d_a" else int(t) for t in items)
            return tuple(kind(t) for t in items)
        kind = _SCALARS[key]
        if kind == "optional_float":
            return None if text.strip().lower() in ("none", "") else float(text)
        if kind is bool:
            return _parse_bool(text, key)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"cannot parse {text!r}", key) from exc


def canonical_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    key = _ALIASES.get(key, key)
    if key not in _FIELD_TYPES:
        raise ConfigError("unknown key", key)
    return key


def parse_config_text(text: str) -> dict[str, str]:
    """Raw ``{key: value-text}`` from the flat format; keys are canonicalized."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", line)
        key, value = line.split("=", 1)
        out[canonical_key(key)] = value.strip()
    return out


def load_config(path: str | Path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def resolve_config(file_values: dict[str, str] | None = None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Merge defaults, profile, experiment axes, file values and overrides."""
    raw = dict(file_values or {})
    raw.update({canonical_key(k): v for k, v in (overrides or {}).items() if v is not None})
    user = {k: _parse_value(k, v) for k, v in raw.items()}
    cfg = ExperimentConfig()
    experiment = user.get("experiment", cfg.experiment)
    profile = user.get("profile", cfg.profile)
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}", "experiment")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}", "profile")
    preset = dict(PROFILES[profile])
    axes = {k: v for k, v in _EXPERIMENT_DEFAULTS[experiment].items() if k not in ("x", "line")}
    cfg = replace(cfg, **{**preset, **axes, **user})
    return cfg.validate()


def output_root(cfg: ExperimentConfig | None = None) -> Path:
    """``out_dir`` when set, else ``$LAMLAB_OUT``, else ``./lamlab_out``."""
    if cfg is not None and cfg.out_dir:
        return Path(cfg.out_dir)
    return Path(os.environ.get("LAMLAB_OUT", "lamlab_out"))
