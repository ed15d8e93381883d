"""Linear-probe evaluation of a latent: the LLO score.

``llo = -nmse_q + nmse_eps + nmse_o`` where each ``nmse`` is the held-out
squared error of a linear probe from the latent to the target, divided by
the target's analytic total variance. A latent that predicts ``q`` exactly
and carries nothing about ``eps`` or ``o`` scores 2.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .datagen import Batch, EnvSpec, sample_batch
from .linear_lam import LinearLamParams, fdm_forward, idm_forward, surrogate_latent
from .numerics import solve_lse, substream

__all__ = ["Probe", "LloReport", "fit_probes", "latent_of", "score_probe", "llo", "llo_from_latents"]

LATENT_KINDS = ("true_latent", "surrogate")


@dataclass(frozen=True)
class Probe:
    W: np.ndarray
    b: np.ndarray
    degenerate: bool = False

    def predict(self, z: np.ndarray) -> np.ndarray:
        return z @ self.W.T + self.b


@dataclass(frozen=True)
class LloReport:
    nmse_q: float
    nmse_eps: float
    nmse_o: float
    llo: float
    latent_kind: str
    n_eval: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def default_ridge(z: np.ndarray) -> float:
    zc = z - z.mean(axis=0)
    return 1e-8 * float(np.sum(zc * zc) / max(z.shape[0] - 1, 1)) / z.shape[1]


def fit_probes(z: np.ndarray, targets: dict[str, np.ndarray], ridge: float | None = None) -> dict[str, Probe]:
    """Least-squares probe with bias from ``z`` to each target.

    A latent with no variance gets mean predictors and ``degenerate=True``.
    """
    z = np.asarray(z, float)
    zm = z.mean(axis=0)
    zc = z - zm
    degenerate = bool(np.sum(zc * zc) <= 1e-24 * max(z.size, 1))
    lam = default_ridge(z) if ridge is None else ridge
    probes = {}
    for name, y in targets.items():
        y = np.asarray(y, float)
        ym = y.mean(axis=0)
        if degenerate:
            W = np.zeros((y.shape[1], z.shape[1]))
        else:
            W = solve_lse(zc, y - ym, lam)
        probes[name] = Probe(W=W, b=ym - W @ zm, degenerate=degenerate)
    return probes


def score_probe(probe: Probe, z: np.ndarray, y: np.ndarray, total_var: float) -> float:
    err = probe.predict(z) - y
    return float(np.mean(np.sum(err * err, axis=1)) / total_var)


def latent_of(p: LinearLamParams, batch: Batch, latent_kind: str) -> np.ndarray:
    z = idm_forward(p, batch.o, batch.o_next)
    if latent_kind == "true_latent":
        return z
    if latent_kind == "surrogate":
        return surrogate_latent(p, batch.o, fdm_forward(p, batch.o, z))
    raise ValueError(f"latent_kind must be one of {LATENT_KINDS}, got {latent_kind!r}")


def llo_from_latents(
    z_fit: np.ndarray,
    fit: Batch,
    z_score: np.ndarray,
    score: Batch,
    env: EnvSpec,
    latent_kind: str = "true_latent",
    ridge: float | None = None,
) -> LloReport:
    has_noise = env.noise.kind != "none" and env.total_var("eps") > 0
    targets = {"q": fit.q, "o": fit.o}
    if has_noise:
        targets["eps"] = fit.eps
    probes = fit_probes(z_fit, targets, ridge)
    nmse_q = score_probe(probes["q"], z_score, score.q, env.total_var("q"))
    nmse_o = score_probe(probes["o"], z_score, score.o, env.total_var("o"))
    # no noise: its term is fixed at 1 by convention
    nmse_eps = score_probe(probes["eps"], z_score, score.eps, env.total_var("eps")) if has_noise else 1.0
    return LloReport(
        nmse_q=nmse_q,
        nmse_eps=nmse_eps,
        nmse_o=nmse_o,
        llo=-nmse_q + nmse_eps + nmse_o,
        latent_kind=latent_kind,
        n_eval=fit.n + score.n,
        degenerate=probes["q"].degenerate,
    )


def llo(
    p: LinearLamParams,
    env: EnvSpec,
    n_eval: int = 20000,
    latent_kind: str = "surrogate",
    rng: np.random.Generator | None = None,
    ridge: float | None = None,
) -> LloReport:
    """Fit probes on one half of a fresh batch and score them on the other."""
    if n_eval < 4:
        raise ValueError("n_eval must be >= 4")
    rng = substream(env.seed, "eval") if rng is None else rng
    batch = sample_batch(env, n_eval, 0.0, rng)
    fit, score = batch.split(n_eval // 2)
    return llo_from_latents(
        latent_of(p, fit, latent_kind), fit, latent_of(p, score, latent_kind), score, env, latent_kind, ridge
    )
