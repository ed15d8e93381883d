"""Linear latent action model.

IDM ``z = C(o + k1) + D(o' + k1)``, FDM ``o_hat' = A(o + k2) + B z``, trained
on the squared reconstruction error against ``o' + k2``. ``k1``/``k2`` are
the shared additive augmentation vectors (zero when augmentation is off).
An optional action head ``a_hat = E z`` is fit on labeled rows.

Batches are row-major: every function that takes ``o`` accepts either a
single vector or an ``(n, d)`` stack.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .datagen import Batch, EnvSpec, draw_augmentation, sample_batch
from .errors import NonFiniteError, RankError, ShapeError
from .numerics import AdamState, adam_step, substream

__all__ = [
    "LinearLamParams",
    "TrainConfig",
    "TrainResult",
    "init_params",
    "idm_forward",
    "fdm_forward",
    "recon_loss",
    "action_loss",
    "objective_and_grads",
    "expected_recon_loss",
    "train",
    "surrogate_latent",
]


@dataclass
class LinearLamParams:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray | None = None

    def __post_init__(self):
        d_o = self.A.shape[0]
        d_z = self.B.shape[1]
        if self.A.shape != (d_o, d_o) or self.B.shape != (d_o, d_z):
            raise ShapeError(f"A {self.A.shape} / B {self.B.shape} inconsistent")
        if self.C.shape != (d_z, d_o) or self.D.shape != (d_z, d_o):
            raise ShapeError(f"C {self.C.shape} / D {self.D.shape} must be ({d_z}, {d_o})")
        if self.E is not None and self.E.shape[1] != d_z:
            raise ShapeError(f"E {self.E.shape} must have {d_z} columns")

    @property
    def d_o(self) -> int:
        return self.A.shape[0]

    @property
    def d_z(self) -> int:
        return self.B.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {"A": self.A, "B": self.B, "C": self.C, "D": self.D}
        if self.E is not None:
            out["E"] = self.E
        return out

    def copy(self) -> "LinearLamParams":
        return LinearLamParams(**{k: v.copy() for k, v in self.as_dict().items()})


@dataclass
class TrainConfig:
    """Training hyperparameters.

    ``aug_magnitude`` is the per-element variance of the augmentation noise.
    ``action_weight`` defaults to ``label_fraction``. ``lr_final`` enables a
    geometric decay from ``lr`` to ``lr_final`` over the run.
    """

    d_z: int = 8
    steps: int = 4000
    batch: int = 128
    lr: float = 1e-3
    lr_final: float | None = None
    aug_magnitude: float = 0.0
    action_weight: float | None = None
    label_fraction: float = 0.0
    seed: int = 0
    stop_grad_action: bool = False

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1 or self.d_z < 1:
            raise ValueError("steps, batch and d_z must be >= 1")
        if self.aug_magnitude < 0:
            raise ValueError("aug_magnitude must be >= 0")
        if not 0.0 <= self.label_fraction <= 1.0:
            raise ValueError("label_fraction must lie in [0, 1]")
        if self.action_weight is not None and self.action_weight < 0:
            raise ValueError("action_weight must be >= 0")
        if self.lr <= 0 or (self.lr_final is not None and self.lr_final <= 0):
            raise ValueError("learning rates must be > 0")

    @property
    def weight(self) -> float:
        return self.label_fraction if self.action_weight is None else self.action_weight

    @property
    def uses_action_head(self) -> bool:
        return self.label_fraction > 0

    def lr_at(self, step: int) -> float:
        if self.lr_final is None or self.steps == 1:
            return self.lr
        frac = step / (self.steps - 1)
        return self.lr * (self.lr_final / self.lr) ** frac

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: LinearLamParams
    loss_trace: np.ndarray
    recon_trace: np.ndarray
    config: TrainConfig
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)


def init_params(d_o: int, d_z: int, d_a: int | None, rng: np.random.Generator) -> LinearLamParams:
    """Entries i.i.d. ``N(0, 1/d_o)``; ``E`` only when ``d_a`` is given."""
    s = 1.0 / np.sqrt(d_o)
    A = s * rng.standard_normal((d_o, d_o))
    B = s * rng.standard_normal((d_o, d_z))
    C = s * rng.standard_normal((d_z, d_o))
    D = s * rng.standard_normal((d_z, d_o))
    E = s * rng.standard_normal((d_a, d_z)) if d_a else None
    return LinearLamParams(A, B, C, D, E)


def _check_cols(name: str, x: np.ndarray, d: int):
    if x.shape[-1] != d:
        raise ShapeError(f"{name} has trailing dimension {x.shape[-1]}, expected {d}")


def idm_forward(p: LinearLamParams, o, o_next, k1=None) -> np.ndarray:
    o, o_next = np.asarray(o, float), np.asarray(o_next, float)
    _check_cols("o", o, p.d_o)
    _check_cols("o_next", o_next, p.d_o)
    if o.shape != o_next.shape:
        raise ShapeError(f"o {o.shape} and o_next {o_next.shape} differ")
    if k1 is not None:
        o, o_next = o + k1, o_next + k1
    return o @ p.C.T + o_next @ p.D.T


def fdm_forward(p: LinearLamParams, o, z, k2=None) -> np.ndarray:
    o, z = np.asarray(o, float), np.asarray(z, float)
    _check_cols("o", o, p.d_o)
    _check_cols("z", z, p.d_z)
    if k2 is not None:
        o = o + k2
    return o @ p.A.T + z @ p.B.T


def _aug_pair(n: int, d_o: int, aug: float, rng):
    if aug == 0:
        return None, None
    k1 = draw_augmentation((n, d_o), aug, rng)
    k2 = draw_augmentation((n, d_o), aug, rng)
    return k1, k2


def recon_loss(p: LinearLamParams, batch: Batch, aug: float = 0.0, rng: np.random.Generator | None = None) -> float:
    """Mean over rows of ``||o_hat' - o'||^2`` (fresh augmentation draws when ``aug > 0``)."""
    if batch.n == 0:
        raise ValueError("empty batch")
    k1 = k2 = None
    if aug:
        rng = np.random.default_rng() if rng is None else rng
        k1, k2 = _aug_pair(batch.n, p.d_o, aug, rng)
    z = idm_forward(p, batch.o, batch.o_next, k1)
    pred = fdm_forward(p, batch.o, z, k2)
    target = batch.o_next if k2 is None else batch.o_next + k2
    return float(np.mean(np.sum((pred - target) ** 2, axis=1)))


def action_loss(p: LinearLamParams, batch: Batch) -> float:
    """Mean ``||E z - a||^2`` over labeled rows only."""
    if p.E is None:
        raise ValueError("model has no action head E")
    if not np.any(batch.label):
        raise ValueError("batch has no labeled rows")
    lab = batch.label
    z = idm_forward(p, batch.o[lab], batch.o_next[lab])
    return float(np.mean(np.sum((z @ p.E.T - batch.a[lab]) ** 2, axis=1)))


def objective_and_grads(
    p: LinearLamParams,
    o: np.ndarray,
    o_next: np.ndarray,
    k1: np.ndarray | None = None,
    k2: np.ndarray | None = None,
    a: np.ndarray | None = None,
    label: np.ndarray | None = None,
    action_weight: float = 0.0,
    stop_grad_action: bool = False,
) -> tuple[float, float, dict[str, np.ndarray]]:
    """Total objective, its reconstruction part, and exact gradients.

    The action term ``action_weight * mean_labeled ||E z - a||^2`` is added
    when ``p.E`` is present and at least one row is labeled.
    """
    n = o.shape[0]
    oi = o if k1 is None else o + k1
    oni = o_next if k1 is None else o_next + k1
    of = o if k2 is None else o + k2
    target = o_next if k2 is None else o_next + k2

    z = oi @ p.C.T + oni @ p.D.T
    r = of @ p.A.T + z @ p.B.T - target
    recon = float(np.sum(r * r) / n)
    g = (2.0 / n) * r
    grads = {"A": g.T @ of, "B": g.T @ z}
    gz = g @ p.B

    total = recon
    if p.E is not None:
        grads["E"] = np.zeros_like(p.E)
        if label is not None and action_weight > 0 and np.any(label):
            zl = z[label]
            ra = zl @ p.E.T - a[label]
            nl = zl.shape[0]
            total += action_weight * float(np.sum(ra * ra) / nl)
            ga = (2.0 * action_weight / nl) * ra
            grads["E"] = ga.T @ zl
            if not stop_grad_action:
                gz[label] += ga @ p.E

    grads["C"] = gz.T @ oi
    grads["D"] = gz.T @ oni
    return total, recon, grads


def expected_recon_loss(p: LinearLamParams, env: EnvSpec, aug: float = 0.0) -> float:
    """Closed-form population reconstruction loss under ``env``.

    With ``o ~ N(0, I)``, ``pi_s``, ``eps`` and the augmentation vectors all
    independent, the residual is a sum of independent linear images of them.
    """
    I = np.eye(p.d_o)
    BD = p.B @ p.D
    M_o = I - p.A - p.B @ p.C - BD  # coefficient of o outside the q path
    M_qe = I - BD  # coefficient of q + eps
    chi = env.policy.chi
    XPi = env.X @ env.policy.Pi_d
    Sigma_o = env.obs_cov()
    coef_o = M_o + chi * M_qe @ XPi
    loss = np.trace(coef_o @ Sigma_o @ coef_o.T)
    MX = M_qe @ env.X
    loss += (1.0 - chi) ** 2 * np.sum(MX * MX)
    loss += np.trace(M_qe @ env.eps_cov() @ M_qe.T)
    if aug:
        BCD = p.B @ (p.C + p.D)
        loss += aug * (np.sum(BCD * BCD) + np.sum((I - p.A) ** 2))
    return float(loss)


def train(env: EnvSpec, cfg: TrainConfig, init: LinearLamParams | None = None) -> TrainResult:
    """Adam on a fresh batch every step (infinite-data regime)."""
    t0 = time.perf_counter()
    rng_init = substream(cfg.seed, "init")
    rng_data = substream(cfg.seed, "data", env.seed)
    rng_aug = substream(cfg.seed, "aug")
    p = init.copy() if init is not None else init_params(
        env.d_o, cfg.d_z, env.d_a if cfg.uses_action_head else None, rng_init
    )
    params = p.as_dict()
    state = AdamState(lr=cfg.lr)
    losses = np.empty(cfg.steps)
    recons = np.empty(cfg.steps)
    weight = cfg.weight
    for step in range(cfg.steps):
        b = sample_batch(env, cfg.batch, cfg.label_fraction, rng_data)
        k1, k2 = _aug_pair(cfg.batch, env.d_o, cfg.aug_magnitude, rng_aug)
        cur = LinearLamParams(**params)
        # divergence is reported below as NonFiniteError
        with np.errstate(over="ignore", invalid="ignore"):
            total, recon, grads = objective_and_grads(
                cur, b.o, b.o_next, k1, k2, b.a, b.label, weight, cfg.stop_grad_action
            )
        if not np.isfinite(total):
            raise NonFiniteError(f"training loss diverged at step {step}", step=step)
        losses[step] = total
        recons[step] = recon
        adam_step(params, grads, state, lr=cfg.lr_at(step))
    return TrainResult(
        params=LinearLamParams(**params),
        loss_trace=losses,
        recon_trace=recons,
        config=cfg,
        wall_time=time.perf_counter() - t0,
    )


def surrogate_latent(p: LinearLamParams, o, o_hat_next, rank_tol: float = 1e-10) -> np.ndarray:
    """Least-squares solve of ``B z = o_hat' - o`` (B is tall)."""
    s = np.linalg.svd(p.B, compute_uv=False)
    if s.size == 0 or s[-1] <= rank_tol * max(s[0], np.finfo(float).tiny):
        raise RankError("B is rank deficient; surrogate latent undefined")
    delta = np.asarray(o_hat_next, float) - np.asarray(o, float)
    sol, *_ = np.linalg.lstsq(p.B, delta.T if delta.ndim == 2 else delta, rcond=None)
    return sol.T if delta.ndim == 2 else sol
