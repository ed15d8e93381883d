"""Synthetic controlled-Markov-process transitions ``o' = o + X a + eps``.

Observations and stochastic actions are standard Gaussian, so every
"variance" here is a per-element variance. The action effect matrix is
scaled so ``sigma_q`` is the per-element standard deviation of ``q = X a``
under a fully random policy; the exogenous matrix ``Y`` is scaled the same
way by ``sigma_exo``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .numerics import random_orthogonal, substream

__all__ = [
    "NoiseSpec",
    "PolicySpec",
    "EnvSpec",
    "Batch",
    "make_env",
    "sample_batch",
    "draw_augmentation",
    "augment",
]


@dataclass(frozen=True)
class NoiseSpec:
    """Exogenous noise ``eps = sigma_iid * n + Y b`` with ``n, b ~ N(0, I)``.

    ``kind`` is ``none``, ``iid``, ``exo`` or ``mixed`` depending on which
    scales are nonzero.
    """

    sigma_iid: float = 0.0
    sigma_exo: float = 0.0

    def __post_init__(self):
        if self.sigma_iid < 0 or self.sigma_exo < 0:
            raise ValueError("noise scales must be >= 0")

    @property
    def kind(self) -> str:
        if self.sigma_iid and self.sigma_exo:
            return "mixed"
        if self.sigma_exo:
            return "exo"
        if self.sigma_iid:
            return "iid"
        return "none"

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls()

    @classmethod
    def iid(cls, sigma: float) -> "NoiseSpec":
        return cls(sigma_iid=float(sigma))

    @classmethod
    def exo(cls, sigma: float) -> "NoiseSpec":
        return cls(sigma_exo=float(sigma))

    @classmethod
    def mixed(cls, sigma_iid: float, sigma_exo: float) -> "NoiseSpec":
        return cls(float(sigma_iid), float(sigma_exo))


@dataclass(frozen=True)
class PolicySpec:
    """``a = chi * Pi_d @ o + (1 - chi) * pi_s`` with ``pi_s ~ N(0, I)``."""

    chi: float
    Pi_d: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.chi <= 1.0:
            raise ValueError(f"chi must lie in [0, 1], got {self.chi}")
        if not np.all(np.isfinite(self.Pi_d)):
            raise ValueError("Pi_d has non-finite entries")


@dataclass(frozen=True)
class EnvSpec:
    d_o: int
    d_a: int
    d_b: int
    sigma_q: float
    noise: NoiseSpec
    policy: PolicySpec
    X: np.ndarray
    Y: np.ndarray | None
    seed: int
    orthogonalize_Y_against_X: bool = False

    @property
    def chi(self) -> float:
        return self.policy.chi

    def action_cov(self) -> np.ndarray:
        chi, P = self.policy.chi, self.policy.Pi_d
        return chi**2 * (P @ P.T) + (1.0 - chi) ** 2 * np.eye(self.d_a)

    def obs_cov(self) -> np.ndarray:
        return np.eye(self.d_o)

    def q_cov(self) -> np.ndarray:
        return self.X @ self.action_cov() @ self.X.T

    def eps_cov(self) -> np.ndarray:
        cov = self.noise.sigma_iid**2 * np.eye(self.d_o)
        if self.Y is not None:
            cov = cov + self.Y @ self.Y.T
        return cov

    def obs_q_cross(self) -> np.ndarray:
        """``E[q o^T]``; nonzero only for a partly deterministic policy."""
        return self.policy.chi * self.X @ self.policy.Pi_d @ self.obs_cov()

    def total_var(self, which: str) -> float:
        """Total variance (trace of the covariance) of ``q``, ``eps`` or ``o``."""
        cov = {"q": self.q_cov, "eps": self.eps_cov, "o": self.obs_cov}[which]()
        return float(np.trace(cov))


@dataclass
class Batch:
    o: np.ndarray
    a: np.ndarray
    q: np.ndarray
    eps: np.ndarray
    o_next: np.ndarray
    label: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.o.shape[0]
        if self.label is None:
            self.label = np.zeros(n, dtype=bool)
        for name in ("a", "q", "eps", "o_next", "label"):
            if getattr(self, name).shape[0] != n:
                raise ShapeError(f"batch field {name!r} has {getattr(self, name).shape[0]} rows, expected {n}")

    @property
    def n(self) -> int:
        return self.o.shape[0]

    def split(self, n_first: int) -> tuple["Batch", "Batch"]:
        def part(sl):
            return Batch(self.o[sl], self.a[sl], self.q[sl], self.eps[sl], self.o_next[sl], self.label[sl])

        return part(slice(0, n_first)), part(slice(n_first, None))


def _scaled_orthogonal(d_o: int, k: int, scale: float, rel: tuple[float, ...] | None, rng) -> np.ndarray:
    M = random_orthogonal(d_o, k, rng)
    if rel is not None:
        rel = np.asarray(rel, dtype=np.float64)
        if rel.shape != (k,) or np.any(rel <= 0):
            raise ValueError(f"relative column scales need {k} positive entries")
        M = M * (rel / np.sqrt(np.mean(rel**2)))
    return M * (scale * np.sqrt(d_o / k))


def make_env(
    d_o: int = 128,
    d_a: int = 8,
    d_b: int = 8,
    sigma_q: float = 1.0,
    noise: NoiseSpec | None = None,
    chi: float = 0.0,
    seed: int = 0,
    orthogonalize_Y_against_X: bool = False,
    action_scales: tuple[float, ...] | None = None,
    exo_scales: tuple[float, ...] | None = None,
) -> EnvSpec:
    """Draw the action-effect, exogenous-effect and policy matrices.

    ``action_scales`` / ``exo_scales`` optionally give relative column
    scales (renormalized to unit mean square) so the covariance spectrum is
    non-degenerate; by default all columns share one scale.
    """
    noise = NoiseSpec.none() if noise is None else noise
    if min(d_o, d_a, d_b) < 1:
        raise ShapeError("dimensions must be >= 1")
    if d_a > d_o or d_b > d_o:
        raise ShapeError(f"need d_a <= d_o and d_b <= d_o, got d_o={d_o}, d_a={d_a}, d_b={d_b}")
    if sigma_q < 0:
        raise ValueError("sigma_q must be >= 0")
    if orthogonalize_Y_against_X and d_a + d_b > d_o:
        raise ShapeError("orthogonal X and Y need d_a + d_b <= d_o")

    X = _scaled_orthogonal(d_o, d_a, sigma_q, action_scales, substream(seed, "X"))

    Y = None
    if noise.sigma_exo > 0:
        rng_y = substream(seed, "Y")
        if orthogonalize_Y_against_X:
            basis, _ = np.linalg.qr(X)
            G = rng_y.standard_normal((d_o, d_b))
            G -= basis @ (basis.T @ G)
            Y0, r = np.linalg.qr(G)
            Y0 = Y0 * np.where(np.diag(r) < 0, -1.0, 1.0)
            # re-project to kill rounding leakage into col(X)
            Y0 -= basis @ (basis.T @ Y0)
            if exo_scales is not None:
                rel = np.asarray(exo_scales, dtype=np.float64)
                Y0 = Y0 * (rel / np.sqrt(np.mean(rel**2)))
            Y = Y0 * (noise.sigma_exo * np.sqrt(d_o / d_b))
        else:
            Y = _scaled_orthogonal(d_o, d_b, noise.sigma_exo, exo_scales, rng_y)

    Pi_d = substream(seed, "Pi_d").standard_normal((d_a, d_o)) / np.sqrt(d_o)
    policy = PolicySpec(chi=float(chi), Pi_d=Pi_d)
    return EnvSpec(
        d_o=d_o,
        d_a=d_a,
        d_b=d_b,
        sigma_q=float(sigma_q),
        noise=noise,
        policy=policy,
        X=X,
        Y=Y,
        seed=int(seed),
        orthogonalize_Y_against_X=orthogonalize_Y_against_X,
    )


def sample_batch(env: EnvSpec, n: int, label_fraction: float = 0.0, rng: np.random.Generator | None = None) -> Batch:
    """Fresh i.i.d. transitions; exactly ``floor(label_fraction * n)`` rows are labeled."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= label_fraction <= 1.0:
        raise ValueError("label_fraction must lie in [0, 1]")
    rng = substream(env.seed, "batch") if rng is None else rng
    chi = env.policy.chi
    o = rng.standard_normal((n, env.d_o))
    pi_s = rng.standard_normal((n, env.d_a))
    a = chi * (o @ env.policy.Pi_d.T) + (1.0 - chi) * pi_s
    q = a @ env.X.T
    eps = np.zeros((n, env.d_o))
    if env.noise.sigma_iid > 0:
        eps += env.noise.sigma_iid * rng.standard_normal((n, env.d_o))
    if env.Y is not None:
        eps += rng.standard_normal((n, env.d_b)) @ env.Y.T
    o_next = o + q + eps
    label = np.zeros(n, dtype=bool)
    n_lab = int(np.floor(label_fraction * n))
    if n_lab:
        label[rng.choice(n, size=n_lab, replace=False)] = True
    return Batch(o=o, a=a, q=q, eps=eps, o_next=o_next, label=label)


def draw_augmentation(shape: tuple[int, ...], variance: float, rng: np.random.Generator) -> np.ndarray:
    """Additive augmentation vectors ``k ~ N(0, variance * I)``."""
    if variance < 0:
        raise ValueError("augmentation variance must be >= 0")
    if variance == 0:
        return np.zeros(shape)
    return np.sqrt(variance) * rng.standard_normal(shape)


def augment(o: np.ndarray, k: np.ndarray) -> np.ndarray:
    return o + k
