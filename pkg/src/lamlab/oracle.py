"""Closed-form optima of the linear LAM, used as test oracles.

* PCA view: with ``E[o (q + eps)^T] = 0`` the loss is
  ``E||(BD - I)(q + eps)||^2``, minimized by the top eigenvectors of
  ``Sigma_{q+eps}`` with loss equal to the discarded eigenvalue mass.
* Correlated policy: the optimal ``A`` for given ``(B, C, D)``.
* Action prediction with ``eps`` orthogonal to ``col(X)``: the encoder that
  reads out ``q`` and ignores the noise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .datagen import EnvSpec
from .errors import OracleAssumptionError, ShapeError
from .numerics import EigSolution, sym_eig

__all__ = [
    "PcaOracle",
    "SubspaceNotUniqueWarning",
    "sigma_q_eps",
    "pca_oracle",
    "optimal_loss",
    "optimal_BD",
    "closed_form_A",
    "closed_form_A_literal",
    "perfect_denoise_solution",
]

TIE_RTOL = 1e-6


class SubspaceNotUniqueWarning(UserWarning):
    """Eigenvalues tie across the d_z cut, so the optimal subspace is not unique."""


@dataclass(frozen=True)
class PcaOracle:
    Sigma: np.ndarray
    eig: EigSolution
    d_z: int

    @property
    def boundary_tie(self) -> bool:
        lam = self.eig.eigenvalues
        if self.d_z >= lam.size:
            return False
        hi, lo = lam[self.d_z - 1], lam[self.d_z]
        scale = max(abs(lam[0]), np.finfo(float).tiny)
        return (hi - lo) < TIE_RTOL * scale


def sigma_q_eps(env: EnvSpec) -> np.ndarray:
    """Analytic ``E[(q + eps)(q + eps)^T]`` (q and eps are independent)."""
    S = env.q_cov() + env.eps_cov()
    return 0.5 * (S + S.T)


def pca_oracle(env_or_sigma: EnvSpec | np.ndarray, d_z: int) -> PcaOracle:
    Sigma = sigma_q_eps(env_or_sigma) if isinstance(env_or_sigma, EnvSpec) else np.asarray(env_or_sigma, float)
    if not 1 <= d_z <= Sigma.shape[0]:
        raise ShapeError(f"d_z must lie in [1, {Sigma.shape[0]}], got {d_z}")
    return PcaOracle(Sigma=Sigma, eig=sym_eig(Sigma), d_z=d_z)


def optimal_loss(oracle: PcaOracle) -> float:
    lam = oracle.eig.eigenvalues[oracle.d_z:]
    # negative rounding noise on a PSD matrix's null space
    return float(np.sum(np.clip(lam, 0.0, None)))


def optimal_BD(oracle: PcaOracle) -> tuple[np.ndarray, np.ndarray]:
    """``B = U_dz`` and ``D = B^T``; warns when the subspace is not unique."""
    if oracle.boundary_tie:
        warnings.warn(
            f"eigenvalues tie across d_z={oracle.d_z}; optimal subspace not unique",
            SubspaceNotUniqueWarning,
            stacklevel=2,
        )
    B = oracle.eig.eigenvectors[:, : oracle.d_z].copy()
    return B, B.T.copy()


def closed_form_A(env: EnvSpec, B: np.ndarray, C: np.ndarray, D: np.ndarray, aug: float = 0.0) -> np.ndarray:
    """Optimal FDM matrix ``A`` for fixed ``(B, C, D)``.

    Setting the gradient of the population loss to zero gives

        A (Sigma_o + aug I) = (I - BC - BD) Sigma_o - (BD - I) E[q o^T] + aug I

    with ``E[q o^T] = chi X Pi_d Sigma_o``. Without augmentation this is
    ``A = I - B(C + D) - (BD - I) E[q o^T] Sigma_o^{-1}``, which reduces to
    ``I - B(C + D)`` for a fully random policy. ``eps`` is independent of
    ``o`` for both noise families, so it adds no term.
    """
    d_o = env.d_o
    I = np.eye(d_o)
    Sigma_o = env.obs_cov()
    lhs = Sigma_o + aug * I
    if np.linalg.cond(lhs) > 1e12:
        raise np.linalg.LinAlgError("observation covariance is singular")
    BD = B @ D
    rhs = (I - B @ C - BD) @ Sigma_o - (BD - I) @ env.obs_q_cross() + aug * I
    # A lhs = rhs  =>  lhs^T A^T = rhs^T
    return np.linalg.solve(lhs.T, rhs.T).T


def closed_form_A_literal(env: EnvSpec, B: np.ndarray, C: np.ndarray, D: np.ndarray) -> np.ndarray:
    """The correlated-policy formula in its transposed published form.

    ``I - (BC + BD) - Sigma_o (chi Pi_d)^T X^T (BD - I)^T Sigma_o^{-1}``. Kept
    for comparison only: it is the transpose of the stationary correction in
    :func:`closed_form_A` and does not zero the gradient with respect to A.
    """
    Sigma_o = env.obs_cov()
    P = env.policy.chi * env.policy.Pi_d
    BD = B @ D
    corr = Sigma_o @ P.T @ env.X.T @ (BD - np.eye(env.d_o)).T @ np.linalg.inv(Sigma_o)
    return np.eye(env.d_o) - (B @ C + BD) - corr


def perfect_denoise_solution(env: EnvSpec, d_z: int, atol: float = 1e-8):
    """Encoder that keeps ``q`` and drops ``eps`` when ``Y`` is orthogonal to ``X``.

    From the thin SVD ``X = U S V^T``: ``D = [U^T; 0]``, ``B = [U, 0]``,
    ``E = [V S^{-1}, 0]``, ``C = -D`` and ``A = I``. Returns
    ``(B, D, E)``; the zero blocks fill the ``d_z - d_a`` spare latent slots.
    """
    if d_z < env.d_a:
        raise OracleAssumptionError(f"need d_z >= d_a, got d_z={d_z}, d_a={env.d_a}")
    if env.noise.sigma_iid > 0:
        raise OracleAssumptionError("isotropic noise always overlaps col(X)")
    if env.Y is not None:
        leak = np.linalg.norm(env.Y.T @ env.X) / max(np.linalg.norm(env.Y) * np.linalg.norm(env.X), 1e-300)
        if leak > atol:
            raise OracleAssumptionError(f"exogenous effects overlap col(X) (relative leak {leak:.2e})")
    U, s, Vt = np.linalg.svd(env.X, full_matrices=False)
    k = env.d_a
    D = np.zeros((d_z, env.d_o))
    D[:k] = U.T
    B = np.zeros((env.d_o, d_z))
    B[:, :k] = U
    E = np.zeros((env.d_a, d_z))
    E[:, :k] = Vt.T / s
    if np.linalg.norm(B @ D @ env.X - env.X) > atol * max(np.linalg.norm(env.X), 1.0):
        raise OracleAssumptionError("constructed solution does not reproduce X")
    return B, D, E
