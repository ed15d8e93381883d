"""Dense linear algebra, seeded randomness and the Adam optimizer.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The symmetric
eigensolver is a cyclic Jacobi method with round-robin (parallel) ordering,
so every sweep is ``n - 1`` vectorized rounds of ``n // 2`` disjoint
rotations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, NonFiniteError, NotSymmetricError, ShapeError

__all__ = [
    "EigSolution",
    "AdamState",
    "make_rng",
    "substream",
    "sym_eig",
    "random_orthogonal",
    "solve_lse",
    "adam_step",
    "principal_angles",
]

Mat = np.ndarray


# ---------------------------------------------------------------- randomness

def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for ``seed`` (an unsigned 64-bit integer)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def substream(seed: int, *keys: int | str) -> np.random.Generator:
    """Independent PCG64 stream identified by ``(seed, *keys)``.

    String keys are hashed to integers with a fixed (non-salted) hash so the
    stream is reproducible across processes and platforms.
    """
    spawn_key = tuple(_key_to_int(k) for k in keys)
    ss = np.random.SeedSequence(int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(ss))


def _key_to_int(key: int | str) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    h = 2166136261
    for byte in str(key).encode():
        h = ((h ^ byte) * 16777619) & 0xFFFFFFFF
    return h


# ---------------------------------------------------------------- eigensolver

@dataclass(frozen=True)
class EigSolution:
    eigenvalues: np.ndarray
    eigenvectors: Mat

    def reconstruct(self) -> Mat:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings covering every (p, q) once per sweep; odd n gets a bye."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def sym_eig(S: Mat, tol: float = 1e-15, max_sweeps: int = 100) -> EigSolution:
    """Eigen-decomposition of a real symmetric matrix.

    Eigenvalues are returned in descending order. Each eigenvector is
    oriented so that its largest-magnitude entry is positive (the first such
    entry on exact ties).
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeError(f"sym_eig needs a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise NonFiniteError("sym_eig input has non-finite entries")
    n = S.shape[0]
    scale = np.linalg.norm(S)
    if np.linalg.norm(S - S.T) > 1e-10 * max(scale, np.finfo(float).tiny):
        raise NotSymmetricError("sym_eig input is not symmetric within 1e-10 relative")

    A = 0.5 * (S + S.T)
    V = np.eye(n)
    if n > 1 and scale > 0:
        rounds = _round_robin(n)
        target = tol * scale
        for sweep in range(max_sweeps + 1):
            off = np.linalg.norm(A - np.diag(np.diag(A)))
            if off <= target:
                break
            if sweep == max_sweeps:
                raise ConvergenceError("Jacobi eigensolver did not converge", max_sweeps)
            for p, q in rounds:
                apq = A[p, q]
                active = np.abs(apq) > 1e-300
                if not np.any(active):
                    continue
                p, q, apq = p[active], q[active], apq[active]
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # rows: A <- J^T A
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c[:, None] * rp - s[:, None] * rq
                A[q, :] = s[:, None] * rp + c[:, None] * rq
                # columns: A <- A J, V <- V J
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = cp * c - cq * s
                A[:, q] = cp * s + cq * c
                A[p, q] = 0.0
                A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = vp * c - vq * s
                V[:, q] = vp * s + vq * c

    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    lead = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[lead, np.arange(n)])
    signs[signs == 0] = 1.0
    return EigSolution(eigenvalues=w, eigenvectors=V * signs)


# ---------------------------------------------------------------- QR / LSE

def random_orthogonal(rows: int, cols: int, rng: np.random.Generator) -> Mat:
    """Haar-distributed matrix with orthonormal columns.

    QR of an i.i.d. standard Gaussian matrix, with columns flipped so the
    diagonal of R is positive.
    """
    if rows < cols or cols < 1:
        raise ShapeError(f"random_orthogonal needs rows >= cols >= 1, got ({rows}, {cols})")
    g = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(g)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def solve_lse(Xin: Mat, Yout: Mat, ridge: float = 0.0) -> Mat:
    """W minimizing ``||Xin @ W.T - Yout||_F^2 + ridge * ||W||_F^2``.

    With ``ridge == 0`` the minimum-norm least-squares solution is returned,
    which is well defined for rank-deficient ``Xin``.
    """
    Xin = np.asarray(Xin, dtype=np.float64)
    Yout = np.asarray(Yout, dtype=np.float64)
    if Yout.ndim == 1:
        Yout = Yout[:, None]
    if Xin.ndim != 2 or Xin.shape[0] != Yout.shape[0]:
        raise ShapeError(f"solve_lse row mismatch: {Xin.shape} vs {Yout.shape}")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if ridge > 0:
        p = Xin.shape[1]
        Xin = np.vstack([Xin, np.sqrt(ridge) * np.eye(p)])
        Yout = np.vstack([Yout, np.zeros((p, Yout.shape[1]))])
    W, *_ = np.linalg.lstsq(Xin, Yout, rcond=None)
    return W.T


def principal_angles(U: Mat, V: Mat) -> np.ndarray:
    """Principal angles (radians, ascending) between col(U) and col(V)."""
    qu, _ = np.linalg.qr(U)
    qv, _ = np.linalg.qr(V)
    # COS/SIN combination keeps small angles accurate
    m = qu.T @ qv
    cos = np.clip(np.linalg.svd(m, compute_uv=False), 0.0, 1.0)
    resid = qv - qu @ m
    sin = np.clip(np.linalg.svd(resid, compute_uv=False), 0.0, 1.0)
    k = min(qu.shape[1], qv.shape[1])
    sin = np.sort(sin)[:k]
    ang = np.where(cos[:k] > np.sqrt(0.5), np.arcsin(sin), np.arccos(cos[:k]))
    return np.sort(ang)


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float | None = None,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place to ``params``.

    ``lr`` overrides ``state.lr`` for this step (used by schedules).
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient {name!r} has shape {g.shape}, expected {params[name].shape}")
    # one cheap scan over everything; name the first offending block only on failure
    with np.errstate(over="ignore", invalid="ignore"):
        total = sum(float(np.sum(g)) for g in grads.values())
    if not np.isfinite(total):
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient in block {name!r}", block=name, step=state.step)

    state.step += 1
    lr = state.lr if lr is None else lr
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
