"""Central finite-difference checks for tape gradients and closed-form gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .numerics import make_rng

__all__ = ["rel_err", "numeric_grad", "check_tensor_fn"]


def rel_err(a, b) -> float:
    """Symmetric relative error ``|a - b| / (|a| + |b|)`` on flattened arrays."""
    a, b = np.asarray(a, float).ravel(), np.asarray(b, float).ravel()
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. ``x``, perturbed in place and restored."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def check_tensor_fn(build: Callable[..., ad.Tensor], arrays: Sequence[np.ndarray], seed: int = 0, h: float = 1e-6) -> float:
    """Worst relative error of ``backward`` against central differences.

    The scalar probed is ``sum(build(*arrays) * R)`` for a fixed random ``R``,
    so every output element contributes with a distinct weight.
    """
    out_shape = build(*[ad.const(a) for a in arrays]).shape
    R = make_rng(seed + 10_000).standard_normal(out_shape)

    def value():
        return float(np.sum(build(*[ad.const(a) for a in arrays]).data * R))

    params = [ad.param(a) for a in arrays]
    with ad.Tape() as tape:
        loss = ad.sum_all(ad.mul(build(*params), ad.const(R)))
    grads = ad.backward(tape, loss, params)
    return max(rel_err(g, numeric_grad(value, a, h)) for g, a in zip(grads, arrays))
