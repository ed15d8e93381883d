"""Minimal tape-based reverse-mode automatic differentiation.

Every op evaluates eagerly on float64 numpy arrays and, when an input
requires a gradient, appends a record to the active :class:`Tape`. Records
are appended in evaluation order, so walking the tape backwards is a valid
reverse topological order and visits each node exactly once.

    with Tape() as tape:
        y = relu(matmul(x, w))
        loss = mean(y)
    grads = backward(tape, loss)
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import LamLabError, NonFiniteError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "param",
    "const",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "reshape",
    "broadcast_to",
    "concat",
    "conv2d",
    "gather_rows",
    "stop_gradient",
    "straight_through",
    "sum_all",
    "mean",
    "mse",
    "vq_bottleneck",
    "VQResult",
]

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar for the common cases
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def param(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def const(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]
    op: str


class Tape:
    """Ordered op records for one forward pass."""

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()

    def __len__(self):
        return len(self.records)


def _record(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], bwd) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs and _ACTIVE:
        tape = _ACTIVE[-1]
        out.node_id = len(tape.records)
        tape.records.append(_Record(out, tuple(inputs), bwd, op))
    elif needs:
        # no tape: the value is still usable, it just cannot be differentiated
        out.requires_grad = False
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] | None = None):
    """Reverse-mode sweep from a scalar ``loss``.

    Gradients are accumulated into ``.grad`` of every leaf that requires one
    (previous values are overwritten). Returns the list of gradients for
    ``params`` when given, else ``None``.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    leaves: dict[int, Tensor] = {}

    def push(t: Tensor, g: np.ndarray):
        key = id(t)
        if key in grads:
            grads[key] = grads[key] + g
        else:
            grads[key] = g
        if t.node_id is None:
            leaves[key] = t

    push(loss, np.ones_like(loss.data))
    for rec in reversed(tape.records):
        g_out = grads.pop(id(rec.out), None)
        if g_out is None:
            continue
        for t, g in zip(rec.inputs, rec.backward(g_out)):
            if g is not None and t.requires_grad:
                push(t, g)
    for key, t in leaves.items():
        t.grad = grads.get(key, np.zeros_like(t.data))
    if params is not None:
        out = []
        for p in params:
            out.append(grads.get(id(p), np.zeros_like(p.data)) if id(p) in leaves else np.zeros_like(p.data))
        return out
    return None


# ------------------------------------------------------------------ ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = const(a), const(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _record("matmul", A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = const(a), const(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: incompatible shapes {a.shape} + {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _record("add", out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = const(a), const(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: incompatible shapes {a.shape} - {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _record("sub", out, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = const(a), const(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: incompatible shapes {a.shape} * {b.shape}") from exc
    A, B = a.data, b.data
    return _record("mul", out, (a, b), lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    a = const(a)
    c = float(c)
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    a = const(a)
    mask = a.data > 0
    return _record("relu", a.data * mask, (a,), lambda g: (g * mask,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = const(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc
    old = a.shape
    return _record("reshape", out, (a,), lambda g: (g.reshape(old),))


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = const(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: {a.shape} -> {shape}") from exc
    old = a.shape
    return _record("broadcast_to", out, (a,), lambda g: (_unbroadcast(g, old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [const(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bwd(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return _record("concat", out, tensors, bwd)


@lru_cache(maxsize=64)
def _conv_index(H: int, W: int, kh: int, kw: int, p: int, mode: str):
    """Gather maps for a stride-1 convolution on flattened ``H*W`` pixels.

    ``src[o, k]`` is the input pixel read by output ``o`` at kernel offset
    ``k`` (``H*W`` marks a zero-padding read). ``inv[q, k]`` is the output
    that reads pixel ``q`` at offset ``k`` (``Ho*Wo`` when none does); it is
    None when some offset reads a pixel twice, as large periodic padding can.
    """
    Ho, Wo = H + 2 * p - kh + 1, W + 2 * p - kw + 1
    si = np.arange(Ho)[:, None, None, None] + np.arange(kh)[None, None, :, None] - p
    sj = np.arange(Wo)[None, :, None, None] + np.arange(kw)[None, None, None, :] - p
    si, sj = np.broadcast_arrays(si, sj)
    if mode == "periodic":
        src = (si % H) * W + sj % W
    else:
        inside = (si >= 0) & (si < H) & (sj >= 0) & (sj < W)
        src = np.where(inside, si * W + sj, H * W)
    src = src.reshape(Ho * Wo, kh * kw)
    inv = np.full((H * W + 1, kh * kw), Ho * Wo)
    for k in range(kh * kw):
        col = src[:, k]
        hit = col < H * W
        if np.unique(col[hit]).size < hit.sum():
            return Ho, Wo, src, None
        inv[col[hit], k] = np.flatnonzero(hit)
    return Ho, Wo, src, inv[: H * W]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding: int = 0, mode: str = "zeros") -> Tensor:
    """Stride-1 cross-correlation on ``(N, C, H, W)`` with ``w`` of shape ``(O, C, kh, kw)``.

    ``mode`` is ``"zeros"`` or ``"periodic"`` (wrap-around padding).
    """
    x, w = const(x), const(w)
    if mode not in ("zeros", "periodic"):
        raise ValueError(f"conv2d: unknown padding mode {mode!r}")
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    N, C, H, W = x.shape
    O, _, kh, kw = w.shape
    if H + 2 * padding - kh + 1 < 1 or W + 2 * padding - kw + 1 < 1:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {x.shape} with padding {padding}")
    Ho, Wo, src, inv = _conv_index(H, W, kh, kw, padding, mode)
    K = kh * kw
    # channels-last pixels plus one zero row for padding reads
    xl = np.zeros((N, H * W + 1, C))
    xl[:, : H * W] = x.data.transpose(0, 2, 3, 1).reshape(N, H * W, C)
    # (N, Ho*Wo, K, C) -> (N*Ho*Wo, K*C)
    cols = xl[:, src].reshape(N * Ho * Wo, K * C)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(O, K * C)
    out = cols @ wmat.T
    if b is not None:
        b = const(b)
        out = out + b.data
    out = out.reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2)

    def bwd(g):
        gm = g.transpose(0, 2, 3, 1).reshape(N * Ho * Wo, O)
        gw = (gm.T @ cols).reshape(O, kh, kw, C).transpose(0, 3, 1, 2)
        gx = None
        if x.requires_grad:
            gcols = (gm @ wmat).reshape(N, Ho * Wo, K, C)
            if inv is not None:
                gpad = np.zeros((N, Ho * Wo + 1, K, C))
                gpad[:, : Ho * Wo] = gcols
                gxl = gpad[:, inv, np.arange(K)].sum(axis=2)
            else:
                gxl = np.zeros((N, H * W + 1, C))
                for k in range(K):
                    np.add.at(gxl, (slice(None), src[:, k]), gcols[:, :, k])
                gxl = gxl[:, : H * W]
            gx = gxl.reshape(N, H, W, C).transpose(0, 3, 1, 2)
        if b is None:
            return gx, gw
        return gx, gw, gm.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return _record("conv2d", np.ascontiguousarray(out), inputs, bwd)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    a = const(a)
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.shape

    def bwd(g):
        ga = np.zeros(shape)
        np.add.at(ga, idx, g)
        return (ga,)

    return _record("gather_rows", a.data[idx], (a,), bwd)


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(const(a).data.copy())


def straight_through(x: Tensor, value: Tensor) -> Tensor:
    """Forward ``value``; backward passes the gradient to ``x`` unchanged."""
    x, value = const(x), const(value)
    if x.shape != value.shape:
        raise ShapeError(f"straight_through: {x.shape} vs {value.shape}")
    return _record("straight_through", value.data.copy(), (x,), lambda g: (g,))


def sum_all(a: Tensor) -> Tensor:
    a = const(a)
    shape = a.shape
    return _record("sum", np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    a = const(a)
    shape, n = a.shape, a.data.size
    return _record("mean", np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of ``(a - b)^2``."""
    a, b = const(a), const(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes differ {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    return _record(
        "mse",
        np.array(np.mean(diff * diff)),
        (a, b),
        lambda g: ((2.0 * float(g) / n) * diff, (-2.0 * float(g) / n) * diff),
    )


# ------------------------------------------------------------------ VQ

@dataclass
class VQResult:
    z_q: Tensor
    index: np.ndarray
    codebook_loss: Tensor
    commitment_loss: Tensor


class EmptyCodebookError(LamLabError, ValueError):
    pass


def nearest_code(z: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Index of the nearest code by squared L2; ties go to the lowest index."""
    d = np.sum(z * z, axis=1)[:, None] - 2.0 * z @ codebook.T + np.sum(codebook * codebook, axis=1)[None, :]
    return np.argmin(d, axis=1)


def vq_bottleneck(z_e: Tensor, codebook: Tensor, beta: float = 0.25) -> VQResult:
    """Quantize rows of ``z_e`` to their nearest codebook row.

    ``z_q`` carries the code value forward and the straight-through gradient
    back to ``z_e``. Losses: ``mse(sg[z_e], c)`` moves the codebook,
    ``beta * mse(z_e, sg[c])`` commits the encoder.
    """
    z_e, codebook = const(z_e), const(codebook)
    if codebook.data.ndim != 2 or codebook.shape[0] == 0:
        raise EmptyCodebookError("vq_bottleneck needs a non-empty (K, d) codebook")
    if z_e.data.ndim != 2 or z_e.shape[1] != codebook.shape[1]:
        raise ShapeError(f"vq_bottleneck: latents {z_e.shape} vs codebook {codebook.shape}")
    idx = nearest_code(z_e.data, codebook.data)
    c = gather_rows(codebook, idx)
    z_q = straight_through(z_e, c)
    cb_loss = mse(stop_gradient(z_e), c)
    commit = scale(mse(z_e, stop_gradient(c)), beta)
    return VQResult(z_q=z_q, index=idx, codebook_loss=cb_loss, commitment_loss=commit)
