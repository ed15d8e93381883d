"""4x4 grid world with a controllable square and a noisy bottom row.

The top 3x4 region holds a unit-intensity square moved by one of five
actions (up, down, left, right, stay). Moves into a wall leave it in place;
with ``boundary="wrap"`` the left and right edges are joined instead, so a
column shift of the whole image is a symmetry of the dynamics.
The bottom row is resampled every step as ``Bernoulli(0.5) * intensity``.
A conv IDM with a 5-code VQ bottleneck and a conv FDM are trained on pixel
reconstruction, and evaluated by how well each region of ``o'`` is
reconstructed.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import NonFiniteError
from .numerics import AdamState, adam_step, substream

__all__ = [
    "ACTIONS",
    "NOISE_LEVELS",
    "BOUNDARIES",
    "GridObs",
    "GridEnvSpec",
    "GridBatch",
    "GridTrainConfig",
    "GridModel",
    "GridTrainResult",
    "grid_step",
    "snake_action",
    "render",
    "sample_grid_batch",
    "shift_augment",
    "init_grid_model",
    "train_grid",
    "eval_grid",
]

ACTIONS = ("up", "down", "left", "right", "stay")
_MOVES = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1), 4: (0, 0)}
NOISE_LEVELS = {"none": 0.0, "low": 1.0, "high": 2.0}
BOUNDARIES = ("clip", "wrap")
ROWS, COLS = 3, 4
N_CELLS = ROWS * COLS

# boustrophedon: right along row 0, left along row 1, right along row 2,
# and from the last cell back up toward the start
_SNAKE = np.array(
    [
        [3, 3, 3, 1],
        [1, 2, 2, 2],
        [3, 3, 3, 0],
    ]
)


@dataclass(frozen=True)
class GridObs:
    row: int
    col: int
    noise_bits: tuple[int, int, int, int]
    intensity: float = 1.0

    @property
    def pixels(self) -> np.ndarray:
        return render(np.array([self.row]), np.array([self.col]), np.array([self.noise_bits]), self.intensity)[0]


@dataclass(frozen=True)
class GridEnvSpec:
    noise: str = "low"
    policy: str = "uniform"
    p_snake: float = 0.95
    seed: int = 0
    boundary: str = "clip"

    def __post_init__(self):
        if self.noise not in NOISE_LEVELS:
            raise ValueError(f"noise must be one of {sorted(NOISE_LEVELS)}, got {self.noise!r}")
        if self.policy not in ("uniform", "correlated"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if not 0.0 <= self.p_snake <= 1.0:
            raise ValueError("p_snake must lie in [0, 1]")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")

    @property
    def intensity(self) -> float:
        return NOISE_LEVELS[self.noise]


def render(row: np.ndarray, col: np.ndarray, bits: np.ndarray, intensity: float) -> np.ndarray:
    """Batch of ``(n, 4, 4)`` images."""
    n = row.shape[0]
    img = np.zeros((n, 4, 4))
    img[np.arange(n), row, col] = 1.0
    img[:, 3, :] = bits * intensity
    return img


_DR = np.array([_MOVES[k][0] for k in range(5)])
_DC = np.array([_MOVES[k][1] for k in range(5)])


def _move(row: np.ndarray, col: np.ndarray, action: np.ndarray, boundary: str = "clip"):
    col = col + _DC[action]
    col = col % COLS if boundary == "wrap" else np.clip(col, 0, COLS - 1)
    return np.clip(row + _DR[action], 0, ROWS - 1), col


def grid_step(obs: GridObs, action: int | str, rng: np.random.Generator, boundary: str = "clip") -> GridObs:
    """Move the square and resample the noise row."""
    if boundary not in BOUNDARIES:
        raise ValueError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
    a = ACTIONS.index(action) if isinstance(action, str) else int(action)
    r, c = _move(np.array([obs.row]), np.array([obs.col]), np.array([a]), boundary)
    bits = tuple(int(b) for b in rng.integers(0, 2, size=4)) if obs.intensity else (0, 0, 0, 0)
    return GridObs(int(r[0]), int(c[0]), bits, obs.intensity)


def snake_action(row, col):
    return _SNAKE[row, col]


@dataclass
class GridBatch:
    o: np.ndarray  # (n, 4, 4)
    o_next: np.ndarray
    action: np.ndarray
    row: np.ndarray
    col: np.ndarray
    random_branch: np.ndarray

    @property
    def n(self) -> int:
        return self.o.shape[0]

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """Row-major 16-pixel layout."""
        return self.o.reshape(self.n, 16), self.o_next.reshape(self.n, 16)


def sample_grid_batch(env: GridEnvSpec, n: int, rng: np.random.Generator, policy: str | None = None) -> GridBatch:
    """Independent one-step transitions from a uniformly random square position."""
    if n < 1:
        raise ValueError("n must be >= 1")
    policy = env.policy if policy is None else policy
    cell = rng.integers(0, N_CELLS, size=n)
    row, col = cell // COLS, cell % COLS
    uniform = rng.integers(0, 5, size=n)
    if policy == "uniform":
        action = uniform
        random_branch = np.ones(n, dtype=bool)
    elif policy == "correlated":
        random_branch = rng.random(n) >= env.p_snake
        action = np.where(random_branch, uniform, snake_action(row, col))
    else:
        raise ValueError(f"unknown policy {policy!r}")
    bits = rng.integers(0, 2, size=(n, 4))
    bits_next = rng.integers(0, 2, size=(n, 4))
    r2, c2 = _move(row, col, action, env.boundary)
    o = render(row, col, bits, env.intensity)
    o_next = render(r2, c2, bits_next, env.intensity)
    return GridBatch(o, o_next, action, row, col, random_branch)


def shift_augment(o: np.ndarray, o_next: np.ndarray, direction: np.ndarray):
    """Roll each image pair by ``direction`` (-1 left, +1 right) columns with wraparound.

    ``o`` and ``o_next`` of one sample share the same direction.
    """
    direction = np.asarray(direction)
    out_o, out_n = o.copy(), o_next.copy()
    for d in (-1, 1):
        sel = direction == d
        if np.any(sel):
            out_o[sel] = np.roll(o[sel], d, axis=-1)
            out_n[sel] = np.roll(o_next[sel], d, axis=-1)
    return out_o, out_n


# ------------------------------------------------------------------ model

@dataclass
class GridTrainConfig:
    steps: int = 16000
    batch: int = 64
    lr: float = 1e-3
    codebook_size: int = 5
    d_code: int = 8
    idm_channels: tuple[int, int] = (16, 32)
    fdm_channels: tuple[int, int, int] = (16, 32, 32)
    beta: float = 0.25
    augment: bool = False
    label_fraction: float = 0.0
    action_weight: float = 10.0
    dead_code_steps: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be >= 1")
        if not 0.0 <= self.label_fraction <= 1.0:
            raise ValueError("label_fraction must lie in [0, 1]")
        if self.label_fraction > 0 and self.codebook_size != len(ACTIONS):
            raise ValueError("action prediction needs one code per action")
        self.idm_channels = tuple(self.idm_channels)
        self.fdm_channels = tuple(self.fdm_channels)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GridModel:
    """Weights by name; code ``k`` is preassigned to ``ACTIONS[k]``."""

    weights: dict[str, np.ndarray]
    config: GridTrainConfig

    @property
    def codebook(self) -> np.ndarray:
        return self.weights["codebook"]

    @property
    def action_codes(self) -> np.ndarray:
        return np.arange(len(ACTIONS))


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def init_grid_model(cfg: GridTrainConfig, rng: np.random.Generator) -> GridModel:
    c1, c2 = cfg.idm_channels
    f0, f1, f2 = cfg.fdm_channels
    d = cfg.d_code
    w = {
        "idm_w1": _he(rng, (c1, 2, 3, 3), 2 * 9),
        "idm_b1": np.zeros(c1),
        "idm_w2": _he(rng, (c2, c1, 3, 3), c1 * 9),
        "idm_b2": np.zeros(c2),
        "idm_w3": rng.standard_normal((c2 * 16, d)) / np.sqrt(c2 * 16),
        "idm_b3": np.zeros(d),
        "codebook": rng.standard_normal((cfg.codebook_size, d)),
        "fdm_w0": _he(rng, (f0, 1, 3, 3), 9),
        "fdm_b0": np.zeros(f0),
        "fdm_w1": _he(rng, (f1, f0 + d + 1, 3, 3), (f0 + d + 1) * 9),
        "fdm_b1": np.zeros(f1),
        "fdm_w2": _he(rng, (f2, f1, 3, 3), f1 * 9),
        "fdm_b2": np.zeros(f2),
        "fdm_w3": rng.standard_normal((f2 * 16, 16)) / np.sqrt(f2 * 16),
        "fdm_b3": np.zeros(16),
    }
    return GridModel(weights=w, config=cfg)


def idm_encode(P: dict[str, ad.Tensor], o: np.ndarray, o_next: np.ndarray) -> ad.Tensor:
    n = o.shape[0]
    x = ad.const(np.stack([o, o_next], axis=1))
    h = ad.relu(ad.conv2d(x, P["idm_w1"], P["idm_b1"], 1, "periodic"))
    h = ad.relu(ad.conv2d(h, P["idm_w2"], P["idm_b2"], 1, "periodic"))
    h = ad.reshape(h, (n, -1))
    return ad.add(ad.matmul(h, P["idm_w3"]), P["idm_b3"])


def fdm_decode(P: dict[str, ad.Tensor], o: np.ndarray, z_q: ad.Tensor) -> ad.Tensor:
    n = o.shape[0]
    x = ad.const(o[:, None])
    e = ad.relu(ad.conv2d(x, P["fdm_w0"], P["fdm_b0"], 1, "periodic"))
    d = z_q.shape[1]
    zb = ad.broadcast_to(ad.reshape(z_q, (n, d, 1, 1)), (n, d, 4, 4))
    h = ad.concat([e, zb, x], axis=1)
    h = ad.relu(ad.conv2d(h, P["fdm_w1"], P["fdm_b1"], 1, "periodic"))
    h = ad.relu(ad.conv2d(h, P["fdm_w2"], P["fdm_b2"], 1, "periodic"))
    h = ad.reshape(h, (n, -1))
    return ad.reshape(ad.add(ad.matmul(h, P["fdm_w3"]), P["fdm_b3"]), (n, 4, 4))


def grid_loss(
    P: dict[str, ad.Tensor],
    o: np.ndarray,
    o_next: np.ndarray,
    fdm_o: np.ndarray,
    target: np.ndarray,
    cfg: GridTrainConfig,
    labels: np.ndarray | None = None,
    actions: np.ndarray | None = None,
):
    """Total loss tensor and its parts; the IDM and FDM may see differently augmented views."""
    z_e = idm_encode(P, o, o_next)
    vq = ad.vq_bottleneck(z_e, P["codebook"], cfg.beta)
    pred = fdm_decode(P, fdm_o, vq.z_q)
    recon = ad.mse(pred, ad.const(target))
    total = ad.add(ad.add(recon, vq.codebook_loss), vq.commitment_loss)
    act = None
    if labels is not None and np.any(labels):
        idx = np.flatnonzero(labels)
        code = ad.stop_gradient(ad.gather_rows(P["codebook"], actions[idx]))
        act = ad.mse(ad.gather_rows(z_e, idx), code)
        total = ad.add(total, ad.scale(act, cfg.action_weight))
    return total, {"recon": recon, "vq": vq, "action": act, "pred": pred, "z_e": z_e}


@dataclass
class GridTrainResult:
    model: GridModel
    loss_trace: np.ndarray
    recon_trace: np.ndarray
    reinit_count: int = 0
    wall_time: float = 0.0
    code_usage: np.ndarray = field(default_factory=lambda: np.zeros(0))


def train_grid(env: GridEnvSpec, cfg: GridTrainConfig) -> GridTrainResult:
    t0 = time.perf_counter()
    rng_init = substream(cfg.seed, "grid-init")
    rng_data = substream(cfg.seed, "grid-data", env.seed)
    rng_aug = substream(cfg.seed, "grid-aug")
    rng_lab = substream(cfg.seed, "grid-labels")
    rng_code = substream(cfg.seed, "grid-dead-codes")
    model = init_grid_model(cfg, rng_init)
    weights = model.weights
    # every block is a view into one vector, so Adam runs a few ops per step instead of a few per block
    names = list(weights)
    bounds = np.cumsum([0] + [weights[k].size for k in names])
    flat = np.concatenate([weights[k].ravel() for k in names])
    for k, lo, hi in zip(names, bounds[:-1], bounds[1:]):
        weights[k] = flat[lo:hi].reshape(weights[k].shape)
    code_slice = slice(*bounds[names.index("codebook"):][:2])
    state = AdamState(lr=cfg.lr)
    losses = np.empty(cfg.steps)
    recons = np.empty(cfg.steps)
    last_used = np.zeros(cfg.codebook_size, dtype=np.int64)
    usage = np.zeros(cfg.codebook_size, dtype=np.int64)
    reinit = 0
    for step in range(cfg.steps):
        b = sample_grid_batch(env, cfg.batch, rng_data)
        o, o_next = b.o, b.o_next
        fdm_o, target = o, o_next
        if cfg.augment:
            s1 = rng_aug.choice((-1, 1), size=b.n)
            s2 = rng_aug.choice((-1, 1), size=b.n)
            o, o_next = shift_augment(b.o, b.o_next, s1)
            fdm_o, target = shift_augment(b.o, b.o_next, s2)
        labels = rng_lab.random(b.n) < cfg.label_fraction if cfg.label_fraction > 0 else None
        params = {k: ad.param(v, k) for k, v in weights.items()}
        try:
            with np.errstate(over="ignore", invalid="ignore"), ad.Tape() as tape:
                total, parts = grid_loss(params, o, o_next, fdm_o, target, cfg, labels, b.action)
            if not np.isfinite(total.data):
                raise NonFiniteError("loss is not finite")
            grads = ad.backward(tape, total, list(params.values()))
            flat_grad = np.concatenate([g.ravel() for g in grads])
            if not np.isfinite(flat_grad).all():
                bad = next(k for k, g in zip(names, grads) if not np.all(np.isfinite(g)))
                raise NonFiniteError(f"non-finite gradient in block {bad!r}", block=bad)
            adam_step({"weights": flat}, {"weights": flat_grad}, state)
        except NonFiniteError as exc:
            raise NonFiniteError(f"grid training diverged at step {step}: {exc}", block=exc.block, step=step) from exc
        losses[step] = float(total.data)
        recons[step] = float(parts["recon"].data)

        idx = parts["vq"].index
        counts = np.bincount(idx, minlength=cfg.codebook_size)
        usage += counts
        last_used[counts > 0] = step
        if cfg.dead_code_steps:
            dead = np.flatnonzero(step - last_used >= cfg.dead_code_steps)
            if dead.size:
                # restart unused codes at encoder outputs from this batch
                recent = parts["z_e"].data
                picks = rng_code.integers(0, recent.shape[0], size=dead.size)
                weights["codebook"][dead] = recent[picks]
                for moments in (state.m, state.v):
                    moments["weights"][code_slice].reshape(weights["codebook"].shape)[dead] = 0.0
                last_used[dead] = step
                reinit += dead.size
    return GridTrainResult(
        model=model,
        loss_trace=losses,
        recon_trace=recons,
        reinit_count=reinit,
        wall_time=time.perf_counter() - t0,
        code_usage=usage,
    )


def predict(model: GridModel, o: np.ndarray, o_next: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruction and code index without recording a tape."""
    P = {k: ad.const(v) for k, v in model.weights.items()}
    z_e = idm_encode(P, o, o_next)
    idx = ad.nearest_code(z_e.data, model.codebook)
    z_q = ad.const(model.codebook[idx])
    return fdm_decode(P, o, z_q).data, idx


@dataclass(frozen=True)
class GridEval:
    controllable_loss: float
    stochastic_loss: float | None
    code_usage: tuple[float, ...]
    n_eval: int


def region_losses(pred: np.ndarray, target: np.ndarray) -> tuple[float, float | None]:
    """Normalized squared error on the top 3x4 region and on the bottom row.

    Each is divided by the total variance of that region of ``target``;
    a region with no variance gives ``None``.
    """
    out = []
    for sl in (slice(0, 3), slice(3, 4)):
        t = target[:, sl, :]
        p = pred[:, sl, :]
        var = np.sum((t - t.mean(axis=0)) ** 2)
        out.append(None if var <= 1e-12 else float(np.sum((p - t) ** 2) / var))
    return out[0], out[1]


def eval_grid(model: GridModel, env: GridEnvSpec, n_eval: int = 4096, rng: np.random.Generator | None = None) -> GridEval:
    """Region losses on fresh uniform-policy transitions.

    Evaluation always uses the uniform policy so that the FDM cannot lean on
    a deterministic state-to-action pattern: the controllable loss then
    measures what the latent knows about the action.
    """
    rng = substream(env.seed, "grid-eval") if rng is None else rng
    b = sample_grid_batch(env, n_eval, rng, policy="uniform")
    pred, idx = predict(model, b.o, b.o_next)
    ctrl, stoch = region_losses(pred, b.o_next)
    usage = np.bincount(idx, minlength=model.codebook.shape[0]) / b.n
    return GridEval(ctrl, stoch, tuple(float(u) for u in usage), b.n)
