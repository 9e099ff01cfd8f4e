"""CNN-RetNet forecaster.

Retention is available in its parallel, recurrent and chunkwise forms; all
three produce the same outputs and are interchangeable inside
:func:`retnet_forward`. Every function accepts numpy arrays or
:class:`~hazecast.autodiff.Tensor` objects and returns tensors, so the same
code serves inference and training.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DivergedLoss, EmptyTrainSet, OddHeadDim, ShapeMismatch, StateStepMismatch, ValidationError

FORMS = ("parallel", "recurrent", "chunkwise")


@dataclass(frozen=True)
class RetNetConfig:
    d: int = 64
    h: int = 4
    L: int = 2
    ffn_dim: int = 128
    chunk_b: int = 4
    input_len: int = 12
    horizon: int = 1
    n_vars: int = 4
    conv_channels: tuple = (32, 64)
    kernel_width: int = 3

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        dims = (self.d, self.h, self.ffn_dim, self.chunk_b, self.input_len, self.horizon, self.n_vars, self.kernel_width)
        if min(dims) < 1 or self.L < 0 or min(self.conv_channels) < 1 or len(self.conv_channels) != 2:
            raise ValidationError("all RetNet dimensions must be >= 1")
        if self.d % self.h:
            raise ValidationError(f"heads h={self.h} must divide d={self.d}")
        if self.d_h % 2:
            raise OddHeadDim(f"head dimension {self.d_h} must be even")
        if self.kernel_width % 2 == 0:
            raise ValidationError("kernel_width must be odd")

    @property
    def d_h(self) -> int:
        return self.d // self.h

    def to_dict(self) -> dict:
        out = asdict(self)
        out["conv_channels"] = list(self.conv_channels)
        return out


@dataclass(frozen=True)
class HyperParams:
    lr: float = 1e-3
    batch: int = 32
    epochs: int = 300
    patience: int | None = 40  # epochs without validation improvement before stopping
    grad_clip: float | None = 1.0  # global-norm clip; None disables

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RetentionState:
    S: Tensor
    step: int = 0


# fixed schedules -------------------------------------------------------------

def decay_vector(h: int) -> np.ndarray:
    """Per-head decay 1 - 2^-(5+i)."""
    if h < 1:
        raise ValidationError("h must be >= 1")
    return 1.0 - 2.0 ** (-5.0 - np.arange(h))


def rotation_angles(d_h: int) -> np.ndarray:
    if d_h % 2:
        raise OddHeadDim(f"head dimension {d_h} must be even")
    return 10000.0 ** (-2.0 * np.arange(d_h // 2) / d_h)


def _swap_matrix(d_h: int) -> np.ndarray:
    # x @ P maps each pair (a, b) to (-b, a)
    P = np.zeros((d_h, d_h))
    for j in range(d_h // 2):
        P[2 * j + 1, 2 * j] = -1.0
        P[2 * j, 2 * j + 1] = 1.0
    return P


def _cos_sin(theta, positions, direction):
    ang = direction * np.outer(positions, np.repeat(np.asarray(theta, dtype=np.float64), 2))
    return np.cos(ang), np.sin(ang)


def apply_rotation(x, theta, direction: int = 1, start: int = 1):
    """Rotate dimension pairs (2j, 2j+1) of row r by direction * (start + r) * theta_j."""
    x = ad.as_tensor(x)
    d_h = x.shape[-1]
    if d_h % 2:
        raise OddHeadDim(f"head dimension {d_h} must be even")
    if len(theta) != d_h // 2:
        raise ShapeMismatch(f"{len(theta)} angles for head dimension {d_h}")
    l = x.shape[-2]
    cos, sin = _cos_sin(theta, np.arange(start, start + l), direction)
    return x * cos + (x @ _swap_matrix(d_h)) * sin


def decay_mask(l: int, gamma) -> np.ndarray:
    """D[n, s] = gamma^(n-s) for n >= s else 0; a vector of gammas gives [h, l, l]."""
    gamma = np.asarray(gamma, dtype=np.float64)
    diff = np.arange(l)[:, None] - np.arange(l)[None, :]
    lower = diff >= 0
    expo = np.where(lower, diff, 0)
    g = gamma.reshape(-1, 1, 1) if gamma.ndim else gamma
    D = np.where(lower, np.power(g, expo), 0.0)
    return D


# the three retention forms ---------------------------------------------------

def _project(X, W_Q, W_K, W_V, theta, start=1):
    X = ad.as_tensor(X)
    q = apply_rotation(X @ W_Q, theta, 1, start)
    k = apply_rotation(X @ W_K, theta, 1, start)
    v = X @ W_V
    return q, k, v


def retention_parallel(X, gamma, theta, W_Q, W_K, W_V):
    """(Q K^T * D) V with rotated queries and keys.

    Queries and keys are both rotated forward by their absolute position, so
    their real inner product depends only on the offset n - s.
    """
    q, k, v = _project(X, W_Q, W_K, W_V, theta)
    D = decay_mask(q.shape[-2], float(gamma))
    return ((q @ ad.transpose(k)) * D) @ v


def retention_recurrent(x_n, state: RetentionState, gamma, theta, W_Q, W_K, W_V, n: int | None = None):
    """One step: S_n = gamma S_{n-1} + k_n^T v_n, o_n = q_n S_n.

    ``x_n`` is [..., 1, d_in]; returns (o_n [..., 1, d_h], new state).
    """
    pos = state.step + 1
    if n is not None and n != pos:
        raise StateStepMismatch(f"state is at step {state.step}, cannot process position {n}")
    q, k, v = _project(x_n, W_Q, W_K, W_V, theta, start=pos)
    S = state.S * float(gamma) + ad.transpose(k) @ v
    return q @ S, RetentionState(S, pos)


def initial_state(d_h: int, batch_shape=()) -> RetentionState:
    return RetentionState(Tensor(np.zeros((*batch_shape, d_h, d_h))), 0)


def retention_recurrent_sequence(X, gamma, theta, W_Q, W_K, W_V):
    X = ad.as_tensor(X)
    d_h = np.shape(W_V.data if isinstance(W_V, Tensor) else W_V)[-1]
    state = initial_state(d_h, X.shape[:-2])
    outs = []
    for n in range(X.shape[-2]):
        o, state = retention_recurrent(X[..., n:n + 1, :], state, gamma, theta, W_Q, W_K, W_V)
        outs.append(o)
    return ad.concat(outs, axis=-2)


def retention_chunkwise(X, gamma, theta, W_Q, W_K, W_V, b: int):
    """Parallel inside chunks of length ``b``; a decayed state R carries history across chunks."""
    if b < 1:
        raise ValidationError("chunk length must be >= 1")
    gamma = float(gamma)
    q, k, v = _project(X, W_Q, W_K, W_V, theta)
    l = q.shape[-2]
    d_h = v.shape[-1]
    R = None
    outs = []
    for start in range(0, l, b):
        c = min(b, l - start)
        qi, ki, vi = q[..., start:start + c, :], k[..., start:start + c, :], v[..., start:start + c, :]
        inner = ((qi @ ad.transpose(ki)) * decay_mask(c, gamma)) @ vi
        if R is not None:
            xi = gamma ** (np.arange(c) + 1.0)
            inner = inner + (qi @ R) * xi[:, None]
        zeta = gamma ** (c - np.arange(c) - 1.0)
        update = ad.transpose(ki) @ (vi * zeta[:, None])
        R = update if R is None else update + R * gamma ** c
        outs.append(inner)
    if not outs:
        return Tensor(np.zeros((*q.shape[:-1], d_h)))
    return ad.concat(outs, axis=-2)


def retention(X, gamma, theta, W_Q, W_K, W_V, form="parallel", chunk_b=4):
    if form == "parallel":
        return retention_parallel(X, gamma, theta, W_Q, W_K, W_V)
    if form == "recurrent":
        return retention_recurrent_sequence(X, gamma, theta, W_Q, W_K, W_V)
    if form == "chunkwise":
        return retention_chunkwise(X, gamma, theta, W_Q, W_K, W_V, chunk_b)
    raise ValueError(f"unknown retention form {form!r}")


# layers ----------------------------------------------------------------------

def _multihead_parallel(X, h, gammas, theta, W_Q, W_K, W_V):
    # all heads in one batched product: [..., h, l, d_h]
    lead = X.shape[:-2]
    l, d = X.shape[-2], W_Q.shape[-1]
    d_h = d // h
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)

    def heads(t):
        return ad.permute(ad.reshape(t, (*lead, l, h, d_h)), axes)

    q = apply_rotation(heads(X @ W_Q), theta)
    k = apply_rotation(heads(X @ W_K), theta)
    v = heads(X @ W_V)
    y = ((q @ ad.transpose(k)) * decay_mask(l, gammas)) @ v
    return ad.reshape(ad.permute(y, axes), (*lead, l, d))


def msr_layer(X, p: dict, prefix: str, cfg: RetNetConfig, form="parallel"):
    """Gated multi-scale retention: GroupNorm_h(concat heads), gated by swish(X W_G), projected by W_O."""
    X = ad.as_tensor(X)
    if X.shape[-1] != cfg.d:
        raise ShapeMismatch(f"MSR input width {X.shape[-1]} != d={cfg.d}")
    W_Q, W_K, W_V = p[prefix + "wq"], p[prefix + "wk"], p[prefix + "wv"]
    gammas = decay_vector(cfg.h)
    theta = rotation_angles(cfg.d_h)
    if form == "parallel":
        Y = _multihead_parallel(X, cfg.h, gammas, theta, W_Q, W_K, W_V)
    else:
        dh = cfg.d_h
        outs = [
            retention(
                X, gammas[i], theta,
                ad.getitem(W_Q, (slice(None), slice(i * dh, (i + 1) * dh))),
                ad.getitem(W_K, (slice(None), slice(i * dh, (i + 1) * dh))),
                ad.getitem(W_V, (slice(None), slice(i * dh, (i + 1) * dh))),
                form=form, chunk_b=cfg.chunk_b,
            )
            for i in range(cfg.h)
        ]
        Y = ad.concat(outs, axis=-1)
    Y = ad.group_norm(Y, cfg.h)
    return (ad.swish(X @ p[prefix + "wg"]) * Y) @ p[prefix + "wo"]


def ffn(X, W_1, W_2):
    X, W_1, W_2 = ad.as_tensor(X), ad.as_tensor(W_1), ad.as_tensor(W_2)
    if X.shape[-1] != W_1.shape[0] or W_1.shape[1] != W_2.shape[0]:
        raise ShapeMismatch(f"FFN shape chain broken: {X.shape} {W_1.shape} {W_2.shape}")
    return ad.gelu(X @ W_1) @ W_2


def retnet_forward(X0, cfg: RetNetConfig, p: dict, form="parallel"):
    X = ad.as_tensor(X0)
    for layer in range(cfg.L):
        pre = f"layers.{layer}."
        Y = msr_layer(ad.layer_norm(X), p, pre, cfg, form) + X
        X = ffn(ad.layer_norm(Y), p[pre + "w1"], p[pre + "w2"]) + Y
    return X


def cnn_frontend(window, p: dict):
    x = ad.gelu(ad.conv1d(window, p["conv.0.kernel"], p["conv.0.bias"]))
    x = ad.gelu(ad.conv1d(x, p["conv.1.kernel"], p["conv.1.bias"]))
    return ad.conv1d(x, p["conv.2.kernel"], p["conv.2.bias"])


def forecast_head(XL, p: dict):
    XL = ad.as_tensor(XL)
    last = ad.getitem(XL, (Ellipsis, -1, slice(None)))
    W, b = ad.as_tensor(p["head.weight"]), ad.as_tensor(p["head.bias"])
    if last.shape[-1] != W.shape[0]:
        raise ShapeMismatch(f"head expects width {W.shape[0]}, got {last.shape[-1]}")
    if last.ndim == 1:
        return ad.reshape(ad.reshape(last, (1, -1)) @ W, (-1,)) + b
    return last @ W + b


def model_forward(p: dict, cfg: RetNetConfig, windows, form="parallel"):
    """Windows [..., input_len, n_vars] -> forecasts [..., horizon]."""
    windows = ad.as_tensor(windows)
    if windows.shape[-2:] != (cfg.input_len, cfg.n_vars) and windows.shape[-1] != cfg.n_vars:
        raise ShapeMismatch(f"window shape {windows.shape} does not match config")
    return forecast_head(retnet_forward(cnn_frontend(windows, p), cfg, p, form), p)


# parameters ------------------------------------------------------------------

class RetNetParams:
    """Named weight arrays of one model plus the fixed decay and angle buffers."""

    BUFFERS = ("decay", "theta")

    def __init__(self, cfg: RetNetConfig, arrays: dict):
        self.cfg = cfg
        self.arrays = dict(arrays)

    def __getitem__(self, name):
        return self.arrays[name]

    def trainable(self) -> list:
        return [k for k in self.arrays if k not in self.BUFFERS]

    def n_scalars(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self) -> "RetNetParams":
        return RetNetParams(self.cfg, {k: v.copy() for k, v in self.arrays.items()})

    def save(self, directory, extra: dict | None = None) -> None:
        meta = {"config": self.cfg.to_dict()}
        if extra:
            meta.update(extra)
        ad.save_tensors(directory, self.arrays, meta)

    @classmethod
    def load(cls, directory) -> tuple:
        arrays, manifest = ad.load_tensors(directory)
        return cls(RetNetConfig(**manifest["config"]), arrays), manifest


def param_shapes(cfg: RetNetConfig) -> dict:
    c1, c2 = cfg.conv_channels
    k = cfg.kernel_width
    shapes = {
        "conv.0.kernel": (c1, cfg.n_vars, k), "conv.0.bias": (c1,),
        "conv.1.kernel": (c2, c1, k), "conv.1.bias": (c2,),
        "conv.2.kernel": (cfg.d, c2, k), "conv.2.bias": (cfg.d,),
    }
    for layer in range(cfg.L):
        pre = f"layers.{layer}."
        for name in ("wq", "wk", "wv", "wg", "wo"):
            shapes[pre + name] = (cfg.d, cfg.d)
        shapes[pre + "w1"] = (cfg.d, cfg.ffn_dim)
        shapes[pre + "w2"] = (cfg.ffn_dim, cfg.d)
    shapes["head.weight"] = (cfg.d, cfg.horizon)
    shapes["head.bias"] = (cfg.horizon,)
    shapes["decay"] = (cfg.h,)
    shapes["theta"] = (cfg.d_h // 2,)
    return shapes


def init_params(cfg: RetNetConfig, seed=0) -> RetNetParams:
    rng = np.random.default_rng(seed)
    arrays = {}
    depth_scale = 1.0 / math.sqrt(2.0 * max(cfg.L, 1))
    for name, shape in param_shapes(cfg).items():
        if name == "decay":
            arrays[name] = decay_vector(cfg.h)
        elif name == "theta":
            arrays[name] = rotation_angles(cfg.d_h)
        elif name.endswith("bias"):
            arrays[name] = np.zeros(shape)
        else:
            fan_in = shape[1] * shape[2] if len(shape) == 3 else shape[0]
            std = 1.0 / math.sqrt(fan_in)
            if name.endswith(("wo", "w2")):
                std *= depth_scale
            if name == "head.weight":
                std *= 0.1
            arrays[name] = rng.normal(0.0, std, size=shape)
    return RetNetParams(cfg, arrays)


# training --------------------------------------------------------------------

def _as_arrays(samples):
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(samples[0], np.ndarray):
        return samples
    if not samples:
        return None
    X = np.stack([s.inputs for s in samples])
    Y = np.stack([s.target_future for s in samples])
    return X, Y


def predict(params: RetNetParams, X, form="parallel", batch: int = 512) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    outs = [model_forward(params.arrays, params.cfg, X[i:i + batch], form).data for i in range(0, len(X), batch)]
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, params.cfg.horizon))


def evaluate_mse(params: RetNetParams, X, Y) -> float:
    return float(np.mean((predict(params, X) - Y) ** 2))


def train_model(train, val, cfg: RetNetConfig, hyper: HyperParams = HyperParams(), seed: int = 0,
                init: RetNetParams | None = None) -> tuple:
    """Mini-batch Adam on mean squared error.

    Returns ``(params, history)``: the parameters at the best validation loss
    (final parameters when ``val`` is empty) and per-epoch losses. The learning
    rate halves after each third of the epoch budget.
    """
    tr = _as_arrays(train)
    if tr is None or len(tr[0]) == 0:
        raise EmptyTrainSet("no training samples")
    va = _as_arrays(val)
    Xtr, Ytr = tr
    rng = np.random.default_rng(seed)
    params = init.copy() if init is not None else init_params(cfg, rng.integers(2**63))
    names = params.trainable()
    m = {k: np.zeros_like(params[k]) for k in names}
    v = {k: np.zeros_like(params[k]) for k in names}
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    n = len(Xtr)
    third = max(1, hyper.epochs // 3)
    history = {"train_loss": [], "val_loss": [], "best_epoch": None}
    best, best_loss, stale = params.copy(), math.inf, 0

    for epoch in range(hyper.epochs):
        lr = hyper.lr * 0.5 ** min(2, epoch // third)
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, hyper.batch):
            idx = order[i:i + hyper.batch]
            tape = ad.Tape()
            tv = {k: (tape.watch(a) if k in m else a) for k, a in params.arrays.items()}
            loss = ad.mse(model_forward(tv, cfg, Xtr[idx]), Ytr[idx])
            lv = float(loss.data)
            if not math.isfinite(lv):
                raise DivergedLoss(f"loss became {lv} at epoch {epoch}")
            grads = ad.grad(tape, loss, [tv[k] for k in names])
            if hyper.grad_clip is not None:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
                if norm > hyper.grad_clip:
                    grads = [g * (hyper.grad_clip / norm) for g in grads]
            step += 1
            c1, c2 = 1 - b1 ** step, 1 - b2 ** step
            for k, g in zip(names, grads):
                m[k] = b1 * m[k] + (1 - b1) * g
                v[k] = b2 * v[k] + (1 - b2) * g * g
                params.arrays[k] = params.arrays[k] - lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)
            total += lv * len(idx)
        history["train_loss"].append(total / n)
        if va is not None and len(va[0]):
            vl = evaluate_mse(params, *va)
            if not math.isfinite(vl):
                raise DivergedLoss(f"validation loss became {vl} at epoch {epoch}")
            history["val_loss"].append(vl)
            if vl < best_loss:
                best, best_loss, stale = params.copy(), vl, 0
                history["best_epoch"] = epoch
            else:
                stale += 1
                if hyper.patience is not None and stale >= hyper.patience:
                    break
    if va is None or not len(va[0]):
        best = params
        history["best_epoch"] = len(history["train_loss"]) - 1
    history["final_train_mse"] = evaluate_mse(best, Xtr, Ytr)
    return best, history
