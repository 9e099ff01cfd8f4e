"""A small reverse-mode autodiff engine over float64 numpy arrays.

Operations on tensors that belong to a :class:`Tape` are recorded in
execution order; :func:`grad` walks that record backwards. Tensors without a
tape are plain constants, so the same model code runs for inference without
recording anything.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import NotScalarLoss, ShapeMismatch, UnrecordedId

EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)


class Tensor:
    __slots__ = ("data", "tape", "id", "parents", "backward")

    def __init__(self, data, tape=None, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.parents = parents
        self.backward = backward
        self.id = tape._register(self) if tape is not None else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, id={self.id})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Records operations in execution order (which is a topological order)."""

    def __init__(self):
        self.nodes = []

    def _register(self, t):
        self.nodes.append(t)
        return len(self.nodes) - 1

    def watch(self, array) -> Tensor:
        """A differentiable leaf."""
        return Tensor(np.array(array, dtype=np.float64), self)

    def __len__(self):
        return len(self.nodes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            return x.tape
    return None


def _op(data, parents, backward):
    tape = _tape_of(*parents)
    if tape is None:
        return Tensor(data)
    return Tensor(data, tape, parents, backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"shapes {a.shape} and {b.shape} are incompatible") from None


# elementwise -----------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def square(x):
    x = as_tensor(x)
    return _op(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)
    return _op(y, (x,), lambda g: (g * y,))


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _op(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _op(y, (x,), lambda g: (g * (1.0 - y * y),))


def swish(x):
    """x * sigmoid(x)."""
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _op(x.data * s, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),))


def gelu(x):
    """tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = as_tensor(x)
    v = x.data
    t = np.tanh(_GELU_C * (v + 0.044715 * v * v * v))
    y = 0.5 * v * (1.0 + t)

    def back(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du),)

    return _op(y, (x,), back)


def activation(x, kind: str):
    if kind == "gelu":
        return gelu(x)
    if kind == "swish":
        return swish(x)
    raise ValueError(f"unknown activation {kind!r}")


# structural ------------------------------------------------------------------

def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # fold leading axes so BLAS sees one large product
        k, n = b.shape
        a2 = a.data.reshape(-1, k)

        def back2(g):
            g2 = g.reshape(-1, n)
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return _op((a2 @ b.data).reshape(*a.shape[:-1], n), (a, b), back2)

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _op(a.data @ b.data, (a, b), back)


def transpose(x):
    x = as_tensor(x)
    return _op(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def permute(x, axes):
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def reshape(x, shape):
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"cannot reshape {x.shape} to {shape}") from None
    return _op(y, (x,), lambda g: (g.reshape(x.shape),))


def getitem(x, idx):
    x = as_tensor(x)
    key = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in key)

    def back(g):
        out = np.zeros_like(x.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _op(x.data[idx], (x,), back)


def concat(xs, axis=-1):
    xs = [as_tensor(x) for x in xs]
    try:
        y = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _op(y, tuple(xs), back)


def sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _op(y, (x,), back)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis, keepdims), 1.0 / n)


# layers ----------------------------------------------------------------------

def layer_norm(x, eps: float = EPS):
    """Zero mean, unit variance over the last axis; no affine parameters."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    r = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * r

    def back(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (r * (g - gm - y * gy),)

    return _op(y, (x,), back)


def group_norm(x, groups: int, eps: float = EPS):
    """Normalise each of ``groups`` contiguous blocks of the last axis separately."""
    x = as_tensor(x)
    d = x.shape[-1]
    if groups < 1 or d % groups:
        raise ShapeMismatch(f"{groups} groups do not divide dimension {d}")
    lead = x.shape[:-1]
    y = layer_norm(reshape(x, (*lead, groups, d // groups)), eps)
    return reshape(y, (*lead, d))


def normalize(x, kind: str = "layer", groups: int = 1, eps: float = EPS):
    if kind == "layer":
        return layer_norm(x, eps)
    if kind == "group":
        return group_norm(x, groups, eps)
    raise ValueError(f"unknown normalization {kind!r}")


def conv1d(x, kernels, bias=None):
    """Causal 1-D convolution.

    ``x`` is [..., len, c_in], ``kernels`` [c_out, c_in, kwidth]; kwidth-1 zeros
    are prepended so output row t only reads input rows <= t. Tap
    ``kwidth-1`` is the current position.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if kernels.ndim != 3 or x.ndim < 2 or kernels.shape[1] != x.shape[-1]:
        raise ShapeMismatch(f"conv1d: input {x.shape} vs kernels {kernels.shape}")
    c_out, c_in, kw = kernels.shape
    if kw % 2 == 0:
        raise ShapeMismatch("kernel width must be odd")
    length = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(kw - 1, 0), (0, 0)]
    xp = np.pad(x.data, pad)
    cols = np.lib.stride_tricks.sliding_window_view(xp, kw, axis=-2)  # [..., len, c_in, kw]
    cols = cols.reshape(*x.shape[:-2], length, c_in * kw)
    kmat = kernels.data.reshape(c_out, c_in * kw)
    y = cols @ kmat.T
    parents = (x, kernels)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeMismatch(f"conv1d bias shape {bias.shape} != ({c_out},)")
        y = y + bias.data
        parents = (x, kernels, bias)

    def back(g):
        g2 = g.reshape(-1, c_out)
        gk = (g2.T @ cols.reshape(-1, c_in * kw)).reshape(c_out, c_in, kw)
        gcols = (g @ kmat).reshape(*x.shape[:-2], length, c_in, kw)
        gxp = np.zeros_like(xp)
        for j in range(kw):
            gxp[..., j:j + length, :] += gcols[..., j]
        gx = gxp[..., kw - 1:, :]
        out = (gx, gk)
        if bias is not None:
            out = out + (g2.sum(axis=0),)
        return out

    return _op(y, parents, back)


def mse(pred, target):
    return mean(square(sub(pred, target)))


# gradients -------------------------------------------------------------------

def grad(tape: Tape, loss: Tensor, wrt) -> list:
    """Reverse-mode gradients of scalar ``loss`` with respect to each tensor in ``wrt``."""
    if loss.data.size != 1:
        raise NotScalarLoss(f"loss has shape {loss.shape}")
    wrt = list(wrt)
    for t in [loss, *wrt]:
        if t.tape is not tape or t.id is None:
            raise UnrecordedId(f"{t!r} is not recorded on this tape")
    grads = {loss.id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes[: loss.id + 1]):
        g = grads.get(node.id)
        if g is None or node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if parent.tape is not tape:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    return [grads.get(t.id, np.zeros_like(t.data)) for t in wrt]


def grad_check(f, x, h: float = 1e-5) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |numeric|).

    ``f(tensor) -> scalar tensor`` must build its graph from the given tensor.
    Central differences with step ``h`` supply the numeric side.
    """
    x = np.array(x, dtype=np.float64)
    tape = Tape()
    xv = tape.watch(x)
    (analytic,) = grad(tape, f(xv), [xv])
    flat = x.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(x.copy())).data)
        flat[i] = orig - h
        fm = float(f(Tensor(x.copy())).data)
        flat[i] = orig
        numeric = (fp - fm) / (2 * h)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst


def grad_check_many(f, arrays: dict, h: float = 1e-5) -> float:
    """grad_check over several named inputs at once: ``f(dict of tensors) -> scalar``."""
    arrays = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
    tape = Tape()
    vs = {k: tape.watch(v) for k, v in arrays.items()}
    loss = f(vs)
    analytic = dict(zip(vs, grad(tape, loss, vs.values())))
    worst = 0.0
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f({k: Tensor(v) for k, v in arrays.items()}).data)
            flat[i] = orig - h
            fm = float(f({k: Tensor(v) for k, v in arrays.items()}).data)
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            err = abs(analytic[name].reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


# serialization ---------------------------------------------------------------

def save_tensors(directory, tensors: dict, extra: dict | None = None) -> None:
    """Write ``manifest.json`` (names, shapes, offsets, ``extra``) and ``weights.bin``
    (little-endian float64, row-major, concatenated in manifest order)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index, offset, chunks = [], 0, []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.tobytes(order="C"))
    manifest = {"format": "float64-le-rowmajor", "tensors": index}
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (directory / "weights.bin").write_bytes(b"".join(chunks))


def load_tensors(directory) -> tuple:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    flat = np.frombuffer((directory / "weights.bin").read_bytes(), dtype="<f8")
    out = {}
    for entry in manifest["tensors"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        out[entry["name"]] = flat[entry["offset"]:entry["offset"] + n].reshape(entry["shape"]).astype(np.float64)
    return out, manifest
