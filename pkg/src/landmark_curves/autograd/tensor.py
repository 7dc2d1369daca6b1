"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every op on a tensor that requires grad appends a node to an implicit tape:
each node gets a monotonically increasing sequence number, so sorting the
nodes reachable from a loss by that number gives a valid topological order.
The tape is rebuilt on every forward pass.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

from ..config import ConfigError

_seq = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    def __init__(self, op: str, detail: str = "non-finite output"):
        super().__init__(f"{op}: {detail}")
        self.op = op


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A dense float64 array with an optional node on the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_seq", "__weakref__")
    __array_ufunc__ = None  # make ndarray (op) Tensor defer to the Tensor's reflected operator

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = next(_seq)

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators ----------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(op: str, out: np.ndarray) -> np.ndarray:
    # a finite sum implies finite entries; only a non-finite sum needs the full scan
    with np.errstate(over="ignore", invalid="ignore"):
        total = out.sum()
    if not np.isfinite(total) and not np.all(np.isfinite(out)):
        raise NumericError(op)
    return out


def _make(op: str, data: np.ndarray, parents: Iterable[Tensor], backward_fn) -> Tensor:
    out = Tensor(_check(op, data))
    parents = tuple(parents)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out.name = op
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise ------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _make("div", out, (a, b),
                 lambda g: (unbroadcast(g / b.data, a.shape),
                            unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data ** p
    return _make("pow", out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make("log", out, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make("relu", np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_np(a.data)
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def logit(a) -> Tensor:
    """Inverse sigmoid, log(p / (1 - p))."""
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data) - np.log1p(-a.data)
    return _make("logit", out, (a,), lambda g: (g / (a.data * (1.0 - a.data)),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# -- linear algebra and shape -----------------------------------------------
def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes (operands are >= 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make("matmul", a.data @ b.data, (a, b), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", out, ts, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    return concat([reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                   for t in ts], axis=axis)


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, index) -> Tensor:
    """Basic or advanced indexing (slicing, gathers); gradients scatter-add back."""
    a = as_tensor(a)
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        if _is_basic(index):
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make("getitem", np.array(out, dtype=np.float64), (a,), bw)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make("broadcast_to", np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (unbroadcast(g, a.shape),))


# -- reductions ---------------------------------------------------------------
def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        g = np.expand_dims(g, tuple(ax % len(shape) for ax in axes))
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _make("sum", np.asarray(out), (a,), lambda g: (_expand(g, a.shape, axis, keepdims),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size / max(np.asarray(out).size, 1)
    return _make("mean", np.asarray(out), (a,), lambda g: (_expand(g, a.shape, axis, keepdims) / count,))


# -- neural primitives --------------------------------------------------------
def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make("softmax", out, (a,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def layer_norm(a, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    parents = [a]
    out = xhat
    g_t = b_t = None
    if gamma is not None:
        g_t = as_tensor(gamma)
        parents.append(g_t)
        out = out * g_t.data
    if beta is not None:
        b_t = as_tensor(beta)
        parents.append(b_t)
        out = out + b_t.data

    def bw(g):
        gx = g * g_t.data if g_t is not None else g
        n = a.shape[-1]
        dx = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
        grads = [dx]
        if g_t is not None:
            grads.append(unbroadcast(g * xhat, g_t.shape))
        if b_t is not None:
            grads.append(unbroadcast(g, b_t.shape))
        return grads

    return _make("layer_norm", out, parents, bw)


def conv2d(x, weight, bias=None, stride: int = 1) -> Tensor:
    """'Same'-padded 2-D convolution of one image ``x[Cin,H,W]`` with ``weight[Cout,Cin,k,k]``.

    Odd kernel sizes only; stride 1 or 2 (output H/stride x W/stride for even H, W).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    cout, cin, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError("conv2d: square odd kernels only")
    _, h, w = x.shape
    pad = k // 2
    ho, wo = -(-h // stride), -(-w // stride)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = np.empty((cin, k * k, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[:, i * k + j] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols2 = cols.reshape(cin * k * k, ho * wo)
    wmat = weight.data.reshape(cout, cin * k * k)
    out = (wmat @ cols2).reshape(cout, ho, wo)
    parents = [x, weight]
    b_t = None
    if bias is not None:
        b_t = as_tensor(bias)
        parents.append(b_t)
        out = out + b_t.data[:, None, None]

    def bw(g):
        g2 = g.reshape(cout, ho * wo)
        gw = (g2 @ cols2.T).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(cin, k * k, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i * k + j]
            gx = gxp[:, pad:pad + h, pad:pad + w] if pad else gxp
        grads = [gx, gw]
        if b_t is not None:
            grads.append(g.sum(axis=(1, 2)))
        return grads

    return _make("conv2d", out, parents, bw)


def max_pool2d(x, size: int = 2) -> Tensor:
    """Non-overlapping max pooling over the trailing two axes (H, W divisible by ``size``)."""
    x = as_tensor(x)
    *lead, h, w = x.shape
    if h % size or w % size:
        raise ShapeError(f"max_pool2d: {h}x{w} not divisible by {size}")
    blocks = x.data.reshape(*lead, h // size, size, w // size, size)
    out = blocks.max(axis=(-3, -1))
    # first maximal element per window receives the gradient
    flat = np.moveaxis(blocks, -3, -2).reshape(*lead, h // size, w // size, size * size)
    arg = flat.argmax(axis=-1)

    def bw(g):
        onehot = np.zeros_like(flat)
        np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
        back = np.moveaxis(onehot.reshape(*lead, h // size, w // size, size, size), -2, -3)
        return (back.reshape(x.shape),)

    return _make("max_pool2d", out, (x,), bw)


def upsample_nearest(x, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of the trailing two axes by an integer factor."""
    x = as_tensor(x)
    out = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)
    *lead, h, w = x.shape

    def bw(g):
        return (g.reshape(*lead, h, factor, w, factor).sum(axis=(-3, -1)),)

    return _make("upsample_nearest", out, (x,), bw)


def bilinear_sample_batched(fmap, coords) -> Tensor:
    """Sample ``fmap[G,C,H,W]`` at normalized ``coords[G,P,2]`` (x, y); returns ``[G,P,C]``.

    Texel (r, c) has its center at ((c+0.5)/W, (r+0.5)/H); coordinates beyond the
    outermost texel centers are clamped onto them.
    """
    fmap, coords = as_tensor(fmap), as_tensor(coords)
    if fmap.ndim != 4 or coords.ndim != 3 or coords.shape[-1] != 2 or coords.shape[0] != fmap.shape[0]:
        raise ShapeError(f"bilinear_sample: feature map {fmap.shape} and coords {coords.shape}")
    g_, c_, h, w = fmap.shape
    px = coords.data[..., 0] * w - 0.5
    py = coords.data[..., 1] * h - 0.5
    in_x = (px >= 0) & (px <= w - 1)
    in_y = (py >= 0) & (py <= h - 1)
    px = np.clip(px, 0, w - 1)
    py = np.clip(py, 0, h - 1)
    x0 = np.minimum(np.floor(px).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(py).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = px - x0
    fy = py - y0
    flat = np.transpose(fmap.data, (0, 2, 3, 1)).reshape(g_ * h * w, c_)
    base = (np.arange(g_) * (h * w))[:, None]
    cols = np.stack([base + y0 * w + x0, base + y0 * w + x1,
                     base + y1 * w + x0, base + y1 * w + x1], axis=-1).reshape(-1)
    n_rows = g_ * coords.shape[1]
    indptr = np.arange(0, 4 * n_rows + 1, 4)

    def interp(weights):
        # one row per sample point, four texel weights per row
        return sparse.csr_matrix((np.stack(weights, -1).reshape(-1), cols, indptr),
                                 shape=(n_rows, g_ * h * w))

    s_mat = interp([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy])
    out = (s_mat @ flat).reshape(g_, -1, c_)

    def bw(g):
        g2 = g.reshape(n_rows, c_)
        gmap = None
        if fmap.requires_grad:
            gflat = (s_mat.T @ g2).reshape(g_, h, w, c_)
            gmap = np.transpose(gflat, (0, 3, 1, 2))
        gc = None
        if coords.requires_grad:
            dx = interp([-(1 - fy), 1 - fy, -fy, fy]) @ flat
            dy = interp([-(1 - fx), -fx, 1 - fx, fx]) @ flat
            gx = (g2 * dx).sum(-1).reshape(px.shape) * w * in_x if w > 1 else np.zeros_like(px)
            gy = (g2 * dy).sum(-1).reshape(py.shape) * h * in_y if h > 1 else np.zeros_like(py)
            gc = np.stack([gx, gy], axis=-1)
        return gmap, gc

    return _make("bilinear_sample", out, (fmap, coords), bw)


def bilinear_sample(feature_map, coords) -> Tensor:
    """Sample ``feature_map[C,H,W]`` at normalized ``coords[P,2]``; returns ``[P,C]``."""
    feature_map, coords = as_tensor(feature_map), as_tensor(coords)
    if feature_map.ndim != 3 or coords.ndim != 2:
        raise ShapeError(f"bilinear_sample: feature map {feature_map.shape} and coords {coords.shape}")
    out = bilinear_sample_batched(reshape(feature_map, (1,) + feature_map.shape),
                                  reshape(coords, (1,) + coords.shape))
    return reshape(out, out.shape[1:])


def positional_encoding(coords, dim: int, temperature: float = 10000.0) -> Tensor:
    """Fixed sinusoidal encoding of normalized (x, y) pairs.

    Layout of the last axis: [sin x (dim/4), cos x (dim/4), sin y (dim/4), cos y (dim/4)],
    with angular frequency 2*pi / temperature**(2i/(dim/2)) for band i.
    """
    if dim % 4:
        raise ConfigError(f"positional encoding dim must be divisible by 4, got {dim}")
    coords = as_tensor(coords)
    quarter = dim // 4
    freqs = 2.0 * np.pi / temperature ** (2.0 * np.arange(quarter) / (dim // 2))
    parts = []
    for axis in (0, 1):
        ang = mul(coords[..., axis:axis + 1], freqs)
        parts.append(sin(ang))
        parts.append(cos(ang))
    return concat(parts, axis=-1)


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _make("sin", np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _make("cos", np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


# -- backward -------------------------------------------------------------------
def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Leaf tensors with ``requires_grad`` accumulate into ``.grad``; the returned
    map holds the gradient contributed by this call for each such leaf.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss is not attached to the gradient tape")
    nodes: dict[int, Tensor] = {}
    stack_ = [loss]
    while stack_:
        t = stack_.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        stack_.extend(p for p in t._parents if p.requires_grad)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for t in sorted(nodes.values(), key=lambda n: n._seq, reverse=True):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._backward is None:
            leaves[t] = g
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = np.array(pg, dtype=np.float64)
    for t, g in leaves.items():
        g = g.reshape(t.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g
    return leaves


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
