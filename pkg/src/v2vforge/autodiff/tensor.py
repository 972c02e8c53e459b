"""Dense tensors with a reverse-mode tape.

Each differentiable operation is a named primitive holding a forward rule and
a vector-Jacobian rule. While a :class:`GradTape` is active, every primitive
whose inputs are tracked appends one node to the tape; nodes are appended in
creation order, so iterating the tape backwards is a reverse topological walk.
Outside a tape, primitives run as plain numpy and record nothing.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

_local = threading.local()


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable
    backward: Callable
    differentiable: bool = True


PRIMITIVES: dict[str, Primitive] = {}


def register(name: str, forward: Callable, backward: Callable, differentiable: bool = True) -> None:
    PRIMITIVES[name] = Primitive(name, forward, backward, differentiable)


def active_tape() -> "GradTape | None":
    return getattr(_local, "tape", None)


class Tensor:
    __slots__ = ("data", "tape", "slot")
    __array_ufunc__ = None  # make numpy defer to the reflected operators below

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind in "iub":
            arr = arr.astype(np.float32)
        self.data = arr
        self.tape = None
        self.slot = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def requires_grad(self) -> bool:
        return self.slot is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tracked = ", tracked" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tracked})"

    def __add__(self, other):
        if np.isscalar(other):
            return apply("add_scalar", self, s=other)
        return apply("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return apply("add_scalar", self, s=-other)
        return apply("sub", self, other)

    def __rsub__(self, other):
        return apply("add_scalar", apply("neg", self), s=other)

    def __mul__(self, other):
        if np.isscalar(other):
            return apply("scale", self, s=other)
        return apply("mul", self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return apply("scale", self, s=1.0 / other)

    def __neg__(self):
        return apply("neg", self)

    def __matmul__(self, other):
        return apply("matmul", self, other)

    def __rmatmul__(self, other):
        return apply("matmul", other, self)

    def __getitem__(self, index):
        return apply("getitem", self, index=index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", self, shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return apply("transpose", self, axes=axes)

    def sum(self, axis=None, keepdims=False):
        return apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply("mean", self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply(name: str, *inputs, **attrs) -> Tensor:
    """Run primitive ``name`` and record it on the active tape when needed."""
    prim = PRIMITIVES[name]
    tensors = [as_tensor(x) for x in inputs]
    out_data, ctx = prim.forward(*[t.data for t in tensors], **attrs)
    out = Tensor(out_data)
    tape = active_tape()
    if tape is None or not prim.differentiable:
        return out
    parents = tuple(t.slot if t.tape is tape else None for t in tensors)
    if all(p is None for p in parents):
        return out
    tape._record(out, name, parents, ctx)
    return out


class GradTape:
    """Records primitive applications and differentiates scalars w.r.t. watched leaves.

    >>> with GradTape() as tape:
    ...     x = tape.watch("x", np.array([3.0]))
    ...     y = (x * x).sum()
    >>> tape.gradient(y)["x"]
    array([6.])
    """

    def __init__(self):
        self.nodes: list[tuple] = []
        self.params: dict[str, int] = {}
        self._shapes: dict[str, tuple] = {}
        self._dtypes: dict[str, np.dtype] = {}
        self._previous = None

    def __enter__(self) -> "GradTape":
        self._previous = active_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._previous

    def _record(self, out: Tensor, name, parents, ctx) -> None:
        out.tape = self
        out.slot = len(self.nodes)
        self.nodes.append((name, parents, ctx))

    def watch(self, name: str, value) -> Tensor:
        """Register a parameter leaf. Registering without using it yields a zero gradient."""
        if name in self.params:
            raise KeyError(f"parameter {name!r} already watched")
        t = Tensor(np.asarray(value))
        self._record(t, None, (), None)
        self.params[name] = t.slot
        self._shapes[name] = t.shape
        self._dtypes[name] = t.dtype
        return t

    def watch_all(self, params: dict) -> dict[str, Tensor]:
        return {k: self.watch(k, v) for k, v in params.items()}

    def gradient(self, loss: Tensor) -> dict[str, np.ndarray]:
        if loss.data.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        if not np.all(np.isfinite(loss.data)):
            raise FloatingPointError("non-finite loss value")
        grads: list = [None] * len(self.nodes)
        if loss.tape is self:
            grads[loss.slot] = np.ones_like(loss.data)
            for i in range(loss.slot, -1, -1):
                g = grads[i]
                if g is None:
                    continue
                name, parents, ctx = self.nodes[i]
                if name is None:
                    continue
                pgrads = PRIMITIVES[name].backward(ctx, g)
                grads[i] = None
                for p, pg in zip(parents, pgrads):
                    if p is None or pg is None:
                        continue
                    if not np.all(np.isfinite(pg)):
                        raise FloatingPointError(f"non-finite gradient produced by {name!r}")
                    grads[p] = pg if grads[p] is None else grads[p] + pg
        out = {}
        for pname, slot in self.params.items():
            g = grads[slot]
            if g is None:
                g = np.zeros(self._shapes[pname], dtype=self._dtypes[pname])
            out[pname] = np.asarray(g, dtype=self._dtypes[pname]).reshape(self._shapes[pname])
        return out


def backward(tape: GradTape, loss: Tensor) -> dict[str, np.ndarray]:
    return tape.gradient(loss)


# ---------------------------------------------------------------------------
# primitive rules


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _add_f(a, b):
    return a + b, (a.shape, b.shape)


def _add_b(ctx, g):
    sa, sb = ctx
    return _unbroadcast(g, sa), _unbroadcast(g, sb)


def _sub_f(a, b):
    return a - b, (a.shape, b.shape)


def _sub_b(ctx, g):
    sa, sb = ctx
    return _unbroadcast(g, sa), _unbroadcast(-g, sb)


def _mul_f(a, b):
    return a * b, (a, b)


def _mul_b(ctx, g):
    a, b = ctx
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _neg_f(a):
    return -a, None


def _neg_b(ctx, g):
    return (-g,)


def _scale_f(a, s):
    return a * s, s


def _scale_b(s, g):
    return (g * s,)


def _add_scalar_f(a, s):
    return a + s, None


def _add_scalar_b(ctx, g):
    return (g,)


def _matmul_f(a, b):
    return a @ b, (a, b)


def _matmul_b(ctx, g):
    a, b = ctx
    if b.ndim == 2 and a.ndim >= 2:
        ga = g @ b.T
        gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb
    ga = g @ np.swapaxes(b, -1, -2)
    gb = np.swapaxes(a, -1, -2) @ g
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _reshape_f(a, shape):
    return a.reshape(shape), a.shape


def _reshape_b(shape, g):
    return (g.reshape(shape),)


def _transpose_f(a, axes):
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    return a.transpose(axes), axes


def _transpose_b(axes, g):
    return (g.transpose(np.argsort(axes)),)


def _concat_f(*arrays, axis=0):
    sizes = [x.shape[axis] for x in arrays]
    return np.concatenate(arrays, axis=axis), (axis, np.cumsum(sizes)[:-1])


def _concat_b(ctx, g):
    axis, splits = ctx
    return tuple(np.split(g, splits, axis=axis))


def _getitem_f(a, index):
    return a[index], (a.shape, a.dtype, index)


def _getitem_b(ctx, g):
    shape, dtype, index = ctx
    out = np.zeros(shape, dtype=g.dtype)
    parts = index if isinstance(index, tuple) else (index,)
    if all(isinstance(p, (slice, int, type(None))) or p is Ellipsis for p in parts):
        out[index] = g
    else:
        np.add.at(out, index, g)
    return (out,)


def _sum_f(a, axis=None, keepdims=False):
    return np.sum(a, axis=axis, keepdims=keepdims), (a.shape, axis, keepdims)


def _sum_b(ctx, g):
    shape, axis, keepdims = ctx
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, shape).copy(),)


def _mean_f(a, axis=None, keepdims=False):
    out = np.mean(a, axis=axis, keepdims=keepdims)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return out.astype(a.dtype, copy=False), (a.shape, axis, keepdims, count)


def _mean_b(ctx, g):
    shape, axis, keepdims, count = ctx
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / count, shape).copy(),)


def _softmax_f(a):
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return y, y


def _softmax_b(y, g):
    return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


def _layer_norm_f(a, eps=1e-6):
    mu = a.mean(axis=-1, keepdims=True)
    xc = a - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat, (xhat, inv)


def _layer_norm_b(ctx, g):
    xhat, inv = ctx
    gm = g.mean(axis=-1, keepdims=True)
    gx = (g * xhat).mean(axis=-1, keepdims=True)
    return (inv * (g - gm - xhat * gx),)


_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu_f(a):
    a2 = a * a
    th = np.tanh(_GELU_C * a * (1.0 + 0.044715 * a2))
    return 0.5 * a * (1.0 + th), (a, a2, th)


def _gelu_b(ctx, g):
    a, a2, th = ctx
    du = _GELU_C * (1.0 + 3 * 0.044715 * a2)
    d = 0.5 * (1.0 + th) + 0.5 * a * (1.0 - th * th) * du
    return (g * d,)


def _mse_f(a, b):
    diff = a - b
    return np.asarray(np.mean(diff * diff), dtype=a.dtype), diff


def _mse_b(diff, g):
    ga = g * (2.0 / diff.size) * diff
    return ga, -ga


def sinusoidal_table(values, dim: int, max_period: float = 10000.0, dtype=np.float32) -> np.ndarray:
    """Sinusoidal features ``[cos(v f_k), sin(v f_k)]`` for each value; last axis has ``dim`` entries."""
    values = np.asarray(values, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half, dtype=np.float64) / max(half, 1))
    args = values[..., None] * freqs
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros(emb.shape[:-1] + (1,))], axis=-1)
    return emb.astype(dtype)


def _sinusoidal_f(values, dim=16, max_period=10000.0, dtype=np.float32):
    return sinusoidal_table(values, dim, max_period, dtype), None


def _sinusoidal_b(ctx, g):
    return (None,)


register("add", _add_f, _add_b)
register("sub", _sub_f, _sub_b)
register("mul", _mul_f, _mul_b)
register("neg", _neg_f, _neg_b)
register("scale", _scale_f, _scale_b)
register("add_scalar", _add_scalar_f, _add_scalar_b)
register("matmul", _matmul_f, _matmul_b)
register("reshape", _reshape_f, _reshape_b)
register("transpose", _transpose_f, _transpose_b)
register("concat", _concat_f, _concat_b)
register("getitem", _getitem_f, _getitem_b)
register("sum", _sum_f, _sum_b)
register("mean", _mean_f, _mean_b)
register("softmax", _softmax_f, _softmax_b)
register("layer_norm", _layer_norm_f, _layer_norm_b)
register("gelu", _gelu_f, _gelu_b)
register("mse", _mse_f, _mse_b)
register("sinusoidal", _sinusoidal_f, _sinusoidal_b, differentiable=False)


# ---------------------------------------------------------------------------
# functional surface


def add(a, b) -> Tensor:
    return apply("add", a, b)


def mul(a, b) -> Tensor:
    return apply("mul", a, b)


def matmul(a, b) -> Tensor:
    return apply("matmul", a, b)


def reshape(a, shape) -> Tensor:
    return apply("reshape", a, shape=tuple(shape))


def transpose(a, axes=None) -> Tensor:
    return apply("transpose", a, axes=axes)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if len(tensors) == 1:
        return as_tensor(tensors[0])
    return apply("concat", *tensors, axis=axis)


def softmax(a) -> Tensor:
    return apply("softmax", a)


def layer_norm(a, eps: float = 1e-6) -> Tensor:
    return apply("layer_norm", a, eps=eps)


def gelu(a) -> Tensor:
    return apply("gelu", a)


def mse(a, b) -> Tensor:
    return apply("mse", a, b)


def sinusoidal(values, dim: int, max_period: float = 10000.0, dtype=np.float32) -> Tensor:
    return apply("sinusoidal", np.asarray(values), dim=dim, max_period=max_period, dtype=dtype)
