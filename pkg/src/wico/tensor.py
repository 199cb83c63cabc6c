"""Dense tensors with a small reverse-mode autodiff op set.

Tensors are immutable numpy-backed arrays. Every op returns a new tensor that
remembers its parents and a backward closure; :class:`Graph` sorts those
records topologically and accumulates gradients. Gradients live in the graph,
never on the tensors themselves, so a tensor can take part in many graphs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, PrecisionError

DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("_data", "_parents", "_backward", "op")

    def __init__(self, data, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True)
        if dtype is None and arr.dtype not in DTYPES:
            arr = arr.astype(np.float32)
        if arr.dtype not in DTYPES:
            raise TypeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
        arr.setflags(write=False)
        self._data = arr
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"

    @classmethod
    def _wrap(cls, arr: np.ndarray, parents=(), backward=None, op="leaf") -> Tensor:
        t = cls.__new__(cls)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        t._data = arr
        t._parents = tuple(parents)
        t._backward = backward
        t.op = op
        return t

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self) -> float:
        return float(self._data.reshape(()))

    def astype(self, dtype) -> Tensor:
        return Tensor(self._data, dtype=dtype)

    def detach(self) -> Tensor:
        return Tensor._wrap(self._data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op!r})"

    def __len__(self):
        return self.shape[0]

    # operator sugar
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self) -> Tensor:
        return transpose2d(self)


def apply_op(op: str, out: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Register a primitive: ``backward(g)`` returns one gradient per parent (or None)."""
    return Tensor._wrap(out, parents, backward, op)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return apply_op("add", a.data + b.data, (a, b),
                    lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return apply_op("sub", a.data - b.data, (a, b),
                    lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return apply_op("mul", ad * bd, (a, b),
                    lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return apply_op("scale", a.data * a.dtype.type(c), (a,), lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return apply_op("square", ad * ad, (a,), lambda g: (2.0 * g * ad,))


def absolute(a: Tensor) -> Tensor:
    """|a|; the subgradient at 0 is taken as 0."""
    ad = a.data
    return apply_op("abs", np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = a.data
    u = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(u)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * du),)

    return apply_op("gelu", out.astype(a.dtype, copy=False), (a,), backward)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return apply_op("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose2d(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose2d: expected a 2-D tensor, got shape {a.shape}")
    return apply_op("transpose2d", a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != a.size or any(s < 0 for s in shape):
        raise DimensionError(f"reshape: cannot view {a.shape} ({a.size} elements) as {shape}")
    old = a.shape
    return apply_op("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------- reductions

def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return apply_op("sum", np.asarray(out), (a,), backward)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / count)


# ---------------------------------------------------------------- indexing

def getitem(a: Tensor, key) -> Tensor:
    out = a.data[key]
    shape, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, key, g)
        return (full,)

    return apply_op("getitem", np.array(out), (a,), backward)


def take_rows(a: Tensor, index) -> Tensor:
    """Gather rows: ``out[idx...] = a[index[idx...]]``; output shape index.shape + a.shape[1:]."""
    index = np.asarray(index, dtype=np.intp)
    if a.ndim < 1:
        raise DimensionError("take_rows: cannot gather from a scalar")
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise DimensionError(f"take_rows: index out of range for {a.shape[0]} rows")
    shape, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index.reshape(-1), g.reshape((-1,) + shape[1:]))
        return (full,)

    return apply_op("take_rows", a.data[index], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat: nothing to concatenate")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return apply_op("concat", out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


# ---------------------------------------------------------------- nn primitives

def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, stabilized by subtracting the row max."""
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return apply_op("softmax_rows", y, (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match feature dim {d}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def backward(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return apply_op("layer_norm", out.astype(a.dtype, copy=False), (a, gain, bias), backward)


def interp_weights(s: int, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Endpoint-aligned linear interpolation stencil from s to t samples.

    Output i sits at source position i*(s-1)/(t-1) and blends rows ``lo`` and
    ``lo+1`` with weights ``1-frac`` and ``frac``. Positions are computed in
    integer arithmetic so that whole-number positions are exact.
    """
    if s < 1 or t < 1:
        raise ValueError(f"interp: extents must be >= 1, got s={s}, t={t}")
    if s == 1 or t == 1:
        zeros = np.zeros(t, dtype=np.intp)
        return zeros, zeros.copy(), np.zeros(t)
    num = np.arange(t, dtype=np.int64) * (s - 1)
    lo = num // (t - 1)
    rem = num - lo * (t - 1)
    last = lo >= s - 1
    lo[last] = s - 2
    rem[last] = t - 1
    frac = rem / (t - 1)
    return lo.astype(np.intp), (lo + 1).astype(np.intp), frac


def interp_axis0(a: Tensor, t: int) -> Tensor:
    """Linearly resample the first axis of ``a`` to ``t`` entries (endpoints aligned)."""
    if a.ndim < 1 or a.shape[0] < 1:
        raise DimensionError(f"interp_axis0: need at least one row, got shape {a.shape}")
    t = int(t)
    s = a.shape[0]
    if t == s:
        return apply_op("interp_axis0", a.data.copy(), (a,), lambda g: (g,))
    lo, hi, frac = interp_weights(s, t)
    x = a.data
    w = frac.reshape((-1,) + (1,) * (x.ndim - 1)).astype(x.dtype)
    out = (1 - w) * x[lo] + w * x[hi]

    def backward(g):
        full = np.zeros_like(x)
        np.add.at(full, lo, (1 - w) * g)
        np.add.at(full, hi, w * g)
        return (full,)

    return apply_op("interp_axis0", out, (a,), backward)


# ---------------------------------------------------------------- graph

@dataclass(frozen=True)
class Node:
    op: str
    inputs: tuple[int, ...]
    tensor: Tensor


class Graph:
    """Topologically ordered record of the ops that produced ``output``.

    Not thread-safe: a graph is meant to be built and differentiated by one
    worker.
    """

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: list[Node] = []
        self._index: dict[int, int] = {}
        # iterative DFS so deep graphs (long training unrolls) do not hit the recursion limit
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if id(t) in self._index:
                continue
            if expanded:
                inputs = tuple(self._index[id(p)] for p in t._parents)
                self._index[id(t)] = len(self.nodes)
                self.nodes.append(Node(t.op, inputs, t))
            else:
                stack.append((t, True))
                for p in reversed(t._parents):
                    if id(p) not in self._index:
                        stack.append((p, False))
        self.gradients: list[np.ndarray | None] = [None] * len(self.nodes)

    def index_of(self, t: Tensor) -> int | None:
        return self._index.get(id(t))

    def backward(self, seed: np.ndarray | None = None) -> Graph:
        out = self.output
        if seed is None:
            if out.size != 1:
                raise DimensionError(
                    f"backward: output has shape {out.shape}; pass a seed gradient for non-scalars")
            seed = np.ones(out.shape, dtype=out.dtype)
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[-1] = np.asarray(seed, dtype=out.dtype).reshape(out.shape)
        for i in range(len(self.nodes) - 1, -1, -1):
            node, g = self.nodes[i], grads[i]
            if g is None or node.tensor._backward is None:
                continue
            for j, pg in zip(node.inputs, node.tensor._backward(g)):
                if pg is None:
                    continue
                grads[j] = pg if grads[j] is None else grads[j] + pg
        for i, node in enumerate(self.nodes):
            if grads[i] is None:
                grads[i] = np.zeros(node.tensor.shape, dtype=node.tensor.dtype)
        self.gradients = grads
        return self

    def grad(self, t: Tensor) -> np.ndarray:
        i = self.index_of(t)
        if i is None:
            return np.zeros(t.shape, dtype=t.dtype)
        g = self.gradients[i]
        if g is None:
            raise RuntimeError("backward() has not been run on this graph")
        return g


def gradients(output: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """d(output)/d(t) for each ``t`` in ``wrt``; ``output`` must be a scalar."""
    graph = Graph(output).backward()
    return [graph.grad(t) for t in wrt]


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               seed: int = 0) -> float:
    """Worst relative error between backprop and central differences.

    ``fn(*inputs)`` may return any shape; non-scalar outputs are reduced with a
    fixed random projection so every output element contributes. The relative
    error per element is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise PrecisionError(f"grad_check needs float64 inputs, got {t.dtype}")
    out = fn(*inputs)
    if out.dtype != np.float64:
        raise PrecisionError(f"grad_check needs a float64 graph, output is {out.dtype}")
    proj = np.random.default_rng(seed).standard_normal(out.shape)

    def scalar(*xs):
        y = fn(*xs)
        return float(np.sum(y.data * proj))

    graph = Graph(out).backward(seed=proj)
    worst = 0.0
    for pos, t in enumerate(inputs):
        analytic = graph.grad(t)
        base = t.numpy()
        numeric = np.empty_like(base)
        flat = base.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            xs = list(inputs)
            xs[pos] = Tensor(base)
            f_plus = scalar(*xs)
            flat[k] = orig - eps
            xs[pos] = Tensor(base)
            f_minus = scalar(*xs)
            flat[k] = orig
            numeric.reshape(-1)[k] = (f_plus - f_minus) / (2 * eps)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        if analytic.size:
            worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst
