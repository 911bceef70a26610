"""Reverse-mode automatic differentiation over numpy arrays.

The op set is deliberately small: exactly what the generator, critic and
likelihood losses in this package need.  Backward passes are themselves built
out of these ops, so gradients can be differentiated again -- the critic's
gradient penalty (a loss on the norm of a gradient) needs that.

Dtype follows the input arrays (float32 for training speed, float64 in the
finite-difference tests); constants created inside ops never upcast.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradientTape",
    "grad",
    "finite_difference",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "reduce_sum",
    "mean",
    "broadcast_to",
    "reshape",
    "concat",
    "narrow",
    "take_per_row",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "sqrt",
    "clip",
    "detach",
    "softmax",
    "layer_norm",
    "l2norm",
    "linear",
]


class Tensor:
    """A numpy array plus the recipe for propagating cotangents to parents."""

    __slots__ = ("data", "requires_grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _vjps: tuple = ()):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        # Constants need no history; dropping it keeps graphs small.
        self._parents = _parents if self.requires_grad else ()
        self._vjps = _vjps if self.requires_grad else ()

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # Arithmetic sugar; scalars become dtype-matched constants.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self, like=self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self, like=self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        if p != 2:
            raise NotImplementedError("only **2 is supported")
        return mul(self, self)

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        out = self
        for axis, k in enumerate(key):
            if isinstance(k, slice):
                if k.step not in (None, 1):
                    raise NotImplementedError("strided slicing not supported")
                start, stop, _ = k.indices(out.data.shape[axis])
                if (start, stop) != (0, out.data.shape[axis]):
                    out = narrow(out, axis, start, stop - start)
            else:
                raise NotImplementedError("only slice indexing is supported")
        return out


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b, like=None):
    if isinstance(a, Tensor):
        return a, _wrap(b, like or a)
    if isinstance(b, Tensor):
        return _wrap(a, like or b), b
    return _wrap(a, like), _wrap(b, like)


def _op(data, parents: tuple, vjps: tuple) -> Tensor:
    return Tensor(data, _parents=parents, _vjps=vjps)


def _self_op(data, parents: tuple, make_vjps) -> Tensor:
    """Build an op whose VJPs reference the op's own output tensor."""
    hole: list[Tensor] = []
    t = Tensor(data, _parents=parents, _vjps=make_vjps(hole))
    hole.append(t)
    return t


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    while g.data.ndim > len(shape):
        g = reduce_sum(g, axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.data.shape[i] != 1:
            g = reduce_sum(g, axis=i, keepdims=True)
    return g


# -- primitives ---------------------------------------------------------------


def add(a, b):
    a, b = _pair(a, b)
    return _op(a.data + b.data, (a, b),
               (lambda g: _unbroadcast(g, a.data.shape),
                lambda g: _unbroadcast(g, b.data.shape)))


def sub(a, b, like=None):
    a, b = _pair(a, b, like)
    return _op(a.data - b.data, (a, b),
               (lambda g: _unbroadcast(g, a.data.shape),
                lambda g: _unbroadcast(neg(g), b.data.shape)))


def mul(a, b):
    a, b = _pair(a, b)
    return _op(a.data * b.data, (a, b),
               (lambda g: _unbroadcast(mul(g, b), a.data.shape),
                lambda g: _unbroadcast(mul(g, a), b.data.shape)))


def div(a, b, like=None):
    a, b = _pair(a, b, like)
    return _op(a.data / b.data, (a, b),
               (lambda g: _unbroadcast(div(g, b), a.data.shape),
                lambda g: _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.data.shape)))


def neg(a):
    a = _wrap(a)
    return _op(-a.data, (a,), (lambda g: neg(g),))


def matmul(a, b):
    a, b = _pair(a, b)
    return _op(a.data @ b.data, (a, b),
               (lambda g: matmul(g, transpose(b)),
                lambda g: matmul(transpose(a), g)))


def transpose(a):
    a = _wrap(a)
    return _op(a.data.T, (a,), (lambda g: transpose(g),))


def reduce_sum(a, axis=None, keepdims: bool = False):
    a = _wrap(a)
    shape = a.data.shape

    def vjp(g):
        if axis is None:
            return broadcast_to(reshape(g, (1,) * len(shape)), shape)
        gg = g if keepdims else reshape(g, _keepdims_shape(shape, axis))
        return broadcast_to(gg, shape)

    return _op(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), (vjp,))


def _keepdims_shape(shape, axis):
    out = list(shape)
    out[axis] = 1
    return tuple(out)


def mean(a, axis=None, keepdims: bool = False):
    a = _wrap(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return div(reduce_sum(a, axis=axis, keepdims=keepdims), float(count), like=a)


def broadcast_to(a, shape):
    a = _wrap(a)
    return _op(np.broadcast_to(a.data, shape), (a,),
               (lambda g: _unbroadcast(g, a.data.shape),))


def reshape(a, shape):
    a = _wrap(a)
    old = a.data.shape
    return _op(a.data.reshape(shape), (a,), (lambda g: reshape(g, old),))


def concat(parts: Sequence[Tensor], axis: int = 1):
    parts = [_wrap(p) for p in parts]
    offsets = np.cumsum([0] + [p.data.shape[axis] for p in parts])

    def make_vjp(i):
        start, length = int(offsets[i]), parts[i].data.shape[axis]
        return lambda g: narrow(g, axis, start, length)

    return _op(np.concatenate([p.data for p in parts], axis=axis),
               tuple(parts), tuple(make_vjp(i) for i in range(len(parts))))


def narrow(a, axis: int, start: int, length: int):
    a = _wrap(a)
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    shape = a.data.shape

    def vjp(g):
        return _embed(g, shape, index)

    return _op(a.data[index], (a,), (vjp,))


def _embed(g: Tensor, shape, index):
    data = np.zeros(shape, dtype=g.data.dtype)
    data[index] = g.data
    return _op(data, (g,), (lambda gg: _op(gg.data[index], (gg,), (lambda h: _embed(h, shape, index),)),))


def take_per_row(a, idx: np.ndarray):
    """``out[i] = a[i, idx[i]]`` for a 2-D tensor and an int index vector."""
    a = _wrap(a)
    idx = np.asarray(idx)
    n, k = a.data.shape
    rows = np.arange(n)

    def vjp(g):
        return _scatter_per_row(g, (n, k), idx)

    return _op(a.data[rows, idx], (a,), (vjp,))


def _scatter_per_row(g: Tensor, shape, idx):
    data = np.zeros(shape, dtype=g.data.dtype)
    data[np.arange(shape[0]), idx] = g.data
    return _op(data, (g,), (lambda gg: take_per_row(gg, idx),))


def relu(a):
    a = _wrap(a)
    mask = Tensor((a.data > 0).astype(a.data.dtype))
    return _op(np.maximum(a.data, 0), (a,), (lambda g: mul(g, mask),))


def sigmoid(a):
    a = _wrap(a)
    x = np.clip(a.data, -60.0, 60.0)
    out = 1.0 / (1.0 + np.exp(-x))
    return _self_op(out, (a,),
                    lambda hole: (lambda g: mul(g, mul(hole[0], sub(1.0, hole[0], like=a))),))


def exp(a):
    a = _wrap(a)
    return _self_op(np.exp(a.data), (a,),
                    lambda hole: (lambda g: mul(g, hole[0]),))


def log(a):
    a = _wrap(a)
    return _op(np.log(a.data), (a,), (lambda g: div(g, a),))


def sqrt(a):
    a = _wrap(a)
    return _self_op(np.sqrt(a.data), (a,),
                    lambda hole: (lambda g: div(g, mul(2.0, hole[0])),))


def clip(a, lo: float, hi: float):
    a = _wrap(a)
    mask = Tensor(((a.data > lo) & (a.data < hi)).astype(a.data.dtype))
    return _op(np.clip(a.data, lo, hi), (a,), (lambda g: mul(g, mask),))


def detach(a) -> Tensor:
    return Tensor(_wrap(a).data)


# -- composites ---------------------------------------------------------------


def softmax(z, axis: int = -1):
    z = _wrap(z)
    shift = Tensor(np.max(z.data, axis=axis, keepdims=True))
    e = exp(sub(z, shift))
    return div(e, reduce_sum(e, axis=axis, keepdims=True))


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    """Row-wise layer normalization with learnable scale and shift."""
    mu = mean(x, axis=1, keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=1, keepdims=True)
    inv = div(1.0, sqrt(add(var, eps)), like=x)
    return add(mul(mul(xc, inv), gamma), beta)


def l2norm(x, axis: int = 1, eps: float = 1e-12):
    """Row-wise Euclidean norm, smoothed at zero so gradients stay finite."""
    return sqrt(add(reduce_sum(mul(x, x), axis=axis), eps))


def linear(x, w, b):
    return add(matmul(x, w), b)


# -- gradients ----------------------------------------------------------------


def grad(output: Tensor, inputs: Sequence[Tensor], create_graph: bool = False):
    """Cotangents of a scalar ``output`` with respect to ``inputs``.

    With ``create_graph`` the returned values are tensors wired into the
    graph, so they can be differentiated again; otherwise plain arrays.
    """
    if output.data.size != 1:
        raise ValueError("grad expects a scalar output")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    cot: dict[int, Tensor] = {id(output): Tensor(np.ones_like(output.data))}
    for node in reversed(topo):
        g = cot.pop(id(node), None)
        if g is None:
            continue
        for p, vjp in zip(node._parents, node._vjps):
            if not p.requires_grad:
                continue
            contrib = vjp(g)
            prev = cot.get(id(p))
            cot[id(p)] = contrib if prev is None else add(prev, contrib)
        if id(node) in (id(x) for x in inputs):
            cot[id(node)] = g  # keep requested leaves

    out = []
    for x in inputs:
        g = cot.get(id(x))
        if g is None:
            g = Tensor(np.zeros_like(x.data))
        out.append(g if create_graph else g.data)
    return out


class GradientTape:
    """Thin facade over :func:`grad` for a familiar call shape."""

    def gradient(self, target: Tensor, sources: Sequence[Tensor],
                 create_graph: bool = False):
        return grad(target, sources, create_graph=create_graph)


def finite_difference(f: Callable[[], Tensor], params: Iterable[Tensor],
                      eps: float = 1e-6) -> list[np.ndarray]:
    """Central-difference gradients of ``f()`` w.r.t. each parameter tensor.

    ``f`` must recompute the scalar loss from the parameters' current data.
    """
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            hi = float(f().data)
            flat[i] = old - eps
            lo = float(f().data)
            flat[i] = old
            gflat[i] = (hi - lo) / (2 * eps)
        out.append(g)
    return out
