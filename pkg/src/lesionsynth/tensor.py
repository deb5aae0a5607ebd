"""Dense tensors with reverse-mode automatic differentiation.

The graph is recorded dynamically: every operation that produces a tensor
attaches a node holding references to its inputs and whatever it needs for
the reverse pass.  Gradients are themselves computed with tensor operations,
so a reverse pass run with ``create_graph=True`` is recorded again and can be
differentiated one more time (needed for penalties on gradient norms).

Broadcasting follows trailing-axis alignment (the numpy rule): shapes are
compared from the last axis backwards and an axis of extent 1 stretches.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "Tensor",
    "GraphConsumedError",
    "no_grad",
    "is_grad_enabled",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "sqrt",
    "square",
    "sigmoid",
    "leaky_relu",
    "tensor_sum",
    "tensor_mean",
    "reshape",
    "expand",
    "transpose2d",
    "matmul",
    "concat_flat",
    "backward",
    "grad",
    "grad_map",
]


class GraphConsumedError(RuntimeError):
    """Raised when a reverse pass revisits a node whose buffers were freed."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def is_grad_enabled():
    return _GRAD_ENABLED


_COUNTER = itertools.count()


class Tensor:
    """A dense N-dimensional float array, optionally linked into the graph."""

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._ctx = None
        self._order = next(_COUNTER)

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # -- operator sugar -----------------------------------------------------

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

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose2d(self)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def backward(self, seed=None, create_graph=False, retain_graph=None):
        backward(self, seed=seed, create_graph=create_graph,
                 retain_graph=retain_graph)


def as_tensor(value, like=None):
    """Wrap ``value`` as a Tensor; scalars adopt the dtype of ``like``."""
    if isinstance(value, Tensor):
        return value
    if like is not None and np.isscalar(value):
        return Tensor(np.asarray(value, dtype=like.dtype))
    return Tensor(value)


# -- graph machinery ----------------------------------------------------------


class Function:
    """One recorded operation: forward on raw arrays, backward on tensors.

    ``backward`` receives the output gradient as a Tensor and must return one
    gradient (or None) per input, computed with tensor operations so that the
    reverse pass itself is differentiable when recording is on.
    """

    def __init__(self):
        self.inputs = ()
        self.out = None
        self.consumed = False

    @classmethod
    def apply(cls, *args, **kw):
        tensors = [as_tensor(a) for a in args]
        if len(tensors) == 2:  # binary ops: match scalar dtype to the array
            if np.isscalar(args[0]) and not np.isscalar(args[1]):
                tensors[0] = as_tensor(args[0], like=tensors[1])
            elif np.isscalar(args[1]) and not np.isscalar(args[0]):
                tensors[1] = as_tensor(args[1], like=tensors[0])
        fn = cls()
        out = Tensor(fn.forward(*(t.data for t in tensors), **kw))
        if _GRAD_ENABLED and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out._ctx = fn
            fn.inputs = tuple(tensors)
            fn.out = out
        return out

    def forward(self, *arrays, **kw):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def release(self):
        self.inputs = ()
        self.out = None
        self.consumed = True


def _broadcast_forward(op, a, b):
    try:
        return op(a, b)
    except ValueError as err:
        raise ValueError(
            f"shapes {a.shape} and {b.shape} are not broadcast-compatible "
            f"(trailing-axis alignment)") from err


def _sum_to(g, shape):
    """Reduce ``g`` back to ``shape`` by summing broadcast axes."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = tensor_sum(g, axis=tuple(range(extra)))
    stretched = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if stretched:
        g = tensor_sum(g, axis=stretched, keepdims=True)
    return g


class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return _broadcast_forward(np.add, a, b)

    def backward(self, g):
        sa, sb = self.shapes
        return _sum_to(g, sa), _sum_to(g, sb)


class Sub(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return _broadcast_forward(np.subtract, a, b)

    def backward(self, g):
        sa, sb = self.shapes
        return _sum_to(g, sa), _sum_to(neg(g), sb)


class Mul(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return _broadcast_forward(np.multiply, a, b)

    def backward(self, g):
        a, b = self.inputs
        sa, sb = self.shapes
        return _sum_to(g * b, sa), _sum_to(g * a, sb)


class Div(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return _broadcast_forward(np.divide, a, b)

    def backward(self, g):
        _, b = self.inputs
        sa, sb = self.shapes
        ga = g / b
        gb = neg(ga * self.out)
        return _sum_to(ga, sa), _sum_to(gb, sb)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return (neg(g),)


class Exp(Function):
    def forward(self, a):
        return np.exp(a)

    def backward(self, g):
        return (g * self.out,)


def _check_positive(a, opname):
    bad = a <= 0.0
    if bad.any():
        idx = np.unravel_index(int(np.argmax(bad)), a.shape)
        raise ValueError(
            f"{opname} requires strictly positive input; "
            f"found {a[idx]} at index {tuple(int(i) for i in idx)}")


class Log(Function):
    def forward(self, a):
        _check_positive(a, "log")
        return np.log(a)

    def backward(self, g):
        (a,) = self.inputs
        return (g / a,)


class Sqrt(Function):
    def forward(self, a):
        _check_positive(a, "sqrt")
        return np.sqrt(a)

    def backward(self, g):
        return (g * 0.5 / self.out,)


class Square(Function):
    def forward(self, a):
        return a * a

    def backward(self, g):
        (a,) = self.inputs
        return (g * 2.0 * a,)


class Sigmoid(Function):
    def forward(self, a):
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        return out

    def backward(self, g):
        y = self.out
        return (g * y * (1.0 - y),)


class LeakyReLU(Function):
    def forward(self, a, alpha=0.2):
        scale = np.where(a >= 0, a.dtype.type(1.0), a.dtype.type(alpha))
        self.scale = Tensor(scale)  # piecewise-constant slope
        return a * scale

    def backward(self, g):
        return (g * self.scale,)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.in_shape = a.shape
        self.axis = _normalize_axis(axis, a.ndim)
        self.keepdims = keepdims
        return a.sum(axis=self.axis, keepdims=keepdims)

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            kept = list(self.in_shape)
            for ax in self.axis:
                kept[ax] = 1
            g = reshape(g, tuple(kept))
        return (expand(g, self.in_shape),)


class Expand(Function):
    def forward(self, a, shape=None):
        self.in_shape = a.shape
        return np.broadcast_to(a, shape)

    def backward(self, g):
        return (_sum_to(g, self.in_shape),)


class Reshape(Function):
    def forward(self, a, shape=None):
        self.in_shape = a.shape
        return a.reshape(shape)

    def backward(self, g):
        return (reshape(g, self.in_shape),)


class Transpose2d(Function):
    def forward(self, a):
        if a.ndim != 2:
            raise ValueError(f"transpose2d expects a matrix, got shape {a.shape}")
        return a.T

    def backward(self, g):
        return (transpose2d(g),)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError(
                f"matmul expects matrices, got shapes {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ValueError(
                f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
        return a @ b

    def backward(self, g):
        a, b = self.inputs
        return matmul(g, transpose2d(b)), matmul(transpose2d(a), g)


class ConcatFlat(Function):
    """Concatenate 2-D tensors along axis 1."""

    def forward(self, *arrays):
        self.splits = np.cumsum([a.shape[1] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=1)

    def backward(self, g):
        pieces = np.split(g.data, self.splits, axis=1)
        return tuple(Tensor(p) for p in pieces)


def _normalize_axis(axis, ndim):
    if axis is None:
        return None
    if np.isscalar(axis):
        axis = (axis,)
    return tuple(ax % ndim if ax < 0 else ax for ax in axis)


# -- public ops ----------------------------------------------------------------


def add(a, b):
    return Add.apply(a, b)


def sub(a, b):
    return Sub.apply(a, b)


def mul(a, b):
    return Mul.apply(a, b)


def div(a, b):
    return Div.apply(a, b)


def neg(a):
    return Neg.apply(a)


def exp(a):
    return Exp.apply(a)


def log(a):
    return Log.apply(a)


def sqrt(a):
    return Sqrt.apply(a)


def square(a):
    return Square.apply(a)


def sigmoid(a):
    return Sigmoid.apply(a)


def leaky_relu(a, alpha=0.2):
    return LeakyReLU.apply(a, alpha=alpha)


def tensor_sum(a, axis=None, keepdims=False):
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def tensor_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axis_n = _normalize_axis(axis, a.ndim)
    if axis_n is None:
        count = a.size
    else:
        count = 1
        for ax in axis_n:
            count *= a.shape[ax]
    if count == 0:
        raise ValueError("mean over zero elements")
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    return Reshape.apply(a, shape=shape)


def expand(a, shape):
    return Expand.apply(a, shape=tuple(shape))


def transpose2d(a):
    return Transpose2d.apply(a)


def matmul(a, b):
    return MatMul.apply(a, b)


def concat_flat(tensors):
    return ConcatFlat.apply(*tensors)


# -- reverse pass ---------------------------------------------------------------


def _topo_order(root):
    """Nodes reachable from ``root``, in creation order (inputs first)."""
    seen = set()
    nodes = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen or t._ctx is None:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._ctx.inputs)
    nodes.sort(key=lambda t: t._order)
    return nodes


def _run_backward(out, seed, targets, create_graph, retain_graph):
    out = as_tensor(out)
    if seed is None:
        if out.size != 1:
            raise ValueError(
                f"backward requires a single-element tensor, got shape {out.shape}")
        seed = Tensor(np.ones_like(out.data))
    else:
        seed = as_tensor(seed)
        if seed.shape != out.shape:
            raise ValueError("seed gradient shape must match the output shape")
    if retain_graph is None:
        retain_graph = create_graph

    nodes = _topo_order(out)
    grads = {id(out): seed}
    target_ids = None if targets is None else {id(t) for t in targets}
    collected = {}
    leaves = {}

    ctx = no_grad() if not create_graph else _NullCtx()
    with ctx:
        for t in reversed(nodes):
            fn = t._ctx
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if fn.consumed:
                raise GraphConsumedError(
                    "graph already consumed by a previous backward pass; "
                    "pass retain_graph=True to differentiate it again")
            input_grads = fn.backward(g)
            for inp, gi in zip(fn.inputs, input_grads):
                if gi is None:
                    continue
                if inp._ctx is None and not inp.requires_grad:
                    continue
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else prev + gi
                if inp._ctx is None:
                    leaves[id(inp)] = inp
                if target_ids is not None and id(inp) in target_ids:
                    collected[id(inp)] = grads[id(inp)]
            if not retain_graph:
                fn.release()

        if targets is None:
            if out._ctx is None and out.requires_grad:
                leaves[id(out)] = out
                grads[id(out)] = seed
            for lid, leaf in leaves.items():
                g = grads.get(lid)
                if g is not None:
                    leaf.grad = g if leaf.grad is None else leaf.grad + g
            return None
    if target_ids is not None and id(out) in target_ids:
        collected.setdefault(id(out), seed)
    return collected


class _NullCtx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def backward(out, seed=None, create_graph=False, retain_graph=None):
    """Accumulate gradients of ``out`` into ``.grad`` of every reachable leaf."""
    _run_backward(out, seed, None, create_graph, retain_graph)


def grad(out, inputs, seed=None, create_graph=False, retain_graph=None,
         allow_unused=False):
    """Gradients of ``out`` with respect to ``inputs``, without touching ``.grad``.

    With ``create_graph=True`` the returned tensors are graph-linked and can be
    differentiated again.
    """
    inputs = list(inputs)
    collected = _run_backward(out, seed, inputs, create_graph,
                              retain_graph if retain_graph is not None else True)
    result = []
    for t in inputs:
        g = collected.get(id(t))
        if g is None and not allow_unused:
            raise ValueError("an input is not reachable from the output; "
                             "pass allow_unused=True to receive None instead")
        result.append(g)
    return result


def grad_map(out, create_graph=False):
    """Gradient of ``out`` for every reachable requires-grad leaf, keyed by leaf."""
    out = as_tensor(out)
    nodes = _topo_order(out)
    leaves = []
    seen = set()
    for t in nodes:
        for inp in t._ctx.inputs:
            if inp._ctx is None and inp.requires_grad and id(inp) not in seen:
                seen.add(id(inp))
                leaves.append(inp)
    if out._ctx is None and out.requires_grad and id(out) not in seen:
        leaves.append(out)
    grads = grad(out, leaves, create_graph=create_graph, allow_unused=True)
    return {leaf: g for leaf, g in zip(leaves, grads) if g is not None}
