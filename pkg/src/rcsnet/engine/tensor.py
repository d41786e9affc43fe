"""Dense float tensors with reverse-mode automatic differentiation.

The engine wraps contiguous numpy buffers in :class:`GridTensor` and records
every differentiable operation as a node carrying its parents and a backward
closure.  Nodes are stamped with a global creation counter, so the recorded
graph is topologically ordered by forward execution; :func:`backward` walks it
exactly once in reverse.

Conventions enforced throughout:

* dtype is float32 on the production path; building inputs and parameters as
  float64 switches the whole graph to a 64-bit verification mode (ops never
  mix the two).
* every op checks its result for NaN/Inf and raises :class:`NumericError`.
* binary ops accept equal shapes, a python scalar, or a same-rank operand
  whose dims are 1 where they differ (e.g. ``(B,C,1,1)`` against
  ``(B,C,H,W)``).  Rank is never extended silently.
"""

from __future__ import annotations

import itertools
import numbers
from typing import Iterable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, NumericError, ParameterError

_SEQ = itertools.count()
_GRAD_ENABLED = True

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class no_grad:
    """Context manager that disables graph recording (used for evaluation)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class GridTensor:
    """N-dimensional dense float array with optional gradient tracking.

    ``data`` is always contiguous and row-major.  ``grad`` stays ``None``
    until a backward pass deposits into it; repeated backward calls
    accumulate, and :func:`zero_grads` resets.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_seq")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _FLOAT_DTYPES else np.float32
        elif np.dtype(dtype) not in _FLOAT_DTYPES:
            raise ParameterError(f"unsupported dtype {dtype!r}; use float32 or float64")
        arr = np.asarray(arr, dtype=dtype)
        if not arr.flags.c_contiguous:
            # 0-d arrays are always contiguous, so rank is preserved here
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward_fn = None
        self._seq = next(_SEQ)

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(())[()])

    def detach(self) -> "GridTensor":
        """A view of the same buffer with no graph connection."""
        return GridTensor(self.data, requires_grad=False, dtype=self.dtype)

    def backward(self):
        backward(self)

    def __repr__(self):
        return (f"GridTensor(shape={self.shape}, dtype={self.data.dtype.name}, "
                f"requires_grad={self.requires_grad})")

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {op}")


def make_node(data: np.ndarray, parents: Sequence[GridTensor], backward_fn, op: str) -> GridTensor:
    """Wrap an op result, inheriting grad tracking from its parents.

    ``backward_fn(out_grad)`` must return one gradient array (or None) per
    parent, in order.  Downstream modules use this to define composite ops
    without touching the walker.
    """
    _check_finite(data, op)
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = GridTensor(data, requires_grad=track, dtype=data.dtype)
    if track:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _lift(x, like: GridTensor) -> GridTensor:
    """Wrap a python scalar as a constant 0-d tensor matching ``like``'s dtype."""
    if isinstance(x, GridTensor):
        return x
    if isinstance(x, numbers.Real):
        return GridTensor(np.asarray(x, dtype=like.dtype))
    raise ParameterError(f"expected GridTensor or scalar, got {type(x).__name__}")


def _binary_shapes(a: GridTensor, b: GridTensor, op: str) -> tuple:
    """Validate the documented broadcast forms and return the result shape."""
    if a.dtype != b.dtype:
        raise DimensionError(f"{op}: mixed dtypes {a.dtype} vs {b.dtype}")
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if sa == () or sb == ():
        return sb if sa == () else sa
    if len(sa) != len(sb):
        raise DimensionError(f"{op}: rank mismatch {sa} vs {sb}")
    out = []
    for da, db in zip(sa, sb):
        if da == db or da == 1 or db == 1:
            out.append(max(da, db))
        else:
            raise DimensionError(f"{op}: incompatible shapes {sa} vs {sb}")
    return tuple(out)


def _reduce_grad(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum(), dtype=grad.dtype)
    axes = tuple(i for i, (d, g) in enumerate(zip(shape, grad.shape)) if d == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True) if axes else grad


# -- arithmetic --------------------------------------------------------------


def add(a, b) -> GridTensor:
    a = a if isinstance(a, GridTensor) else _lift(a, b)
    b = _lift(b, a)
    _binary_shapes(a, b, "add")
    out = a.data + b.data

    def bw(g):
        return _reduce_grad(g, a.shape), _reduce_grad(g, b.shape)

    return make_node(out, (a, b), bw, "add")


def sub(a, b) -> GridTensor:
    a = a if isinstance(a, GridTensor) else _lift(a, b)
    b = _lift(b, a)
    _binary_shapes(a, b, "sub")
    out = a.data - b.data

    def bw(g):
        return _reduce_grad(g, a.shape), _reduce_grad(-g, b.shape)

    return make_node(out, (a, b), bw, "sub")


def mul(a, b) -> GridTensor:
    a = a if isinstance(a, GridTensor) else _lift(a, b)
    b = _lift(b, a)
    _binary_shapes(a, b, "mul")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bw(g):
        return _reduce_grad(g * bd, a.shape), _reduce_grad(g * ad, b.shape)

    return make_node(out, (a, b), bw, "mul")


# -- pointwise nonlinearities -------------------------------------------------


def sigmoid(x: GridTensor) -> GridTensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)

    def bw(g):
        return (g * out * (1.0 - out),)

    return make_node(out, (x,), bw, "sigmoid")


def tanh(x: GridTensor) -> GridTensor:
    out = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return make_node(out, (x,), bw, "tanh")


def relu(x: GridTensor) -> GridTensor:
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return make_node(out, (x,), bw, "relu")


def square(x: GridTensor) -> GridTensor:
    out = x.data * x.data
    xd = x.data

    def bw(g):
        return (g * (2.0 * xd),)

    return make_node(out, (x,), bw, "square")


def absval(x: GridTensor) -> GridTensor:
    out = np.abs(x.data)
    sign = np.sign(x.data)

    def bw(g):
        return (g * sign,)

    return make_node(out, (x,), bw, "abs")


def sqrt_eps(x: GridTensor, eps: float = 1e-6) -> GridTensor:
    """sqrt(x + eps); the offset keeps gradients bounded as x -> 0."""
    out = np.sqrt(x.data + eps)

    def bw(g):
        return (g * (0.5 / out),)

    return make_node(out, (x,), bw, "sqrt_eps")


def rsqrt_eps(x: GridTensor, eps: float = 1e-6) -> GridTensor:
    """1 / sqrt(x + eps); used for orientation cues and feature standardization."""
    out = 1.0 / np.sqrt(x.data + eps)

    def bw(g):
        return (g * (-0.5 * out * out * out),)

    return make_node(out, (x,), bw, "rsqrt_eps")


# -- reductions ----------------------------------------------------------------


def sum_all(x: GridTensor) -> GridTensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=False),)

    return make_node(out, (x,), bw, "sum_all")


def mean_all(x: GridTensor) -> GridTensor:
    n = x.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(g / n, shape).astype(g.dtype, copy=False),)

    return make_node(out, (x,), bw, "mean_all")


def mean(x: GridTensor, axis, keepdims: bool = False) -> GridTensor:
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    n = 1
    for ax in axes:
        n *= x.shape[ax]
    out = x.data.mean(axis=axes, keepdims=keepdims)
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, shape).astype(g.dtype, copy=False),)

    return make_node(np.ascontiguousarray(out), (x,), bw, "mean")


# -- shape manipulation ---------------------------------------------------------


def reshape(x: GridTensor, shape) -> GridTensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)
    orig = x.shape

    def bw(g):
        return (g.reshape(orig),)

    return make_node(np.ascontiguousarray(out), (x,), bw, "reshape")


def broadcast_to(x: GridTensor, shape) -> GridTensor:
    """Materialize ``x`` at ``shape``; only dims of size 1 may be expanded."""
    shape = tuple(shape)
    if x.shape != () and len(shape) != x.ndim:
        raise DimensionError(f"broadcast_to: rank change {x.shape} -> {shape}")
    if x.shape != ():
        for d, s in zip(x.shape, shape):
            if d != s and d != 1:
                raise DimensionError(f"broadcast_to: cannot expand {x.shape} to {shape}")
    out = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    orig = x.shape

    def bw(g):
        return (_reduce_grad(g, orig),)

    return make_node(out, (x,), bw, "broadcast_to")


def narrow(x: GridTensor, axis: int, start: int, length: int) -> GridTensor:
    if not (0 <= start and start + length <= x.shape[axis]):
        raise DimensionError(
            f"narrow: [{start}, {start + length}) outside axis {axis} of {x.shape}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = np.ascontiguousarray(x.data[idx])
    shape = x.shape

    def bw(g):
        gi = np.zeros(shape, dtype=g.dtype)
        gi[idx] = g
        return (gi,)

    return make_node(out, (x,), bw, "narrow")


def concat(tensors: Iterable[GridTensor], axis: int) -> GridTensor:
    tensors = list(tensors)
    if not tensors:
        raise ParameterError("concat: empty input list")
    ref = tensors[0]
    for t in tensors[1:]:
        if t.ndim != ref.ndim or t.dtype != ref.dtype:
            raise DimensionError("concat: rank or dtype mismatch")
        for ax in range(ref.ndim):
            if ax != axis and t.shape[ax] != ref.shape[ax]:
                raise DimensionError(f"concat: shapes {ref.shape} vs {t.shape} on axis {ax}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def bw(g):
        grads, off = [], 0
        for s in sizes:
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(off, off + s)
            grads.append(np.ascontiguousarray(g[tuple(idx)]))
            off += s
        return tuple(grads)

    return make_node(out, tuple(tensors), bw, "concat")


def stack(tensors: Iterable[GridTensor], axis: int) -> GridTensor:
    tensors = list(tensors)
    if not tensors:
        raise ParameterError("stack: empty input list")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape or t.dtype != tensors[0].dtype:
            raise DimensionError("stack: all inputs must share shape and dtype")
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.ascontiguousarray(s) for s in np.moveaxis(g, axis, 0))

    return make_node(out, tuple(tensors), bw, "stack")


# -- backward walker --------------------------------------------------------------


class Graph:
    """The recorded operation graph reachable from one output tensor.

    ``nodes`` are ordered by forward execution (creation order), which is a
    valid topological order because an op's inputs always exist before its
    result.
    """

    def __init__(self, nodes: list, output: GridTensor):
        self.nodes = nodes
        self.output = output

    @staticmethod
    def build(output: GridTensor) -> "Graph":
        seen = set()
        nodes = []
        stack_ = [output]
        while stack_:
            node = stack_.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack_.extend(node._parents)
        nodes.sort(key=lambda n: n._seq)
        return Graph(nodes, output)


def backward(loss: GridTensor) -> None:
    """Populate ``grad`` for every requires_grad tensor reachable from ``loss``.

    Accumulates into existing buffers; call :func:`zero_grads` between steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any requires_grad tensor")
    graph = Graph.build(loss)
    flow = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward_fn is None:
            continue
        parent_grads = node._backward_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in flow:
                flow[id(parent)] = flow[id(parent)] + pg
            else:
                flow[id(parent)] = pg


def zero_grads(tensors: Iterable[GridTensor]) -> None:
    for t in tensors:
        t.grad = None
