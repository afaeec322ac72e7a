"""Dense reverse-mode automatic differentiation on top of numpy.

Every backward rule is itself written with :class:`Tensor` operations, so
calling :func:`grad` with ``create_graph=True`` records the backward pass
and the result can be differentiated again. That is what lets the
distillation loop differentiate a meta-loss through an inner SGD step.

All values are float64.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import DependencyError, DimensionError, NumericalError

__all__ = [
    "Tensor", "as_tensor", "grad", "grad_through_step", "no_grad", "enable_grad",
    "is_grad_enabled", "checked", "set_checked", "is_checked",
    "add", "sub", "mul", "div", "neg", "matmul", "exp", "log", "relu",
    "sum", "mean", "reshape", "transpose", "swapaxes", "broadcast_to", "sum_to",
    "max_over", "max_over_time", "softmax", "log_softmax", "concat", "windows",
    "fold", "conv_text", "scale",
]

_local = threading.local()
_checked = True


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def _grad_mode(flag: bool):
    prev = is_grad_enabled()
    _local.grad_enabled = flag
    try:
        yield
    finally:
        _local.grad_enabled = prev


def no_grad():
    """Context manager: operations inside record no graph."""
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


def is_checked() -> bool:
    return _checked


def set_checked(flag: bool) -> None:
    """Toggle NaN/Inf detection on every produced value (process-wide)."""
    global _checked
    _checked = bool(flag)


@contextmanager
def checked(flag: bool = True):
    prev = _checked
    set_checked(flag)
    try:
        yield
    finally:
        set_checked(prev)


class Tensor:
    """An n-d float64 array that can take part in a recorded graph."""

    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.parents: tuple = ()
        self.backward_fn = None
        self.op = "leaf"

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
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
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- method forms --------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op) -> Tensor:
    if _checked and not np.isfinite(data).all():
        raise NumericalError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 \
        else np.asarray(data, dtype=np.float64)
    out.requires_grad = False
    out.parents = ()
    out.backward_fn = None
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
    return out


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# ----------------------------------------------------------------------
# broadcasting helpers
# ----------------------------------------------------------------------
def sum_to(x: Tensor, shape: tuple) -> Tensor:
    """Sum ``x`` down to ``shape`` (adjoint of broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and x.shape[i + lead] != 1)
    data = x.data.sum(axis=axes, keepdims=True).reshape(shape)

    def backward(g, needs):
        return (broadcast_to(g, x.shape),)

    return _make(data, (x,), backward, "sum_to")


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = np.broadcast_to(x.data, shape)

    def backward(g, needs):
        return (sum_to(g, x.shape),)

    return _make(data, (x,), backward, "broadcast_to")


# ----------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None,
                sum_to(g, b.shape) if needs[1] else None)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None,
                sum_to(neg(g), b.shape) if needs[1] else None)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g, needs):
        return (sum_to(mul(g, b), a.shape) if needs[0] else None,
                sum_to(mul(g, a), b.shape) if needs[1] else None)

    return _make(a.data * b.data, (a, b), backward, "mul")


def scale(a, c: float) -> Tensor:
    """Multiply by a plain Python constant."""
    a = as_tensor(a)
    c = float(c)

    def backward(g, needs):
        return (scale(g, c),)

    return _make(a.data * c, (a,), backward, "scale")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g, needs):
        ga = sum_to(div(g, b), a.shape) if needs[0] else None
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if needs[1] else None
        return ga, gb

    return _make(a.data / b.data, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g, needs):
        return (neg(g),)

    return _make(-a.data, (a,), backward, "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)

    def backward(g, needs):
        return (mul(g, out),)

    out = _make(np.exp(a.data), (a,), backward, "exp")
    return out


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g, needs):
        return (div(g, a),)

    return _make(np.log(a.data), (a,), backward, "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = Tensor((a.data > 0).astype(np.float64))

    def backward(g, needs):
        return (mul(g, mask),)

    return _make(np.maximum(a.data, 0.0), (a,), backward, "relu")


# ----------------------------------------------------------------------
# reductions and shape
# ----------------------------------------------------------------------
def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def backward(g, needs):
        return (broadcast_to(reshape(g, kept), a.shape),)

    return _make(np.asarray(a.data.sum(axis=axes, keepdims=keepdims)), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    if count == 0:
        raise DimensionError("mean over an empty axis")
    return scale(sum(a, axis, keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a

    def backward(g, needs):
        return (reshape(g, a.shape),)

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g, needs):
        return (transpose(g, inverse),)

    return _make(np.transpose(a.data, axes), (a,), backward, "transpose")


def swapaxes(a, ax1=-2, ax2=-1) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs 2-d or batched operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None

    def backward(g, needs):
        ga = sum_to(matmul(g, swapaxes(b)), a.shape) if needs[0] else None
        gb = sum_to(matmul(swapaxes(a), g), b.shape) if needs[1] else None
        return ga, gb

    return _make(data, (a, b), backward, "matmul")


def max_over(a, axis: int) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximiser."""
    a = as_tensor(a)
    axis = axis % a.ndim
    if a.shape[axis] == 0:
        raise DimensionError("max over an empty axis")
    idx = np.expand_dims(a.data.argmax(axis=axis), axis)
    mask = np.zeros_like(a.data)
    np.put_along_axis(mask, idx, 1.0, axis=axis)
    mask_t = Tensor(mask)
    kept = tuple(1 if i == axis else n for i, n in enumerate(a.shape))

    def backward(g, needs):
        return (mul(broadcast_to(reshape(g, kept), a.shape), mask_t),)

    return _make(np.take_along_axis(a.data, idx, axis=axis).squeeze(axis), (a,), backward, "max")


def max_over_time(a) -> Tensor:
    """Max-pool over the position axis: ``[..., f, L] -> [..., f]``."""
    return max_over(a, -1)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g, needs):
        inner = sum(mul(g, out), axis, keepdims=True)
        return (mul(out, sub(g, inner)),)

    out = _make(data, (a,), backward, "softmax")
    return out


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[axis] == 0:
        raise DimensionError("log_softmax over an empty axis")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    data = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g, needs):
        return (sub(g, mul(softmax(a, axis), sum(g, axis, keepdims=True))),)

    return _make(data, (a,), backward, "log_softmax")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def backward(g, needs):
        return (_scatter(g, idx, a.shape),)

    return _make(np.array(a.data[idx]), (a,), backward, "getitem")


def _scatter(g: Tensor, idx, shape) -> Tensor:
    data = np.zeros(shape)
    np.add.at(data, idx, g.data)

    def backward(gg, needs):
        return (getitem(gg, idx),)

    return _make(data, (g,), backward, "scatter")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of nothing")
    ndim = tensors[0].ndim
    axis = axis % ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g, needs):
        out = []
        for i, need in enumerate(needs):
            if not need:
                out.append(None)
                continue
            sl = [slice(None)] * ndim
            sl[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
            out.append(getitem(g, tuple(sl)))
        return tuple(out)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 backward, "concat")


# ----------------------------------------------------------------------
# text convolution
# ----------------------------------------------------------------------
def windows(a, h: int) -> Tensor:
    """Stack every run of ``h`` consecutive rows: ``[..., s, d] -> [..., s-h+1, h*d]``."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError("windows needs at least 2 dimensions")
    s, d = a.shape[-2], a.shape[-1]
    if h < 1 or h > s:
        raise DimensionError(f"window height {h} does not fit sequence length {s}")
    view = np.lib.stride_tricks.sliding_window_view(a.data, h, axis=-2)  # [..., L, d, h]
    data = np.swapaxes(view, -1, -2).reshape(a.shape[:-2] + (s - h + 1, h * d))

    def backward(g, needs):
        return (fold(g, h, s),)

    return _make(data, (a,), backward, "windows")


def fold(a, h: int, s: int) -> Tensor:
    """Adjoint of :func:`windows`: scatter-add windows back onto ``s`` rows."""
    a = as_tensor(a)
    n_win, hd = a.shape[-2], a.shape[-1]
    d = hd // h
    if n_win != s - h + 1 or d * h != hd:
        raise DimensionError("fold shape does not match window geometry")
    data = np.zeros(a.shape[:-2] + (s, d))
    for j in range(h):
        data[..., j:j + n_win, :] += a.data[..., :, j * d:(j + 1) * d]

    def backward(g, needs):
        return (windows(g, h),)

    return _make(data, (a,), backward, "fold")


def conv_text(x, filters, bias) -> Tensor:
    """Full-width text convolution of ``x [s, d]`` with ``filters [f, h, d]``.

    Returns ``[f, s-h+1]`` with ``out[i, t] = bias[i] + sum(filters[i] * x[t:t+h])``.
    """
    x, filters, bias = as_tensor(x), as_tensor(filters), as_tensor(bias)
    f, h, d = filters.shape
    if x.shape[-1] != d:
        raise DimensionError(f"filter width {d} != embedding width {x.shape[-1]}")
    if h > x.shape[-2]:
        raise DimensionError(f"filter height {h} exceeds sequence length {x.shape[-2]}")
    w = transpose(reshape(filters, (f, h * d)))
    out = add(matmul(windows(x, h), w), bias)
    return swapaxes(out)


# ----------------------------------------------------------------------
# differentiation
# ----------------------------------------------------------------------
def _topo(output: Tensor) -> list:
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, inputs: Sequence[Tensor], grad_output=None,
         create_graph: bool = False, allow_unused: bool = False) -> list:
    """Reverse-mode gradients of ``output`` with respect to each of ``inputs``.

    With ``create_graph`` the backward pass is recorded so the returned
    gradients are themselves differentiable. Gradients of inputs that do not
    feed ``output`` are zeros when ``allow_unused`` is set, otherwise a
    :class:`DependencyError` is raised.
    """
    inputs = list(inputs)
    if grad_output is None:
        if output.size != 1:
            raise DimensionError("grad of a non-scalar output needs grad_output")
        grad_output = Tensor(np.ones(output.shape))
    else:
        grad_output = as_tensor(grad_output)
        if grad_output.shape != output.shape:
            raise DimensionError("grad_output shape differs from output shape")

    input_ids = {id(t) for t in inputs}
    found = {}
    if output.requires_grad:
        order = _topo(output)
        needed = set()
        for node in order:
            if id(node) in input_ids or any(id(p) in needed for p in node.parents):
                needed.add(id(node))
        grads = {id(output): grad_output}
        with _grad_mode(create_graph):
            for node in reversed(order):
                g = grads.pop(id(node), None)
                if g is None or id(node) not in needed:
                    continue
                if id(node) in input_ids:
                    found[id(node)] = g
                if not node.parents:
                    continue
                needs = tuple(p.requires_grad and id(p) in needed for p in node.parents)
                if not any(needs):
                    continue
                for p, pg, need in zip(node.parents, node.backward_fn(g, needs), needs):
                    if not need or pg is None:
                        continue
                    k = id(p)
                    grads[k] = add(grads[k], pg) if k in grads else pg
    elif id(output) in input_ids:
        found[id(output)] = grad_output

    result = []
    for t in inputs:
        g = found.get(id(t))
        if g is None:
            if t is output:
                g = grad_output
            elif not allow_unused:
                raise DependencyError(f"input of shape {t.shape} is not part of the graph")
            else:
                g = Tensor(np.zeros(t.shape))
        result.append(g)
    return result


def grad_through_step(inner_loss: Callable, outer_loss: Callable,
                      params: Sequence[Tensor], lr: Tensor,
                      wrt: Sequence[Tensor]):
    """Differentiate an outer loss through one unrolled gradient step.

    ``params`` are the starting weights (leaves with ``requires_grad``).
    The updated weights ``params - lr * d inner_loss / d params`` are built
    as graph operations, ``outer_loss`` is evaluated on them, and the
    gradients of that value with respect to ``wrt`` are returned together
    with the outer loss tensor. Second-order terms are included.
    """
    params = list(params)
    with enable_grad():
        inner = inner_loss(params)
        steps = grad(inner, params, create_graph=True, allow_unused=True)
        updated = [sub(p, mul(lr, g)) for p, g in zip(params, steps)]
        outer = outer_loss(updated)
    if not outer.requires_grad:
        raise DependencyError("outer loss is not connected to the updated parameters")
    order_ids = {id(n) for n in _topo(outer)}
    if not any(id(u) in order_ids for u in updated):
        raise DependencyError("outer loss is not connected to the updated parameters")
    return outer, grad(outer, wrt, allow_unused=True)
