"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` of the
calling thread whenever one of their inputs requires a gradient. Without an
active tape, operations simply compute values, which is how inference runs.

    with Tape() as tape:
        x = Tensor(np.ones(3), requires_grad=True)
        y = (x * x).sum()
    tape.backward(y)
    x.grad  # -> array([2., 2., 2.])

Gradients are stored on every tensor that requires one and lies on a path
to the differentiated scalar, including intermediates (attention matrices,
hidden states). Each backward call overwrites those ``grad`` buffers.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from calig import kernels

__all__ = [
    "Tensor",
    "Tape",
    "TensorShapeError",
    "TapeContractError",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "gelu",
    "softmax_lastdim",
    "layer_norm",
    "embedding",
    "concat",
    "getitem",
    "reduce_sum",
    "mean",
    "transpose",
    "swapaxes",
    "reshape",
    "cross_entropy",
    "LAYER_NORM_EPS",
]

LAYER_NORM_EPS = 1e-5


class TensorShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class TapeContractError(RuntimeError):
    """Raised when backward is invoked outside its contract."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name

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
        if self.data.size != 1:
            raise TapeContractError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: tuple, vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def _active_tape() -> Optional["Tape"]:
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations for one forward run.

    Tapes are thread-confined: entering a tape makes it active for the
    current thread only.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise TapeContractError("tapes must be exited in LIFO order")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple, vjp: Callable) -> None:
        self.nodes.append(_Node(out, inputs, vjp))

    def backward(self, scalar: Tensor) -> None:
        """Populate ``grad`` on every gradient-requiring ancestor of ``scalar``."""
        if scalar.size != 1:
            raise TapeContractError(
                f"backward needs a single-element tensor, got shape {scalar.shape}"
            )
        if not scalar.requires_grad:
            raise TapeContractError("scalar does not depend on any gradient-requiring tensor")
        if not any(node.out is scalar for node in reversed(self.nodes)):
            raise TapeContractError("scalar was not produced on this tape")
        grads: dict[int, np.ndarray] = {id(scalar): np.ones_like(scalar.data)}
        owners: dict[int, Tensor] = {id(scalar): scalar}
        for node in reversed(self.nodes):
            g = grads.get(id(node.out))
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    owners[key] = inp
        for key, tensor in owners.items():
            tensor.grad = grads[key]


def backward(scalar: Tensor, tape: Tape) -> None:
    tape.backward(scalar)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple, vjp: Callable) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise TensorShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), vjp)


def scale(a: Tensor, factor: float) -> Tensor:
    return _make(a.data * factor, (a,), lambda g: (g * factor,))


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise TensorShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise TensorShapeError(
            f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast"
        ) from None

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), vjp)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    flat = np.ascontiguousarray(x.data).reshape(-1)
    out = kernels.gelu(flat).reshape(x.shape)

    def vjp(g):
        gx = kernels.gelu_backward(flat, np.ascontiguousarray(g).reshape(-1))
        return (gx.reshape(x.shape),)

    return _make(out, (x,), vjp)


def softmax_lastdim(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Stabilized softmax over the last axis.

    ``mask`` (broadcastable to ``x``) marks kept entries; masked entries are
    exactly zero in the output and receive zero gradient.
    """
    if x.ndim == 0 or x.shape[-1] < 1:
        raise TensorShapeError(f"softmax_lastdim: last dimension must be >= 1, got {x.shape}")
    n = x.shape[-1]
    rows = np.ascontiguousarray(x.data).reshape(-1, n)
    mask_rows = None
    if mask is not None:
        mask_rows = np.ascontiguousarray(
            np.broadcast_to(np.asarray(mask, dtype=np.uint8), x.shape)
        ).reshape(-1, n)
    y = kernels.softmax_rows(rows, mask_rows)

    def vjp(g):
        gx = kernels.softmax_rows_backward(y, np.ascontiguousarray(g).reshape(-1, n))
        return (gx.reshape(x.shape),)

    return _make(y.reshape(x.shape), (x,), vjp)


def layer_norm(x: Tensor, gamma, beta, eps: float = LAYER_NORM_EPS) -> Tensor:
    gamma, beta = _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise TensorShapeError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match last dim of {x.shape}"
        )
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    rows = np.ascontiguousarray(x.data).reshape(-1, d)
    y, xhat, rstd = kernels.layer_norm_rows(rows, gamma.data, beta.data, eps)

    def vjp(g):
        gx, gg, gb = kernels.layer_norm_rows_backward(
            np.ascontiguousarray(g).reshape(-1, d), xhat, rstd, gamma.data
        )
        return gx.reshape(x.shape), gg, gb

    return _make(y.reshape(x.shape), (x, gamma, beta), vjp)


def embedding(weight: Tensor, ids) -> Tensor:
    """Gather rows of ``weight`` at integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding: ids out of range [0, {weight.shape[0]})")

    def vjp(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[-1]))
        return (gw,)

    return _make(weight.data[ids], (weight,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as err:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise TensorShapeError(f"concat: incompatible shapes {shapes}") from err
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, vjp)


def getitem(x: Tensor, index) -> Tensor:
    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(np.array(x.data[index]), (x,), vjp)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _make(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as err:
        raise TensorShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from err
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise TensorShapeError(
            f"cross_entropy: logits {logits.shape} and labels {labels.shape} disagree"
        )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = labels.shape[0]
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()

    def vjp(g):
        probs = np.exp(log_probs)
        probs[rows, labels] -= 1.0
        return (probs * (g / n),)

    return _make(np.asarray(loss), (logits,), vjp)
