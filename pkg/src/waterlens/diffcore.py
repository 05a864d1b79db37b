"""Reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built on the fly (define-by-run).  Every operation returns a new
:class:`Tensor` that remembers its inputs and a closure that pushes the
output gradient back to them.  :func:`backward` walks the graph in reverse
topological order.

Broadcasting is deliberately limited: binary elementwise ops require equal
shapes, except that either operand may be a scalar (shape ``()``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ._kernels import sincos


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an operation is used outside its contract."""


class Tensor:
    __slots__ = ("data", "grad", "op", "parents", "_backward", "name", "requires_grad")

    def __init__(self, data, name: str | None = None, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name
        self.requires_grad = requires_grad

    @classmethod
    def from_op(cls, data, op: str, parents: Sequence["Tensor"], backward_fn) -> "Tensor":
        """Register a new graph node.

        ``backward_fn(g)`` receives the gradient of the output and is
        responsible for calling :meth:`accumulate` on the parents.
        """
        out = cls(data)
        out.op = op
        out.parents = tuple(parents)
        out._backward = backward_fn
        out.requires_grad = any(p.requires_grad for p in parents)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        # never in place: g may alias arrays held elsewhere in the graph
        if self.grad is None:
            self.grad = np.asarray(g, dtype=np.float64).reshape(self.shape)
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    """A trainable leaf."""
    return Tensor(data, name=name, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # only scalar broadcasting exists, so reduce fully or not at all
    if shape == () and g.shape != ():
        return np.asarray(g.sum())
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "add")

    def bw(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return Tensor.from_op(a.data + b.data, "add", (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "sub")

    def bw(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(-g, b.shape))

    return Tensor.from_op(a.data - b.data, "sub", (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor.from_op(a.data * b.data, "mul", (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor.from_op(a.data * c, "scale", (a,), lambda g: a.accumulate(g * c))


def sin(a: Tensor, omega: float = 1.0) -> Tensor:
    """``sin(omega * a)``."""
    return sin_cos(a, omega)[0]


def cos(a: Tensor, omega: float = 1.0) -> Tensor:
    """``cos(omega * a)``."""
    return sin_cos(a, omega)[1]


def sin_cos(a: Tensor, omega: float = 1.0) -> tuple[Tensor, Tensor]:
    """``sin(omega * a)`` and ``cos(omega * a)`` as two nodes sharing one evaluation."""
    omega = float(omega)
    s, c = sincos(a.data * omega if omega != 1.0 else a.data)
    s_node = Tensor.from_op(s, "sin", (a,), lambda g: a.accumulate((g * c) * omega))
    c_node = Tensor.from_op(c, "cos", (a,), lambda g: a.accumulate((g * s) * -omega))
    return s_node, c_node


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors the numpy name
    # subgradient 0 at the kink
    return Tensor.from_op(np.abs(a.data), "abs", (a,), lambda g: a.accumulate(g * np.sign(a.data)))


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor.from_op(s, "sigmoid", (a,), lambda g: a.accumulate(g * s * (1.0 - s)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return Tensor.from_op(a.data @ b.data, "matmul", (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")
    return Tensor.from_op(a.data.T, "transpose", (a,), lambda g: a.accumulate(g.T))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    return Tensor.from_op(a.data.reshape(shape), "reshape", (a,), lambda g: a.accumulate(g.reshape(a.shape)))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ContractError("concat: nothing to concatenate")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: shapes {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        for p, piece in zip(parts, np.split(g, bounds, axis=axis)):
            p.accumulate(piece)

    return Tensor.from_op(data, "concat", parts, bw)


def columns(a: Tensor, start: int, stop: int) -> Tensor:
    """Column slice ``a[:, start:stop]`` of a matrix."""

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        a.accumulate(full)

    return Tensor.from_op(a.data[:, start:stop], "columns", (a,), bw)


def reduce_mean(a: Tensor) -> Tensor:
    n = a.size
    if n == 0:
        raise ContractError("reduce_mean: empty tensor")
    return Tensor.from_op(
        np.asarray(a.data.mean()), "mean", (a,), lambda g: a.accumulate(np.full(a.shape, float(g) / n))
    )


def reduce_sum(a: Tensor) -> Tensor:
    return Tensor.from_op(np.asarray(a.data.sum()), "sum", (a,), lambda g: a.accumulate(np.full(a.shape, float(g))))


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight.T + bias`` for ``x [N, in]``, ``weight [out, in]``, ``bias [1, out]``.

    The bias row is added to every row of the product.
    """
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"affine: cannot apply weight {weight.shape} to {x.shape}")
    if bias.shape != (1, weight.shape[0]):
        raise DimensionError(f"affine: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    out += bias.data

    def bw(g):
        if x.requires_grad:
            x.accumulate(g @ weight.data)
        if weight.requires_grad:
            weight.accumulate(g.T @ x.data)
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=0, keepdims=True))

    return Tensor.from_op(out, "affine", (x, weight, bias), bw)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every trainable leaf reachable from ``loss``.

    Gradients accumulate across calls; use :func:`zero_grad` between
    optimizer steps.  Intermediate gradients are released once propagated.
    """
    if loss.size != 1 or loss.data.ndim > 1:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        g, node.grad = node.grad, None
        node._backward(g)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ContractError("Adam: lr and eps must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ContractError("Adam: betas must lie in (0, 1)")


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update, in place.

    Parameters without a gradient are treated as having a zero gradient.
    """
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ContractError("Adam: parameter list changed between steps")
    grads = []
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != state.m[i].shape:
            raise DimensionError(f"Adam: gradient shape {g.shape} for parameter {p.name or i}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"Adam: non-finite gradient in parameter {p.name or i}")
        grads.append(g)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    """Thin stateful wrapper binding a parameter list to an :class:`AdamState`."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        zero_grad(self.params)

    def step(self) -> None:
        adam_step(self.params, self.state)
