"""
Minimal reverse-mode differentiation over dense numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them. Calling
:func:`backward` on a scalar sorts the recorded graph topologically and
replays those closures in reverse.

The op set is deliberately small: matmul, bias addition, relu, log_softmax,
exp/log, elementwise products, row gathering, reductions and a gradient
reversal transform. That covers small MLP classifiers, cross-entropy and KL
losses, and a domain-adversarial discriminator.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """Raised when an operation receives or produces non-finite values."""


class Tensor:
    """Dense float64 array that can take part in gradient recording."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _op: str = ""):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self._op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.shape)
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    # operator sugar
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str,
            rule: Callable[[np.ndarray], tuple]) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (), _op=op)
    if needs:
        out._backward = rule
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # only the bias-style broadcast (leading axes, or size-1 axes) is supported
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a ``(m, k)`` and a ``(k, n)`` tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def rule(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), "matmul", rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum. ``b`` may be a bias row broadcast over the batch, or a scalar."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}") from exc
    if out.shape not in (a.shape, b.shape):
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")

    def rule(g):
        return _sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)

    return _result(out, (a, b), "add", rule)


def neg(x: Tensor) -> Tensor:
    x = as_tensor(x)

    def rule(g):
        return (-g,)

    return _result(-x.data, (x,), "neg", rule)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product of equal-shaped tensors, or scaling by a scalar."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}")
    out = a.data * b.data

    def rule(g):
        return _sum_to_shape(g * b.data, a.shape), _sum_to_shape(g * a.data, b.shape)

    return _result(out, (a, b), "mul", rule)


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the subgradient at 0 is taken as 0."""
    x = as_tensor(x)
    mask = x.data > 0

    def rule(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0.0), (x,), "relu", rule)


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def rule(g):
        return (g * out,)

    return _result(out, (x,), "exp", rule)


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log of a non-positive value")

    def rule(g):
        return (g / x.data,)

    return _result(np.log(x.data), (x,), "log", rule)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """``max(x, floor)``; gradient passes only where ``x > floor``."""
    x = as_tensor(x)
    mask = x.data > floor

    def rule(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, floor), (x,), "clamp_min", rule)


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log-softmax of a ``(batch, K)`` tensor, computed with max subtraction."""
    logits = as_tensor(logits)
    z = logits.data
    if z.ndim != 2 or z.shape[1] < 2:
        raise DimensionError(f"log_softmax expects (batch, K>=2), got {logits.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericError("log_softmax received non-finite logits")
    shifted = z - z.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    soft = np.exp(out)

    def rule(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return _result(out, (logits,), "log_softmax", rule)


def softmax(logits: Tensor) -> Tensor:
    return exp(log_softmax(logits))


def gather(x: Tensor, index) -> Tensor:
    """Pick ``x[i, index[i]]`` for every row, giving a ``(batch,)`` tensor."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if x.data.ndim != 2 or index.shape != (x.shape[0],):
        raise DimensionError(f"gather needs (batch, K) and (batch,), got {x.shape} and {index.shape}")
    rows = np.arange(x.shape[0])

    def rule(g):
        full = np.zeros_like(x.data)
        full[rows, index] = g
        return (full,)

    return _result(x.data[rows, index], (x,), "gather", rule)


def take_rows(x: Tensor, rows) -> Tensor:
    """Select a subset of rows (used for small-loss sample selection)."""
    x = as_tensor(x)
    rows = np.asarray(rows, dtype=np.int64)

    def rule(g):
        full = np.zeros_like(x.data)
        np.add.at(full, rows, g)
        return (full,)

    return _result(x.data[rows], (x,), "take_rows", rule)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = np.cumsum([p.shape[0] for p in parts])[:-1]

    def rule(g):
        return tuple(np.split(g, sizes, axis=0))

    return _result(np.concatenate([p.data for p in parts], axis=0), parts, "concat_rows", rule)


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def rule(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape),)

    return _result(out, (x,), "sum", rule)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def grad_reverse(x: Tensor, lam: float) -> Tensor:
    """Identity in the forward pass; scales the incoming gradient by ``-lam`` on the way back."""
    if lam < 0:
        raise ValueError(f"grad_reverse needs lambda >= 0, got {lam}")
    x = as_tensor(x)

    def rule(g):
        return (-lam * g,)

    return _result(x.data, (x,), "grad_reverse", rule)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires grad and feeds ``loss``.

    Gradients accumulate across calls; zero them between batches.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node._accumulate(g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if parent.requires_grad:
                prev = pending.get(id(parent))
                pending[id(parent)] = pg if prev is None else prev + pg


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], eta: float,
             momentum: float, velocity: Sequence[np.ndarray]) -> None:
    """Classical momentum update, in place: ``v = momentum*v + g``, ``p -= eta*v``."""
    if not (len(params) == len(grads) == len(velocity)):
        raise DimensionError(
            f"sgd_step got {len(params)} params, {len(grads)} grads, {len(velocity)} velocities")
    for p, g, v in zip(params, grads, velocity):
        if p.shape != np.shape(g) or p.shape != v.shape:
            raise DimensionError(
                f"sgd_step shape mismatch: param {p.shape}, grad {np.shape(g)}, velocity {v.shape}")
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v += g
        p.data -= eta * v
