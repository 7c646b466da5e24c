"""Minimal define-by-run reverse-mode autodiff over dense float64 arrays.

Every operation returns a new :class:`Tensor` that remembers its inputs and a
closure mapping the output adjoint to input adjoints. :func:`backward` walks
the recorded graph in reverse topological order.

Broadcasting is deliberately restricted: binary ops accept either equal shapes
or a scalar (0-d / size-1) operand on one side.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "parents", "backward_fn", "op", "name")

    def __init__(self, data, requires_grad: bool = False, *, parents=(), backward_fn=None,
                 op: str = "leaf", name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    # operator sugar
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

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _needs_grad(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    if _needs_grad(*parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
    else:
        out.requires_grad = False
        out.parents = ()
        out.backward_fn = None
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape} "
                         "(only scalar-with-tensor broadcasting is supported)")


def _unbroadcast(g: np.ndarray, like: Tensor) -> np.ndarray:
    if g.shape == like.shape:
        return g
    return np.sum(g).reshape(like.shape)


# --------------------------------------------------------------------------- ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "add")
    out_shape = a.shape if a.data.size >= b.data.size and a.data.ndim >= b.data.ndim else b.shape
    data = (a.data + b.data).reshape(out_shape)

    def backward_fn(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return _make(data, (a, b), backward_fn, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "mul")
    out_shape = a.shape if a.data.size >= b.data.size and a.data.ndim >= b.data.ndim else b.shape
    data = (a.data * b.data).reshape(out_shape)

    def backward_fn(g):
        return _unbroadcast(g * b.data, a), _unbroadcast(g * a.data, b)

    return _make(data, (a, b), backward_fn, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: non-positive entry")
    data = np.log(a.data)
    return _make(data, (a,), lambda g: (g / a.data,), "log")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data == 0):
        raise DomainError("reciprocal: zero entry")
    data = 1.0 / a.data
    return _make(data, (a,), lambda g: (-g * data * data,), "reciprocal")


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; the gradient is zero where clipping is active."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def maximum_const(a, floor: float) -> Tensor:
    """max(a, floor) entrywise with a constant floor; zero gradient below it."""
    a = as_tensor(a)
    keep = a.data >= floor
    return _make(np.where(keep, a.data, floor), (a,), lambda g: (g * keep,), "maximum")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} x {b.shape})")
    data = a.data @ b.data

    def backward_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), backward_fn, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a 2-d tensor; use permute")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def permute(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.ascontiguousarray(np.transpose(a.data, axes))
    return _make(data, (a,), lambda g: (np.transpose(g, inv),), "permute")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(tuple(shape)), (a,), lambda g: (g.reshape(old),), "reshape")


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    data = np.sum(a.data, axis=axis)
    old = a.shape

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, old).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), old).copy(),)

    return _make(np.asarray(data, dtype=np.float64), (a,), backward_fn, "sum")


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def concat(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in ts)
    data = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, ts, backward_fn, "concat")


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name over the entrywise ops: add, mul, exp, log, neg, square."""
    table = {"add": add, "mul": mul, "exp": exp, "log": log, "neg": neg, "square": square}
    try:
        fn = table[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# --------------------------------------------------------------------- backward

def _topo_order(root: Tensor) -> list[Tensor]:
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


def backward(root: Tensor, leaves: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Accumulate d(root)/d(leaf) for every leaf that requires grad.

    Returns a mapping leaf -> gradient array and also stores it on ``leaf.grad``.
    Leaves passed explicitly but not reached by the graph get a zero gradient.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    found: dict[int, Tensor] = {}
    for node in reversed(_topo_order(root)):
        g = grads.pop(id(node), None)
        if node.is_leaf:
            if node.requires_grad:
                found[id(node)] = node
                node.grad = g if g is not None else np.zeros_like(node.data)
            continue
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    result = {t: t.grad for t in found.values()}
    if leaves is not None:
        for leaf in leaves:
            if leaf not in result:
                leaf.grad = np.zeros_like(leaf.data)
                result[leaf] = leaf.grad
    return result


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5,
               max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max over entries of |analytic - central difference| / max(1, |analytic|).

    ``f`` rebuilds the graph from the current parameter values on each call.
    With ``max_entries`` a random subset of entries per parameter is probed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    root = f()
    grads = backward(root, params)
    worst = 0.0
    for p in params:
        analytic = grads[p]
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = rng if rng is not None else np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * step)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
