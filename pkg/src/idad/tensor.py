"""Dense float64 tensors with reverse-mode automatic differentiation.

A `Tape` records every differentiable operation performed while it is
active; `Tape.backward` replays the records in reverse to accumulate
gradients of a scalar with respect to any participating leaf tensor.
Operations executed with no active tape are plain numpy forward passes,
which is the inference fast path.

Broadcasting in elementwise ops is restricted to trailing-aligned suffix
expansion (a bias of shape (m,) may combine with a batch of shape (B, m));
every other shape coercion must go through an explicit `broadcast_to`,
`reshape` or `transpose`, which keeps the backward pass unambiguous.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

__all__ = [
    "Tensor",
    "Tape",
    "AdamState",
    "adam_step",
    "clip_global_norm",
    "finite_diff_grad",
    "active_tape",
    "OP_KINDS",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


# ---------------------------------------------------------------------------
# Tape machinery


class _Node:
    __slots__ = ("kind", "out", "parents", "grad_fn", "tape")

    def __init__(self, kind, out, parents, grad_fn, tape):
        self.kind = kind
        self.out = out
        self.parents = parents
        self.grad_fn = grad_fn
        self.tape = tape


_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Append-only record of operations; insertion order is topological."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, root: "Tensor") -> dict["Tensor", Array]:
        """Accumulate d(root)/d(leaf) for every reachable leaf that
        requires grad. Visits each node exactly once, in reverse
        insertion order. `root` must be a scalar recorded on this tape.
        """
        if root.data.shape != ():
            raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
        if root.node is None or root.node.tape is not self:
            raise ValueError("backward root is not recorded on this tape")
        pending: dict[int, Array] = {id(root): np.ones((), dtype=np.float64)}
        leaf_grads: dict[Tensor, Array] = {}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.node is not None and parent.node.tape is self:
                    key = id(parent)
                    if key in pending:
                        pending[key] = pending[key] + pg
                    else:
                        pending[key] = pg
                else:
                    if parent in leaf_grads:
                        leaf_grads[parent] = leaf_grads[parent] + pg
                    else:
                        leaf_grads[parent] = np.array(pg, dtype=np.float64, copy=True)
        return leaf_grads


class Tensor:
    """Row-major float64 array plus grad-tracking metadata."""

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node: _Node | None = None

    # -- introspection ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad})"

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negate(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def parameter(data, requires_grad: bool = True) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _apply(kind: str, out_data: Array, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    tape = active_tape()
    out = Tensor(out_data)
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        node = _Node(kind, out, parents, grad_fn, tape)
        tape.nodes.append(node)
        out.node = node
    return out


# ---------------------------------------------------------------------------
# Broadcasting helpers (suffix-aligned only)


def _check_suffix(sa: tuple[int, ...], sb: tuple[int, ...], kind: str) -> tuple[int, ...]:
    if sa == sb:
        return sa
    if sa == ():
        return sb
    if sb == ():
        return sa
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return sb
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return sa
    raise ShapeError(f"{kind}: shapes {sa} and {sb} do not align (suffix broadcasting only)")


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ps) in enumerate(zip(g.shape, shape)) if ps == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _require_finite(kind: str, data: Array) -> Array:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{kind}: non-finite values in result")
    return data


# ---------------------------------------------------------------------------
# Elementwise and reduction ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a.shape, b.shape, "add")
    out = a.data + b.data

    def grad_fn(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _apply("add", out, (a, b), grad_fn)


def subtract(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a.shape, b.shape, "subtract")
    out = a.data - b.data

    def grad_fn(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _apply("subtract", out, (a, b), grad_fn)


def multiply(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a.shape, b.shape, "multiply")
    out = a.data * b.data

    def grad_fn(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return _apply("multiply", out, (a, b), grad_fn)


def divide(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix(a.shape, b.shape, "divide")
    if np.any(b.data == 0.0):
        raise FloatingPointError("divide: division by zero")
    out = a.data / b.data

    def grad_fn(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _apply("divide", out, (a, b), grad_fn)


def negate(a) -> Tensor:
    a = _as_tensor(a)

    def grad_fn(g):
        return (-g,)

    return _apply("negate", -a.data, (a,), grad_fn)


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    exponent = float(exponent)
    if exponent != round(exponent) and np.any(a.data < 0.0):
        raise FloatingPointError("power: negative base with non-integer exponent")
    with np.errstate(over="ignore", divide="ignore"):
        out = _require_finite("power", a.data ** exponent)

    def grad_fn(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _apply("power", out, (a,), grad_fn)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data < 0.0):
        raise FloatingPointError("sqrt: negative input")
    out = np.sqrt(a.data)

    def grad_fn(g):
        return (g * 0.5 / np.sqrt(a.data),)

    return _apply("sqrt", out, (a,), grad_fn)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out = _require_finite("exp", np.exp(a.data))

    def grad_fn(g):
        return (g * out,)

    return _apply("exp", out, (a,), grad_fn)


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise FloatingPointError("log: non-positive input")
    out = np.log(a.data)

    def grad_fn(g):
        return (g / a.data,)

    return _apply("log", out, (a,), grad_fn)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def grad_fn(g):
        return (g * (a.data > 0.0),)

    return _apply("relu", out, (a,), grad_fn)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _apply("sigmoid", out, (a,), grad_fn)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def grad_fn(g):
        return (g * (1.0 - out * out),)

    return _apply("tanh", out, (a,), grad_fn)


def clamp_max(a, hi: float) -> Tensor:
    """Elementwise min(a, hi); gradient is blocked where the cap binds."""
    a = _as_tensor(a)
    out = np.minimum(a.data, hi)

    def grad_fn(g):
        return (g * (a.data <= hi),)

    return _apply("clamp_max", out, (a,), grad_fn)


def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    return axis % ndim


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _apply("sum", out, (a,), grad_fn)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    count = a.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.shape).copy(),)

    return _apply("mean", out, (a,), grad_fn)


def logsumexp(a, axis: int, keepdims: bool = False) -> Tensor:
    """Overflow-safe log(sum(exp(a))) along `axis`."""
    a = _as_tensor(a)
    axis_n = _norm_axis(axis, a.ndim)
    shift = np.max(a.data, axis=axis_n, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    expd = np.exp(a.data - shift)
    total = expd.sum(axis=axis_n, keepdims=True)
    out_k = np.log(total) + shift
    out = out_k if keepdims else np.squeeze(out_k, axis=axis_n)
    soft = expd / total

    def grad_fn(g):
        gg = g if keepdims else np.expand_dims(g, axis_n)
        return (gg * soft,)

    return _apply("logsumexp", out, (a,), grad_fn)


def softmax(a, axis: int) -> Tensor:
    a = _as_tensor(a)
    axis_n = _norm_axis(axis, a.ndim)
    shift = np.max(a.data, axis=axis_n, keepdims=True)
    expd = np.exp(a.data - shift)
    out = expd / expd.sum(axis=axis_n, keepdims=True)

    def grad_fn(g):
        inner = (g * out).sum(axis=axis_n, keepdims=True)
        return (out * (g - inner),)

    return _apply("softmax", out, (a,), grad_fn)


# ---------------------------------------------------------------------------
# Shape and indexing ops


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul: operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _apply("matmul", out, (a, b), grad_fn)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(a.shape),)

    return _apply("reshape", out, (a,), grad_fn)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def grad_fn(g):
        return (g.transpose(inverse),)

    return _apply("transpose", out, (a,), grad_fn)


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as err:
        raise ShapeError(f"broadcast_to: {a.shape} -> {shape}") from err

    def grad_fn(g):
        return (_unbroadcast(g, a.shape),)

    return _apply("broadcast", out, (a,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    axis_n = _norm_axis(axis, tensors[0].ndim)
    out = np.concatenate([t.data for t in tensors], axis=axis_n)
    sizes = [t.shape[axis_n] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        pieces = []
        for i in range(len(sizes)):
            sl = [slice(None)] * g.ndim
            sl[axis_n] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _apply("concat", out, tuple(tensors), grad_fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack equal-shaped tensors along a new axis (reshape + concat)."""
    tensors = [_as_tensor(t) for t in tensors]
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else axis + t.ndim + 1, 1)
        expanded.append(reshape(t, shape))
    return concat(expanded, axis=axis)


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather slices of `a` at integer `indices` along `axis`."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, idx, axis=axis)

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        if axis == 0:
            np.add.at(ga, idx, g)
        else:
            ga_m = np.moveaxis(ga, axis, 0)
            np.add.at(ga_m, idx, np.moveaxis(g, axis, 0))
        return (ga,)

    return _apply("take", out, (a,), grad_fn)


def select_pairs(a, rows, cols) -> Tensor:
    """Gather a[rows[i], cols[i]] from a rank-2 tensor into a vector."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("select_pairs: operand must have rank 2")
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    out = a.data[r, c]

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (r, c), g)
        return (ga,)

    return _apply("select_pairs", out, (a,), grad_fn)


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    """Adam moments and hyperparameters; one slot pair per named tensor."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, Array], state: AdamState) -> None:
    """One bias-corrected Adam descent step, updating `params` in place.

    Parameters without a gradient entry are left untouched. NaN
    gradients abort the step rather than corrupting the parameters.
    """
    for name, g in grads.items():
        if np.any(np.isnan(g)):
            raise FloatingPointError(f"adam_step: NaN gradient for '{name}'")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if p.shape != np.shape(g):
            raise ShapeError(f"adam_step: gradient shape {np.shape(g)} != param shape {p.shape} for '{name}'")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_global_norm(grads: dict[str, Array], max_norm: float) -> tuple[dict[str, Array], float]:
    """Scale all gradients so their joint L2 norm is at most `max_norm`."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total <= max_norm or total == 0.0:
        return grads, total
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}, total


# ---------------------------------------------------------------------------
# Finite-difference oracle


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, h: float = 1e-5) -> Array:
    """Central-difference gradient of scalar `f` at `x`, one probe pair
    per coordinate. Used as the independent check on `Tape.backward`.
    """
    if h <= 0.0:
        raise ValueError("finite_diff_grad: step size must be positive")
    base = np.array(x.data, dtype=np.float64)
    grad = np.zeros_like(base)
    flat_b = base.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_b.size):
        orig = flat_b[i]
        flat_b[i] = orig + h
        up = float(f(Tensor(base)))
        flat_b[i] = orig - h
        down = float(f(Tensor(base)))
        flat_b[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError("finite_diff_grad: non-finite value at probe point")
        flat_g[i] = (up - down) / (2.0 * h)
    return grad


# Op registry used by the gradient-vs-finite-difference sweeps.
OP_KINDS = (
    "add",
    "subtract",
    "multiply",
    "divide",
    "matmul",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "power",
    "sum",
    "mean",
    "logsumexp",
    "softmax",
    "concat",
    "take",
    "select_pairs",
    "broadcast",
    "reshape",
    "transpose",
    "negate",
    "clamp_max",
)
