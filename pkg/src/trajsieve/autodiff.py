"""Dense-tensor computation graph with reverse-mode differentiation.

Values are float64 numpy arrays. Each operation returns a new ``Tensor``
whose parent links and backward closure implicitly form the acyclic graph;
``Tensor.backward()`` walks that graph once in reverse topological order and
then consumes it, so a second backward without a fresh forward is rejected.

Ops accept 2-D operands and, where the models need it, a leading batch axis
(3-D). Broadcasting is numpy-style; gradients of broadcast operands are
summed back over the expanded axes.

Every op reports its forward floating-point cost to any active
``count_flops()`` context. Counts follow the usual conventions: a matmul of
(m, k) by (k, n) is 2*m*k*n, elementwise ops cost one per output element,
and data movement (concat, slice, reshape, transpose, masked-fill) is free.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError, DomainError

LAYER_NORM_EPS = 1e-5
MASK_FILL_VALUE = -1e9


class FlopCounter:
    """Accumulates forward-pass floating-point operation counts."""

    def __init__(self) -> None:
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


_ACTIVE_COUNTERS: list[FlopCounter] = []


@contextmanager
def count_flops():
    """Context manager that tallies the FLOPs of every op run inside it."""
    counter = FlopCounter()
    _ACTIVE_COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _ACTIVE_COUNTERS.remove(counter)


def _tally(n: int) -> None:
    if _ACTIVE_COUNTERS:
        for counter in _ACTIVE_COUNTERS:
            counter.add(n)


class Tensor:
    """A node in the computation graph.

    ``grad`` is allocated eagerly (zeros) for leaves created with
    ``requires_grad=True`` so that untouched leaves read as zero gradient
    after a backward pass; intermediate nodes allocate lazily.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd", "_tag", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _bwd=None, _tag="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if (requires_grad and _tag == "leaf") else None
        self._parents = _parents
        self._bwd = _bwd
        self._tag = _tag
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item: tensor has {self.data.size} elements")
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss; consumes the graph."""
        if self.data.size != 1:
            raise ContractError(f"backward: loss must be scalar, got shape {self.data.shape}")
        order = _toposort(self)
        for node in order:
            if node._parents and node._consumed:
                raise ContractError("backward: graph already consumed; run a fresh forward pass")
        self.accumulate_grad(np.ones_like(self.data))
        for node in order:
            if node._bwd is not None:
                node._bwd(node.grad if node.grad is not None else np.zeros_like(node.data))
                node._bwd = None
            if node._parents:
                node._consumed = True

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, tag={self._tag}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order via iterative post-order DFS."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _make(data, parents, bwd, tag) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires, _parents=tuple(parents) if requires else (),
                 _bwd=bwd if requires else None, _tag=tag)
    return out


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul: operands must be >=2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)
    m, k = a.shape[-2], a.shape[-1]
    n = b.shape[-1]
    batch = int(np.prod(data.shape[:-2])) if data.ndim > 2 else 1
    _tally(2 * batch * m * k * n)

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accumulate_grad(_unbroadcast(gb, b.shape))

    return _make(data, (a, b), bwd, "matmul")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc
    _tally(data.size)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from exc
    _tally(data.size)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _make(data, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from exc
    _tally(data.size)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError as exc:
        raise DimensionError(f"div: shapes {a.shape} and {b.shape} do not broadcast") from exc
    _tally(data.size)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), bwd, "div")


def neg(a) -> Tensor:
    return scale(a, -1.0)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    data = a.data * c
    _tally(data.size)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * c)

    return _make(data, (a,), bwd, "scale")


def concat(parts, axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat: no operands")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[p.shape for p in parts]}") from exc
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p.accumulate_grad(g[tuple(idx)])

    return _make(data, tuple(parts), bwd, "concat")


def take(a, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice along one axis; gradient scatters back."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    data = a.data[tuple(idx)].copy()

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[tuple(idx)] = g
            a.accumulate_grad(full)

    return _make(data, (a,), bwd, "take")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from exc

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape))

    return _make(data, (a,), bwd, "reshape")


def swap_axes(a, ax1: int, ax2: int) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim < 2:
        raise DimensionError(f"swap_axes: need >=2-D, got {a.shape}")
    data = np.swapaxes(a.data, ax1, ax2).copy()

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.swapaxes(g, ax1, ax2))

    return _make(data, (a,), bwd, "swap_axes")


def swap_last_axes(a) -> Tensor:
    return swap_axes(a, -1, -2)


def row_softmax(a) -> Tensor:
    """Softmax along the last axis with row-max subtraction for stability.

    Costed at 3 per element (exp, sum, divide); the max subtraction is
    numerical plumbing and is not counted as arithmetic.
    """
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)
    _tally(3 * data.size)

    def bwd(g):
        if a.requires_grad:
            dot = (g * data).sum(axis=-1, keepdims=True)
            a.accumulate_grad((g - dot) * data)

    return _make(data, (a,), bwd, "row-softmax")


def layer_norm(a, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    a = _as_tensor(a)
    if a.data.shape[-1] < 1:
        raise DimensionError(f"layer-norm: empty last axis in {a.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = centered * inv
    _tally(7 * a.data.size)

    def bwd(g):
        if a.requires_grad:
            g_mean = g.mean(axis=-1, keepdims=True)
            gy_mean = (g * data).mean(axis=-1, keepdims=True)
            a.accumulate_grad((g - g_mean - data * gy_mean) * inv)

    return _make(data, (a,), bwd, "layer-norm")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # exp overflow on very negative inputs yields inf and then a clean 0.
    with np.errstate(over="ignore"):
        data = 1.0 / (1.0 + np.exp(-a.data))
    _tally(4 * data.size)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * data * (1.0 - data))

    return _make(data, (a,), bwd, "sigmoid")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)
    _tally(data.size)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0.0))

    return _make(data, (a,), bwd, "relu")


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: non-positive input")
    data = np.log(a.data)
    _tally(data.size)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g / a.data)

    return _make(data, (a,), bwd, "log")


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input was inside."""
    a = _as_tensor(a)
    data = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)
    _tally(data.size)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * inside)

    return _make(data, (a,), bwd, "clamp")


def masked_fill(a, mask, value: float = MASK_FILL_VALUE) -> Tensor:
    """Write ``value`` where ``mask`` is True; gradient is zero there."""
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    try:
        fill = np.broadcast_to(mask, a.data.shape)
    except ValueError as exc:
        raise DimensionError(
            f"masked-fill: mask shape {mask.shape} does not broadcast to {a.shape}"
        ) from exc
    data = np.where(fill, value, a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.where(fill, 0.0, g))

    return _make(data, (a,), bwd, "masked-fill")


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    data = np.asarray(a.data.mean())
    n = a.data.size
    _tally(n)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, float(g) / n))

    return _make(data, (a,), bwd, "mean")


def mean_axis(a, axis: int) -> Tensor:
    a = _as_tensor(a)
    data = a.data.mean(axis=axis)
    n = a.data.shape[axis]
    _tally(a.data.size)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.repeat(np.expand_dims(g, axis) / n, n, axis=axis))

    return _make(data, (a,), bwd, "mean-axis")


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    data = np.asarray(a.data.sum())
    _tally(a.data.size)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, float(g)))

    return _make(data, (a,), bwd, "sum")


def sum_last(a, keepdims: bool = True) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=-1, keepdims=keepdims)
    _tally(a.data.size)

    def bwd(g):
        if a.requires_grad:
            gg = g if keepdims else np.expand_dims(g, -1)
            a.accumulate_grad(np.broadcast_to(gg, a.data.shape).copy())

    return _make(data, (a,), bwd, "sum-last")


def variance(a) -> Tensor:
    """Population variance over all elements."""
    a = _as_tensor(a)
    n = a.data.size
    if n < 1:
        raise DimensionError("variance: empty input")
    mu = a.data.mean()
    centered = a.data - mu
    data = np.asarray((centered * centered).mean())
    _tally(3 * n)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(float(g) * 2.0 * centered / n)

    return _make(data, (a,), bwd, "variance")


def straight_through(soft, threshold: float = 0.5) -> Tensor:
    """Binarize on the forward pass; pass the gradient through unchanged."""
    soft = _as_tensor(soft)
    data = (soft.data > threshold).astype(np.float64)
    _tally(data.size)

    def bwd(g):
        if soft.requires_grad:
            soft.accumulate_grad(g)

    return _make(data, (soft,), bwd, "straight-through")


# Registry keyed by the canonical op tags; extra entries cover the
# convenience primitives the models use beyond the core set.
PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "scale": scale,
    "concat": concat,
    "row-softmax": row_softmax,
    "layer-norm": layer_norm,
    "sigmoid": sigmoid,
    "relu": relu,
    "mean": mean_all,
    "variance": variance,
    "log": log,
    "masked-fill": masked_fill,
    "take": take,
    "reshape": reshape,
    "clamp": clamp,
    "straight-through": straight_through,
}


def primitive_forward(op_tag: str, *inputs, **kwargs) -> Tensor:
    """Dispatch a primitive by tag; unknown tags raise ``ContractError``."""
    try:
        fn = PRIMITIVES[op_tag]
    except KeyError:
        raise ContractError(f"unknown primitive: {op_tag!r}") from None
    return fn(*inputs, **kwargs)


def grad_check(fn, leaves, step: float = 1e-5, tolerance: float = 1e-4) -> float:
    """Compare reverse-mode gradients of ``fn(*leaves)`` to central differences.

    ``fn`` must rebuild its graph on each call and return a scalar Tensor.
    Relative error uses max(|analytic|, |numeric|, 1e-3) as the denominator
    so near-zero entries stay meaningful. Returns the worst relative error;
    raises ``ContractError`` if it exceeds ``tolerance``.
    """
    for leaf in leaves:
        leaf.zero_grad()
    loss = fn(*leaves)
    loss.backward()
    analytic = [leaf.grad.copy() for leaf in leaves]
    worst = 0.0
    for k, (leaf, grad) in enumerate(zip(leaves, analytic)):
        flat = leaf.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn(*leaves).item()
            flat[i] = orig - step
            down = fn(*leaves).item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            rel = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), 1e-3)
            worst = max(worst, rel)
            if rel > tolerance:
                raise ContractError(
                    f"grad-check: leaf {k} entry {i}: analytic {gflat[i]:.8g} "
                    f"vs numeric {numeric:.8g} (rel {rel:.3g})"
                )
    return worst
