"""Reverse-mode automatic differentiation over dense float64 arrays.

The computation graph recorded through the primitives doubles as the tape:
tensors are created in topological order, each node caches the inputs its
backward rule needs inside a closure, and :func:`backward` walks the nodes
in exact reverse topological order, accumulating gradients additively at
fan-out points.

Only the primitives the downstream models need are provided: matrix
multiply, elementwise add/multiply (with scalar broadcast), concatenate,
sub-vector slicing, sigmoid / tanh / relu / leaky-relu, softmax, stack,
sum / mean reductions and mean-squared-error. Everything is 64-bit and
deterministic: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    """Raised when primitive operands have incompatible shapes."""


class NumericError(ArithmeticError):
    """Raised when a primitive produces NaN or Inf values."""


class ContractError(ValueError):
    """Raised when an autodiff API is called outside its contract."""


class Tensor:
    """A node of the computation graph: float64 values plus backward hooks.

    ``_parents`` and ``_vjps`` are parallel tuples; vjp ``i`` maps the
    upstream gradient to the gradient contribution of parent ``i``.
    """

    __slots__ = ("values", "requires_grad", "grad", "name", "_parents", "_vjps")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"<Tensor{tag} shape={self.values.shape}>"

    # Operator sugar; plain numbers become constants.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def constant(values, name: str | None = None) -> Tensor:
    """A tensor that never receives a gradient."""
    return Tensor(values, requires_grad=False, name=name)


def param(values, name: str | None = None) -> Tensor:
    """A learnable tensor (gradient target)."""
    return Tensor(values, requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def from_op(values: np.ndarray, parents: Sequence[Tensor],
            vjps: Sequence[Callable[[np.ndarray], np.ndarray]],
            name: str | None = None) -> Tensor:
    """Record one primitive application and return its output node.

    Public so tests and extensions can define custom primitives; all
    built-in primitives funnel through here, which is where the
    finite-values invariant is enforced.
    """
    out = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite values produced by {name or 'primitive'}")
    t = Tensor(out, name=name)
    t._parents = tuple(parents)
    t._vjps = tuple(vjps)
    return t


# ---------------------------------------------------------------------------
# primitives


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatchError(msg)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2-D @ 2-D, 2-D @ 1-D and 1-D @ 2-D operands."""
    av, bv = a.values, b.values
    _require(av.ndim in (1, 2) and bv.ndim in (1, 2) and not (av.ndim == bv.ndim == 1),
             f"matmul expects matrix/vector operands, got {av.shape} @ {bv.shape}")
    if av.ndim == 2 and bv.ndim == 2:
        _require(av.shape[1] == bv.shape[0], f"matmul shape mismatch {av.shape} @ {bv.shape}")
        out = av @ bv
        vjps = (lambda g: g @ bv.T, lambda g: av.T @ g)
    elif av.ndim == 2:  # matrix @ vector
        _require(av.shape[1] == bv.shape[0], f"matmul shape mismatch {av.shape} @ {bv.shape}")
        out = av @ bv
        vjps = (lambda g: np.outer(g, bv), lambda g: av.T @ g)
    else:  # vector @ matrix
        _require(av.shape[0] == bv.shape[0], f"matmul shape mismatch {av.shape} @ {bv.shape}")
        out = av @ bv
        vjps = (lambda g: bv @ g, lambda g: np.outer(av, g))
    return from_op(out, (a, b), vjps, "matmul")


def _binary_shapes(av: np.ndarray, bv: np.ndarray, opname: str) -> None:
    # Same shape, or one side a scalar; no other broadcasting.
    if av.shape != bv.shape and av.ndim != 0 and bv.ndim != 0:
        raise ShapeMismatchError(f"{opname} shape mismatch {av.shape} vs {bv.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return np.sum(g) if shape == () else g


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a.values, b.values, "add")
    return from_op(a.values + b.values, (a, b),
                   (lambda g: _unbroadcast(g, a.values.shape),
                    lambda g: _unbroadcast(g, b.values.shape)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a.values, b.values, "sub")
    return from_op(a.values - b.values, (a, b),
                   (lambda g: _unbroadcast(g, a.values.shape),
                    lambda g: _unbroadcast(-g, b.values.shape)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    _binary_shapes(av, bv, "mul")
    return from_op(av * bv, (a, b),
                   (lambda g: _unbroadcast(g * bv, av.shape),
                    lambda g: _unbroadcast(g * av, bv.shape)), "mul")


def neg(a: Tensor) -> Tensor:
    return from_op(-a.values, (a,), (lambda g: -g,), "neg")


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors in order."""
    parts = [_as_tensor(p) for p in parts]
    _require(len(parts) > 0, "concat of zero tensors")
    for p in parts:
        _require(p.values.ndim == 1, f"concat expects 1-D parts, got shape {p.values.shape}")
    sizes = [p.values.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)
    out = np.concatenate([p.values for p in parts])

    def make_vjp(i: int):
        return lambda g: g[offsets[i]:offsets[i + 1]]

    return from_op(out, parts, tuple(make_vjp(i) for i in range(len(parts))), "concat")


def stack(scalars: Sequence[Tensor]) -> Tensor:
    """Stack scalar tensors into a 1-D vector."""
    scalars = [_as_tensor(s) for s in scalars]
    _require(len(scalars) > 0, "stack of zero tensors")
    for s in scalars:
        _require(s.values.ndim == 0, f"stack expects scalars, got shape {s.values.shape}")
    out = np.array([s.values for s in scalars])

    def make_vjp(i: int):
        return lambda g: np.asarray(g[i])

    return from_op(out, scalars, tuple(make_vjp(i) for i in range(len(scalars))), "stack")


def subvec(a: Tensor, start: int, length: int) -> Tensor:
    """Extract the contiguous sub-vector a[start : start + length]."""
    _require(a.values.ndim == 1, f"subvec expects a 1-D tensor, got shape {a.values.shape}")
    n = a.values.shape[0]
    if start < 0 or length < 0 or start + length > n:
        raise ShapeMismatchError(f"subvec [{start}:{start + length}] out of range for length {n}")

    def vjp(g: np.ndarray) -> np.ndarray:
        out = np.zeros(n)
        out[start:start + length] = g
        return out

    return from_op(a.values[start:start + length], (a,), (vjp,), "subvec")


def stack_columns(vecs: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length as the columns of a matrix."""
    vecs = [_as_tensor(v) for v in vecs]
    _require(len(vecs) > 0, "stack_columns of zero tensors")
    n = vecs[0].values.shape[0] if vecs[0].values.ndim == 1 else -1
    for v in vecs:
        _require(v.values.ndim == 1 and v.values.shape[0] == n,
                 f"stack_columns expects equal-length 1-D parts, got {v.values.shape}")
    out = np.stack([v.values for v in vecs], axis=1)

    def make_vjp(i: int):
        return lambda g: g[:, i]

    return from_op(out, vecs, tuple(make_vjp(i) for i in range(len(vecs))), "stack_columns")


def column(a: Tensor, j: int) -> Tensor:
    """Extract column j of a matrix as a vector."""
    _require(a.values.ndim == 2, f"column expects a matrix, got shape {a.values.shape}")
    rows, cols = a.values.shape
    if not 0 <= j < cols:
        raise ShapeMismatchError(f"column {j} out of range for {cols} columns")

    def vjp(g: np.ndarray) -> np.ndarray:
        out = np.zeros((rows, cols))
        out[:, j] = g
        return out

    return from_op(a.values[:, j], (a,), (vjp,), "column")


def row(a: Tensor, i: int) -> Tensor:
    """Extract row i of a matrix as a vector."""
    _require(a.values.ndim == 2, f"row expects a matrix, got shape {a.values.shape}")
    rows, cols = a.values.shape
    if not 0 <= i < rows:
        raise ShapeMismatchError(f"row {i} out of range for {rows} rows")

    def vjp(g: np.ndarray) -> np.ndarray:
        out = np.zeros((rows, cols))
        out[i, :] = g
        return out

    return from_op(a.values[i, :], (a,), (vjp,), "row")


def rowslice(a: Tensor, start: int, length: int) -> Tensor:
    """Extract a contiguous row range of a matrix."""
    _require(a.values.ndim == 2, f"rowslice expects a matrix, got shape {a.values.shape}")
    rows, cols = a.values.shape
    if start < 0 or length < 0 or start + length > rows:
        raise ShapeMismatchError(
            f"rowslice [{start}:{start + length}] out of range for {rows} rows")

    def vjp(g: np.ndarray) -> np.ndarray:
        out = np.zeros((rows, cols))
        out[start:start + length, :] = g
        return out

    return from_op(a.values[start:start + length, :], (a,), (vjp,), "rowslice")


def colbroadcast(v: Tensor, cols: int) -> Tensor:
    """Tile a vector as ``cols`` identical columns."""
    _require(v.values.ndim == 1, f"colbroadcast expects a vector, got shape {v.values.shape}")
    _require(cols > 0, "colbroadcast needs at least one column")
    out = np.repeat(v.values[:, None], cols, axis=1)
    return from_op(out, (v,), (lambda g: g.sum(axis=1),), "colbroadcast")


def vstack(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate matrices along rows (equal column counts)."""
    parts = [_as_tensor(p) for p in parts]
    _require(len(parts) > 0, "vstack of zero tensors")
    cols = parts[0].values.shape[1] if parts[0].values.ndim == 2 else -1
    for p in parts:
        _require(p.values.ndim == 2 and p.values.shape[1] == cols,
                 f"vstack expects matrices with {cols} columns, got {p.values.shape}")
    sizes = [p.values.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)
    out = np.concatenate([p.values for p in parts], axis=0)

    def make_vjp(i: int):
        return lambda g: g[offsets[i]:offsets[i + 1], :]

    return from_op(out, parts, tuple(make_vjp(i) for i in range(len(parts))), "vstack")


def outer_add(u: Tensor, v: Tensor) -> Tensor:
    """Matrix of all pairwise sums: out[i, j] = u[i] + v[j]."""
    _require(u.values.ndim == 1 and v.values.ndim == 1,
             f"outer_add expects vectors, got {u.values.shape} and {v.values.shape}")
    out = u.values[:, None] + v.values[None, :]
    return from_op(out, (u, v), (lambda g: g.sum(axis=1), lambda g: g.sum(axis=0)),
                   "outer_add")


def element(a: Tensor, i: int) -> Tensor:
    """Extract element ``a[i]`` of a 1-D tensor as a scalar."""
    _require(a.values.ndim == 1, f"element expects a 1-D tensor, got shape {a.values.shape}")
    n = a.values.shape[0]
    if not 0 <= i < n:
        raise ShapeMismatchError(f"element index {i} out of range for length {n}")

    def vjp(g: np.ndarray) -> np.ndarray:
        out = np.zeros(n)
        out[i] = g
        return out

    return from_op(a.values[i], (a,), (vjp,), "element")


def sigmoid(a: Tensor) -> Tensor:
    # Numerically stable piecewise form.
    v = a.values
    out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                   np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    return from_op(out, (a,), (lambda g: g * out * (1.0 - out),), "sigmoid")


def tanh_(a: Tensor) -> Tensor:
    out = np.tanh(a.values)
    return from_op(out, (a,), (lambda g: g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return from_op(np.where(mask, a.values, 0.0), (a,), (lambda g: g * mask,), "relu")


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    mask = a.values > 0
    out = np.where(mask, a.values, slope * a.values)
    return from_op(out, (a,), (lambda g: g * np.where(mask, 1.0, slope),), "leaky_relu")


def softmax(a: Tensor) -> Tensor:
    """Softmax over a 1-D tensor (stable: max-shifted)."""
    _require(a.values.ndim == 1, f"softmax expects a 1-D tensor, got shape {a.values.shape}")
    shifted = a.values - np.max(a.values)
    e = np.exp(shifted)
    out = e / np.sum(e)
    return from_op(out, (a,), (lambda g: out * (g - np.dot(g, out)),), "softmax")


def sum_(a: Tensor) -> Tensor:
    """Sum of all elements (index-ascending order) as a scalar."""
    return from_op(np.sum(a.values), (a,), (lambda g: np.full_like(a.values, g),), "sum")


def mean_(a: Tensor) -> Tensor:
    n = a.values.size
    _require(n > 0, "mean of an empty tensor")
    return from_op(np.sum(a.values) / n, (a,),
                   (lambda g: np.full_like(a.values, g / n),), "mean")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences; operands must share a shape."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.shape != b.values.shape:
        raise ShapeMismatchError(f"mse shape mismatch {a.values.shape} vs {b.values.shape}")
    diff = a.values - b.values
    n = diff.size
    _require(n > 0, "mse of empty tensors")
    return from_op(np.sum(diff * diff) / n, (a, b),
                   (lambda g: g * 2.0 * diff / n, lambda g: g * -2.0 * diff / n), "mse")


# ---------------------------------------------------------------------------
# backward pass


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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Accumulate gradients of a scalar loss into every reachable tensor.

    Sets ``t.grad`` on each tensor with ``requires_grad``. When ``params``
    is given, returns ``{id(p): grad}`` covering every requested tensor;
    parameters the loss does not depend on get a zero gradient of their
    own shape.
    """
    if loss.values.ndim != 0:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.values.shape}")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        for parent, vjp in zip(node._parents, node._vjps):
            contribution = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contribution if prev is None else prev + contribution
    if params is None:
        return {}
    out: dict[int, np.ndarray] = {}
    for p in params:
        out[id(p)] = grads.get(id(p), np.zeros_like(p.values))
    return out


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# gradient verification


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    """Symmetric relative error with a denominator floor for near-zero pairs."""
    return abs(analytic - numeric) / max(floor, abs(analytic) + abs(numeric))


def check_gradients(build: Callable[[np.random.Generator], tuple[Callable[[], Tensor], Sequence[Tensor]]],
                    trials: int = 1,
                    step: float = 1e-5,
                    rng: np.random.Generator | None = None,
                    coords_per_param: int | None = None,
                    skip_nonsmooth: bool = False,
                    max_skip_fraction: float = 0.2,
                    denominator_floor: float = 1e-8) -> float:
    """Compare analytic gradients against central finite differences.

    ``build(rng)`` returns ``(loss_fn, params)`` where ``loss_fn()``
    recomputes the scalar loss from the params' current values, so the
    checker can wiggle individual coordinates. Returns the max over all
    trials and checked coordinates of
    ``|analytic - numeric| / max(denominator_floor, |analytic| + |numeric|)``.
    Central differences at step h on a float64 loss carry ~eps*|loss|/h of
    absolute noise, so the floor bounds the gradient magnitude below which
    coordinates are effectively held to that absolute accuracy instead.

    ``coords_per_param`` caps the number of randomly chosen coordinates
    checked per parameter per trial (all coordinates when None).

    Central differences are only valid where the loss is locally smooth.
    With ``skip_nonsmooth``, coordinates whose probe bracket shows kink
    curvature are excluded: at a relu/leaky kink the second difference
    ``|f(x+h) + f(x-h) - 2 f(x)|`` is O(h * slope-jump), while smooth
    points give O(h^2). A wrong derivative of a smooth primitive leaves
    the bracket smooth and is still caught. Raises if more than
    ``max_skip_fraction`` of the coordinates get excluded.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    checked = 0
    skipped = 0
    for _ in range(trials):
        loss_fn, params = build(rng)
        grads = backward(loss_fn(), params)
        for p in params:
            analytic = grads[id(p)].reshape(-1)
            flat = p.values.reshape(-1)
            if coords_per_param is None or coords_per_param >= flat.size:
                coords = range(flat.size)
            else:
                coords = rng.choice(flat.size, size=coords_per_param, replace=False)
            for i in coords:
                saved = flat[i]

                def probe(h: float) -> tuple[float, float]:
                    flat[i] = saved + h
                    f_plus = loss_fn().item()
                    flat[i] = saved - h
                    f_minus = loss_fn().item()
                    flat[i] = saved
                    return f_plus, f_minus

                f_plus, f_minus = probe(step)
                numeric = (f_plus - f_minus) / (2.0 * step)
                if skip_nonsmooth:
                    f_mid = loss_fn().item()
                    curvature = abs(f_plus + f_minus - 2.0 * f_mid)
                    spread = abs(f_plus - f_minus)
                    # kinks inside the bracket leave O(h) curvature; smooth
                    # points leave O(h^2)
                    if curvature > 0.05 * spread + 1e-14:
                        skipped += 1
                        continue
                checked += 1
                worst = max(worst, relative_error(float(analytic[i]), numeric,
                                                  floor=denominator_floor))
    if skip_nonsmooth and skipped > max_skip_fraction * max(1, checked + skipped):
        raise ContractError(
            f"{skipped}/{checked + skipped} coordinates sat on non-smooth points; "
            "inputs are unsuitable for finite differences")
    return worst
