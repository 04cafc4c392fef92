"""Dense float64 arrays on a reverse-mode differentiation tape.

Every primitive in this module accepts any mix of :class:`Tensor` handles
and plain numpy arrays (or scalars).  When at least one argument is a
Tensor the result is a Tensor recorded on that argument's tape; when all
arguments are plain values the same numpy computation runs untaped and the
raw array comes back.  Loss and model code is therefore written once and
works both for training (gradients needed) and for evaluation.

Conventions that matter for reproducibility:

* all values are float64; inputs are validated/coerced at the boundary;
* ReLU uses subgradient 0 at exactly 0;
* ``maximum(x, c)`` passes gradient only where ``x > c``;
* row max/min route gradient to the first extremal index (numpy argmax
  order), which is the measure-zero tie convention;
* the backward pass walks nodes in reverse creation order, visiting each
  exactly once, so repeated runs are bit-identical.

Tapes are single-owner while being built and must not be shared between
threads; finished values (numpy arrays) are safe to read concurrently.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

Array = np.ndarray


def as_array(value, name: str = "value") -> Array:
    """Coerce to a float64 array, rejecting non-finite entries."""
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def as_matrix(value, name: str = "matrix") -> Array:
    arr = as_array(value, name)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def as_vector(value, name: str = "vector") -> Array:
    arr = as_array(value, name)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def log_softmax_values(z: Array) -> Array:
    """Row-wise log-softmax with max subtraction, on plain arrays.

    Accepts a vector or a matrix; the reduction runs over the last axis.
    This is the single stabilized implementation shared by the tape
    primitive and by all teacher-side (constant) computations, so taped
    and untaped paths produce bit-identical values.
    """
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_values(z: Array) -> Array:
    return np.exp(log_softmax_values(z))


class Tensor:
    """A node on a :class:`Tape`: a float64 array plus backward metadata."""

    __slots__ = ("tape", "data", "grad", "_parents", "_vjp")

    def __init__(self, tape: "Tape", data: Array, parents=(), vjp=None):
        self.tape = tape
        self.data = data
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = parents
        self._vjp: Callable[[Array], tuple[Array, ...]] | None = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        self.tape.backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, tape_nodes={len(self.tape.nodes)})"

    # binary operators (other side may be a Tensor on the same tape,
    # an array, or a scalar)
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return multiply(self, -1.0)


class Tape:
    """Ordered record of primitive operations for one backward pass.

    Nodes are appended in construction order, which is automatically a
    topological order: operands exist before the operations that consume
    them.
    """

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []

    def leaf(self, value, name: str = "leaf") -> Tensor:
        """Register an input whose gradient will be accumulated."""
        node = Tensor(self, as_array(value, name).copy())
        self.nodes.append(node)
        return node

    def _record(self, data: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
        node = Tensor(self, data, parents, vjp)
        self.nodes.append(node)
        return node

    def backward(self, output: Tensor) -> None:
        """Fill ``.grad`` on every node with d(output)/d(node).

        ``output`` must be a scalar node of this tape.  Leaves that do not
        influence the output end up with zero gradient.  Each node's local
        backward rule runs exactly once, in reverse creation order.
        """
        if output.tape is not self:
            raise ContractError("output tensor belongs to a different tape")
        if output.data.size != 1:
            raise ContractError(
                f"backward requires a scalar output, got shape {output.data.shape}"
            )
        for node in self.nodes:
            node.grad = np.zeros_like(node.data)
        output.grad = np.ones_like(output.data)
        for node in reversed(self.nodes):
            if node._vjp is None:
                continue
            parent_grads = node._vjp(node.grad)
            for parent, pg in zip(node._parents, parent_grads):
                parent.grad += pg


def _split(x) -> tuple[Array, Tensor | None]:
    if isinstance(x, Tensor):
        return x.data, x
    return np.asarray(x, dtype=np.float64), None


def _tape_of(*tensors: Tensor | None) -> Tape | None:
    tape = None
    for t in tensors:
        if t is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise ContractError("operands live on different tapes")
    return tape


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(x, y, forward, vjp_maker):
    xd, xt = _split(x)
    yd, yt = _split(y)
    out = forward(xd, yd)
    tape = _tape_of(xt, yt)
    if tape is None:
        return out
    vjp = vjp_maker(xd, yd, out, xt is not None, yt is not None)
    parents = tuple(t for t in (xt, yt) if t is not None)
    return tape._record(out, parents, vjp)


def add(x, y):
    def vjp_maker(xd, yd, out, has_x, has_y):
        def vjp(g):
            grads = []
            if has_x:
                grads.append(_unbroadcast(g, xd.shape))
            if has_y:
                grads.append(_unbroadcast(g, yd.shape))
            return tuple(grads)

        return vjp

    return _binary(x, y, lambda a, b: a + b, vjp_maker)


def subtract(x, y):
    def vjp_maker(xd, yd, out, has_x, has_y):
        def vjp(g):
            grads = []
            if has_x:
                grads.append(_unbroadcast(g, xd.shape))
            if has_y:
                grads.append(_unbroadcast(-g, yd.shape))
            return tuple(grads)

        return vjp

    return _binary(x, y, lambda a, b: a - b, vjp_maker)


def multiply(x, y):
    def vjp_maker(xd, yd, out, has_x, has_y):
        def vjp(g):
            grads = []
            if has_x:
                grads.append(_unbroadcast(g * yd, xd.shape))
            if has_y:
                grads.append(_unbroadcast(g * xd, yd.shape))
            return tuple(grads)

        return vjp

    return _binary(x, y, lambda a, b: a * b, vjp_maker)


def divide(x, y):
    def vjp_maker(xd, yd, out, has_x, has_y):
        def vjp(g):
            grads = []
            if has_x:
                grads.append(_unbroadcast(g / yd, xd.shape))
            if has_y:
                grads.append(_unbroadcast(-g * xd / (yd * yd), yd.shape))
            return tuple(grads)

        return vjp

    return _binary(x, y, lambda a, b: a / b, vjp_maker)


def affine(x, weight, bias):
    """``x @ weight + bias`` with gradients for all three arguments.

    Shapes: x is (N, D), weight is (D, H), bias is (H,).
    """
    xd, xt = _split(x)
    wd, wt = _split(weight)
    bd, bt = _split(bias)
    if xd.ndim != 2 or wd.ndim != 2:
        raise DimensionError(
            f"affine expects 2-D input and weight, got {xd.shape} and {wd.shape}"
        )
    if xd.shape[1] != wd.shape[0]:
        raise DimensionError(
            f"affine: input shape {xd.shape} incompatible with weight shape {wd.shape}"
        )
    if bd.ndim != 1 or bd.shape[0] != wd.shape[1]:
        raise DimensionError(
            f"affine: bias shape {bd.shape} incompatible with weight shape {wd.shape}"
        )
    out = xd @ wd + bd
    tape = _tape_of(xt, wt, bt)
    if tape is None:
        return out

    def vjp(g):
        grads = []
        if xt is not None:
            grads.append(g @ wd.T)
        if wt is not None:
            grads.append(xd.T @ g)
        if bt is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = tuple(t for t in (xt, wt, bt) if t is not None)
    return tape._record(out, parents, vjp)


def relu(x):
    xd, xt = _split(x)
    out = np.maximum(xd, 0.0)
    if xt is None:
        return out
    mask = xd > 0.0

    def vjp(g):
        return (g * mask,)

    return xt.tape._record(out, (xt,), vjp)


def exp(x):
    xd, xt = _split(x)
    out = np.exp(xd)
    if xt is None:
        return out

    def vjp(g):
        return (g * out,)

    return xt.tape._record(out, (xt,), vjp)


def log(x):
    xd, xt = _split(x)
    out = np.log(xd)
    if xt is None:
        return out

    def vjp(g):
        return (g / xd,)

    return xt.tape._record(out, (xt,), vjp)


def maximum(x, floor: float):
    """Elementwise ``max(x, floor)`` against a constant.

    Gradient passes only where ``x > floor``, so a floored statistic stops
    contributing to the gradient once it is clamped.
    """
    xd, xt = _split(x)
    out = np.maximum(xd, floor)
    if xt is None:
        return out
    mask = xd > floor

    def vjp(g):
        return (g * mask,)

    return xt.tape._record(out, (xt,), vjp)


def sum_all(x):
    xd, xt = _split(x)
    out = np.asarray(xd.sum())
    if xt is None:
        return out

    def vjp(g):
        return (np.broadcast_to(g, xd.shape).copy(),)

    return xt.tape._record(out, (xt,), vjp)


def mean_all(x):
    xd, xt = _split(x)
    out = np.asarray(xd.mean())
    if xt is None:
        return out
    scale = 1.0 / xd.size

    def vjp(g):
        return (np.broadcast_to(g * scale, xd.shape).copy(),)

    return xt.tape._record(out, (xt,), vjp)


def sum_rows(x):
    """Row sums of a matrix, kept as a (N, 1) column."""
    xd, xt = _split(x)
    out = xd.sum(axis=1, keepdims=True)
    if xt is None:
        return out

    def vjp(g):
        return (np.broadcast_to(g, xd.shape).copy(),)

    return xt.tape._record(out, (xt,), vjp)


def log_softmax_rows(x):
    """Row-wise log-softmax of a matrix, stabilized by max subtraction."""
    xd, xt = _split(x)
    out = log_softmax_values(xd)
    if xt is None:
        return out
    probs = np.exp(out)

    def vjp(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return xt.tape._record(out, (xt,), vjp)


def std_rows(x, corrected: bool = True):
    """Per-row standard deviation as a (N, 1) column.

    ``corrected=True`` divides by C-1 (the framework-default sample
    estimator), ``False`` divides by C.  Rows need at least two entries
    for the corrected form.  The gradient is zero for constant rows,
    matching the floor that downstream users apply.
    """
    xd, xt = _split(x)
    if xd.ndim != 2:
        raise DimensionError(f"std_rows expects a matrix, got shape {xd.shape}")
    n = xd.shape[1]
    ddof = 1 if corrected else 0
    if n - ddof < 1:
        raise ContractError(f"std_rows needs at least {ddof + 1} columns, got {n}")
    mu = xd.mean(axis=1, keepdims=True)
    centered = xd - mu
    out = np.sqrt((centered * centered).sum(axis=1, keepdims=True) / (n - ddof))
    if xt is None:
        return out

    def vjp(g):
        denom = (n - ddof) * out
        coef = np.where(denom > 0.0, g / np.where(denom > 0.0, denom, 1.0), 0.0)
        return (centered * coef,)

    return xt.tape._record(out, (xt,), vjp)


def max_rows(x):
    """Per-row maximum as a (N, 1) column; gradient to the first argmax."""
    xd, xt = _split(x)
    idx = xd.argmax(axis=1)[:, None]
    out = np.take_along_axis(xd, idx, axis=1)
    if xt is None:
        return out

    def vjp(g):
        gx = np.zeros_like(xd)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return xt.tape._record(out, (xt,), vjp)


def min_rows(x):
    xd, xt = _split(x)
    idx = xd.argmin(axis=1)[:, None]
    out = np.take_along_axis(xd, idx, axis=1)
    if xt is None:
        return out

    def vjp(g):
        gx = np.zeros_like(xd)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return xt.tape._record(out, (xt,), vjp)


def gather_rows(x, indices):
    """Pick one entry per row: out[n, 0] = x[n, indices[n]]."""
    xd, xt = _split(x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != xd.shape[0]:
        raise DimensionError(
            f"gather_rows: indices shape {idx.shape} does not match rows of {xd.shape}"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= xd.shape[1]):
        raise ContractError(
            f"gather_rows: index out of range [0, {xd.shape[1]}) in {idx.tolist()}"
        )
    col = idx[:, None]
    out = np.take_along_axis(xd, col, axis=1)
    if xt is None:
        return out

    def vjp(g):
        gx = np.zeros_like(xd)
        np.put_along_axis(gx, col, g, axis=1)
        return (gx,)

    return xt.tape._record(out, (xt,), vjp)


def value_of(x) -> Array:
    """The plain array behind either a Tensor or an array."""
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def grad_check(
    f: Callable[[Tensor], Tensor],
    point,
    step: float = 1e-5,
) -> float:
    """Compare the taped gradient of ``f`` against central differences.

    ``f`` receives a leaf Tensor and must return a scalar Tensor.  Returns
    ``max_i |analytic_i - fd_i| / max(1e-12, |fd_i|)`` over all coordinates
    of ``point``.  Raises if ``f`` is non-finite at any probe point.
    """
    if step <= 0.0:
        raise ContractError(f"grad_check step must be positive, got {step}")
    point = as_array(point, "point")

    tape = Tape()
    x = tape.leaf(point)
    out = f(x)
    if not isinstance(out, Tensor):
        raise ContractError("grad_check function must return a Tensor")
    tape.backward(out)
    analytic = x.grad

    def eval_at(p: Array) -> float:
        probe_tape = Tape()
        with np.errstate(all="ignore"):
            val = f(probe_tape.leaf(p))
        v = float(val.data)
        if not np.isfinite(v):
            raise NumericError("function is non-finite at a finite-difference probe")
        return v

    fd = np.zeros_like(point)
    flat = point.reshape(-1)
    fd_flat = fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = eval_at(point)
        flat[i] = orig - step
        lo = eval_at(point)
        flat[i] = orig
        fd_flat[i] = (hi - lo) / (2.0 * step)

    rel = np.abs(analytic - fd) / np.maximum(1e-12, np.abs(fd))
    return float(rel.max())


def parameter_count(params: Sequence[tuple[Array, Array]]) -> int:
    """Total scalar count of a (weight, bias) parameter list."""
    return int(sum(w.size + b.size for w, b in params))
