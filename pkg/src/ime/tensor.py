"""Dense float64 tensors with reverse-mode automatic differentiation.

Every tensor wraps a row-major numpy float64 array.  Operations record the
inputs and a vector-Jacobian closure so that `backward` can accumulate
gradients into the leaves.  The op set is deliberately small: everything the
model and losses need is composed from these primitives.

Any primitive that produces a NaN/Inf raises `NonFiniteError`; a non-finite
value is always a bug or a divergence, never a valid state.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeError",
    "NonFiniteError",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "concat",
    "reshape",
    "transpose",
    "take_rows",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "absolute",
    "powi",
    "softmax",
    "l2_normalize",
    "sum_",
    "mean",
    "frobenius_sq",
    "sort_desc_per_dimension",
    "GRUCellParams",
    "gru_cell",
    "backward",
    "save_tensors",
    "load_tensors",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


# Module-level switches.  A computation graph is single-threaded; these are
# only toggled outside parallel sections (evaluation threads run with
# gradients disabled throughout).
_grad_enabled = True
_finite_checks = True


class no_grad:
    """Context manager that disables graph recording (pure forward passes)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """A float64 array plus the bookkeeping for reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op})"

    # Operator sugar; scalars and arrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


class Parameter(Tensor):
    """A named leaf tensor whose gradient buffer persists across steps."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"parameter name must be non-empty, no whitespace: {name!r}")
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    if _finite_checks and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == np.float64 else data.astype(np.float64)
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        out._op = op
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    data = a.data + b.data
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    data = a.data - b.data
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    data = a.data * b.data
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data
    return _make(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
        "div",
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


# ---------------------------------------------------------------------------
# Linear algebra and structure
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    data = a.data @ b.data
    return _make(
        data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.shape}")
    return _make(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)
    return _make(data, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _make(data, tensors, vjp, "concat")


def take_rows(table: Tensor, indices) -> Tensor:
    """Gather rows of a 2-D tensor; the gradient scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"take_rows expects a 2-D table, got {table.shape}")
    if idx.ndim != 1:
        raise ShapeError(f"take_rows expects 1-D indices, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"row index out of range [0, {table.shape[0]}): "
            f"min={idx.min()}, max={idx.max()}"
        )
    data = table.data[idx]

    def vjp(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, idx, g)
        return (grad,)

    return _make(data, (table,), vjp, "take_rows")


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


def sigmoid(a: Tensor) -> Tensor:
    # Branch on sign to avoid overflow in exp.
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make(data, (a,), lambda g: (g * data * (1.0 - data),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    return _make(data, (a,), lambda g: (g * (1.0 - data * data),), "tanh")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NonFiniteError
        data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise ValueError("log of non-positive input")
    data = np.log(a.data)
    return _make(data, (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise ValueError("sqrt of negative input")
    data = np.sqrt(a.data)

    def vjp(g):
        # Subgradient 0 at exactly zero keeps losses like moment-norm
        # distances finite when the two distributions coincide.
        denom = np.where(data > 0.0, 2.0 * data, 1.0)
        return (np.where(data > 0.0, g / denom, 0.0),)

    return _make(data, (a,), vjp, "sqrt")


def absolute(a: Tensor) -> Tensor:
    data = np.abs(a.data)
    return _make(data, (a,), lambda g: (g * np.sign(a.data),), "absolute")


def powi(a: Tensor, k: int) -> Tensor:
    if not isinstance(k, int) or k < 1:
        raise ValueError(f"powi exponent must be a positive integer, got {k!r}")
    data = a.data**k
    return _make(data, (a,), lambda g: (g * k * a.data ** (k - 1),), "powi")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        dot = np.sum(g * data, axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (a,), vjp, "softmax")


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    norms = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    if np.any(norms == 0.0):
        raise ValueError("l2_normalize of zero-norm input")
    data = a.data / norms

    def vjp(g):
        dot = np.sum(g * data, axis=axis, keepdims=True)
        return ((g - data * dot) / norms,)

    return _make(data, (a,), vjp, "l2_normalize")


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    data = np.sum(a.data, axis=axis)

    def vjp(g):
        if axis is None:
            return (np.full(a.shape, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(np.asarray(data), (a,), vjp, "sum")


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    data = np.mean(a.data, axis=axis)

    def vjp(g):
        if axis is None:
            return (np.full(a.shape, g / n),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

    return _make(np.asarray(data), (a,), vjp, "mean")


def frobenius_sq(a: Tensor) -> Tensor:
    data = np.asarray(np.sum(a.data * a.data))
    return _make(data, (a,), lambda g: (g * 2.0 * a.data,), "frobenius_sq")


def sort_desc_per_dimension(a: Tensor) -> Tensor:
    """Sort each column (dimension) of a 2-D tensor in descending order.

    The permutation is fixed at forward time with a stable sort, and the
    gradient is routed back through it.
    """
    if a.data.ndim != 2:
        raise ShapeError(f"sort_desc_per_dimension expects a 2-D tensor, got {a.shape}")
    perm = np.argsort(-a.data, axis=0, kind="stable")
    data = np.take_along_axis(a.data, perm, axis=0)

    def vjp(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, perm, g, axis=0)
        return (grad,)

    return _make(data, (a,), vjp, "sort_desc_per_dimension")


# ---------------------------------------------------------------------------
# Recurrent cell
# ---------------------------------------------------------------------------


class GRUCellParams:
    """Weights of one gated recurrent unit cell.

    Gates follow h' = (1 - z) * n + z * h with update gate z, reset gate r
    and candidate n = tanh(x W_xn + r * (h W_hn) + b_n).
    """

    def __init__(self, d_in: int, d_h: int, prefix: str, rng: np.random.Generator):
        def w(name, rows, cols):
            bound = 1.0 / np.sqrt(rows)
            return Parameter(rng.uniform(-bound, bound, size=(rows, cols)), f"{prefix}.{name}")

        self.d_in = d_in
        self.d_h = d_h
        self.w_xz = w("w_xz", d_in, d_h)
        self.w_hz = w("w_hz", d_h, d_h)
        self.b_z = Parameter(np.zeros((1, d_h)), f"{prefix}.b_z")
        self.w_xr = w("w_xr", d_in, d_h)
        self.w_hr = w("w_hr", d_h, d_h)
        self.b_r = Parameter(np.zeros((1, d_h)), f"{prefix}.b_r")
        self.w_xn = w("w_xn", d_in, d_h)
        self.w_hn = w("w_hn", d_h, d_h)
        self.b_n = Parameter(np.zeros((1, d_h)), f"{prefix}.b_n")

    def parameters(self) -> list[Parameter]:
        return [
            self.w_xz, self.w_hz, self.b_z,
            self.w_xr, self.w_hr, self.b_r,
            self.w_xn, self.w_hn, self.b_n,
        ]


def gru_cell(x: Tensor, h_prev: Tensor, params: GRUCellParams) -> Tensor:
    """One GRU update for a row vector input [1, d_in] and state [1, d_h]."""
    if x.shape != (1, params.d_in) or h_prev.shape != (1, params.d_h):
        raise ShapeError(
            f"gru_cell expects x [1, {params.d_in}] and h [1, {params.d_h}], "
            f"got {x.shape} and {h_prev.shape}"
        )
    z = sigmoid(matmul(x, params.w_xz) + matmul(h_prev, params.w_hz) + params.b_z)
    r = sigmoid(matmul(x, params.w_xr) + matmul(h_prev, params.w_hr) + params.b_r)
    n = tanh(matmul(x, params.w_xn) + mul(r, matmul(h_prev, params.w_hn)) + params.b_n)
    return (1.0 - z) * n + z * h_prev


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's `.grad`.

    `loss` must be a scalar.  Accumulation order is the fixed reverse
    topological order, so repeated runs are bitwise reproducible.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # Iterative topological sort (graphs can be deeper than the recursion limit).
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            # Leaf: accumulate into the persistent buffer.
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            if acc is None:
                # Copy: vjp outputs may alias g or each other (e.g. add).
                grads[id(parent)] = np.array(pg, dtype=np.float64)
            else:
                acc += pg


# ---------------------------------------------------------------------------
# Portable tensor serialization
# ---------------------------------------------------------------------------

_MAGIC = b"IMETENSORS 1\n"


def save_tensors(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named float64 arrays: a text header per tensor, then the
    little-endian payload.  Round-trips are bit-exact."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        for name, arr in arrays.items():
            if any(c.isspace() for c in name):
                raise ValueError(f"tensor name may not contain whitespace: {name!r}")
            arr = np.asarray(arr, dtype=np.float64)
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"tensor {name} f64 {arr.ndim}{' ' if dims else ''}{dims}\n".encode())
            fh.write(arr.astype("<f8", copy=False).tobytes())
        fh.write(b"end\n")


def load_tensors(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != _MAGIC:
            raise ValueError(f"not a tensor file or unsupported version: {path}")
        while True:
            header = fh.readline()
            if not header:
                raise ValueError(f"truncated tensor file (missing end marker): {path}")
            if header == b"end\n":
                break
            fields = header.decode().split()
            if len(fields) < 4 or fields[0] != "tensor" or fields[2] != "f64":
                raise ValueError(f"malformed tensor header {header!r} in {path}")
            name = fields[1]
            ndim = int(fields[3])
            if len(fields) != 4 + ndim:
                raise ValueError(f"malformed tensor header {header!r} in {path}")
            shape = tuple(int(d) for d in fields[4:])
            count = int(np.prod(shape)) if shape else 1
            payload = fh.read(8 * count)
            if len(payload) != 8 * count:
                raise ValueError(f"truncated payload for tensor {name!r} in {path}")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    return out
