"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation in this module builds a node that remembers its parents and a
closure mapping the output gradient to one gradient per parent. Calling
:func:`backward` on a scalar collects the ancestry into a :class:`GradTape`
(creation order is a valid topological order) and replays it in reverse.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, NumericError, OracleError

__all__ = [
    "Tensor",
    "GradTape",
    "GradCheckReport",
    "no_grad",
    "is_grad_enabled",
    "make_op",
    "backward",
    "grad_check",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "add_bias",
    "matmul",
    "concat",
    "stack",
    "reshape",
    "take_rows",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "clip",
    "where",
    "softmax_rows",
    "weighted_sum_time",
    "tensor_sum",
    "tensor_mean",
]

_node_ids = itertools.count()
_local = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction in the current thread."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Tensor:
    """A dense float64 array that can take part in a gradient graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._id = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> "GradTape":
        return backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    """Wrap ``data`` as the output of a primitive.

    ``grad_fn`` receives the output gradient and returns one array (or None)
    per parent, in order.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._id = next(_node_ids)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = grad_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


@dataclass
class GradTape:
    """Nodes of one forward pass in creation (topological) order."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, output: Tensor) -> "GradTape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [output]
        while stack:
            node = stack.pop()
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda t: t._id)
        return cls(nodes)

    def backward(self) -> None:
        if not self.nodes:
            return
        output = self.nodes[-1]
        pending: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        # Buffers allocated here may be updated in place; anything returned by a
        # grad_fn may alias another node's gradient and is never mutated.
        owned: set[int] = set()
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if isinstance(pg, _Scatter):
                    if key not in pending:
                        pending[key] = np.zeros(pg.shape)
                    elif key not in owned:
                        pending[key] = pending[key].copy()
                    owned.add(key)
                    pg.add_into(pending[key])
                elif key not in pending:
                    pending[key] = pg
                elif key in owned:
                    pending[key] += pg
                else:
                    pending[key] = pending[key] + pg
                    owned.add(key)


class _Scatter:
    """Gradient of an indexing op, added into a full-size buffer lazily."""

    __slots__ = ("index", "values", "shape", "fancy")

    def __init__(self, index, values, shape, fancy):
        self.index, self.values, self.shape, self.fancy = index, values, shape, fancy

    def add_into(self, buf: np.ndarray) -> None:
        if self.fancy:
            np.add.at(buf, self.index, self.values)
        else:
            buf[self.index] += self.values


def backward(loss: Tensor) -> GradTape:
    """Populate ``grad`` on every ancestor of ``loss`` that requires it.

    Leaf gradients accumulate across calls; reset them with ``zero_grad``.
    """
    if loss.data.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = GradTape.from_output(loss)
    tape.backward()
    return tape


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return make_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return make_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    return make_op(a.data * c, (a,), lambda g: (g * c,))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a bias row to every row of ``x`` along its last axis."""
    if bias.ndim != 1 or x.shape[-1:] != bias.shape:
        raise DimensionError(f"add_bias: bias {bias.shape} does not fit {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return make_op(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=lead)))


# BLAS picks different kernels (and summation orders) depending on the row
# count, so the same row can come out differently in a 5-row and a 10-row
# product. Multiplying in fixed blocks of ROW_BLOCK rows, zero-padding the
# last, makes each output row a function of its input row alone.
ROW_BLOCK = 32


def rowwise_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    m = x.shape[0]
    pad = -m % ROW_BLOCK
    if pad:
        x = np.concatenate([x, np.zeros((pad, x.shape[1]), dtype=x.dtype)])
    out = np.empty((m + pad, w.shape[1]), dtype=np.result_type(x, w))
    for start in range(0, m + pad, ROW_BLOCK):
        np.matmul(x[start : start + ROW_BLOCK], w, out=out[start : start + ROW_BLOCK])
    return out[:m]


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return make_op(rowwise_matmul(ad, bd), (a, b), lambda g: (g @ bd.T, ad.T @ g))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    datas = [t.data for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]
    return make_op(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("stack needs at least one tensor")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return make_op(out, tuple(tensors), grad_fn)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    original = a.shape
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),))


def _getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    shape = a.shape
    parts = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def grad_fn(g):
        return (_Scatter(index, g, shape, fancy),)

    return make_op(np.array(out, dtype=np.float64), (a,), grad_fn)


def take_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D table; the gradient scatter-adds back."""
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if table.ndim != 2:
        raise DimensionError(f"take_rows needs a 2-D table, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = ids[(ids < 0) | (ids >= table.shape[0])][0]
        raise IndexError(f"take_rows: row {int(bad)} outside table of {table.shape[0]} rows")

    def grad_fn(g):
        return (_Scatter(ids, g, table.shape, True),)

    return make_op(table.data[ids], (table,), grad_fn)


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0
    return make_op(np.where(positive, a.data, 0.0), (a,), lambda g: (g * positive,))


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)
    return make_op(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return make_op(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return make_op(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return make_op(np.log(x), (a,), lambda g: (g / x,))


def clip(a: Tensor, low: float, high: float) -> Tensor:
    x = a.data
    inside = (x >= low) & (x <= high)
    return make_op(np.clip(x, low, high), (a,), lambda g: (g * inside,))


def where(condition, a: Tensor, b: Tensor) -> Tensor:
    """Select from ``a`` where ``condition`` holds, else from ``b``.

    ``condition`` is a constant boolean array broadcastable to the operands.
    """
    _check_same_shape("where", a, b)
    cond = np.broadcast_to(np.asarray(condition, dtype=bool), a.shape)
    return make_op(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (np.where(cond, g, 0.0), np.where(cond, 0.0, g)),
    )


def _sequential_sum(x: np.ndarray) -> np.ndarray:
    # Left-to-right accumulation over axis 1; exact zeros never perturb the result.
    acc = x[:, 0].copy()
    for j in range(1, x.shape[1]):
        acc += x[:, j]
    return acc


def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Row-wise softmax with max subtraction.

    Entries where ``mask`` is 0 receive weight exactly 0.
    """
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows needs a 2-D input, got {x.shape}")
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows: NaN in input")
    if mask is None:
        keep = np.ones(x.shape, dtype=bool)
    else:
        keep = np.asarray(mask).astype(bool)
        if keep.shape != x.shape:
            raise DimensionError(f"softmax_rows: mask {keep.shape} vs input {x.shape}")
        if not keep.any(axis=1).all():
            raise ContractError("softmax_rows: a row is fully masked")
    shifted = np.where(keep, x.data, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.where(keep, np.exp(shifted), 0.0)
    y = e / _sequential_sum(e)[:, None]

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return make_op(y, (x,), grad_fn)


def weighted_sum_time(weights: Tensor, values: Tensor) -> Tensor:
    """``out[b] = sum_t weights[b, t] * values[b, t]``, accumulated in step order."""
    if weights.ndim != 2 or values.ndim != 3 or weights.shape != values.shape[:2]:
        raise DimensionError(
            f"weighted_sum_time: weights {weights.shape} vs values {values.shape}"
        )
    w, v = weights.data, values.data
    acc = w[:, 0, None] * v[:, 0]
    for t in range(1, w.shape[1]):
        acc = acc + w[:, t, None] * v[:, t]

    def grad_fn(g):
        return np.einsum("bh,bth->bt", g, v), w[:, :, None] * g[:, None, :]

    return make_op(acc, (weights, values), grad_fn)


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return make_op(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def tensor_mean(a: Tensor) -> Tensor:
    if a.size == 0:
        raise ContractError("mean of an empty tensor")
    shape, n = a.shape, a.size
    return make_op(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


@dataclass
class GradCheckReport:
    """Worst relative error per named parameter from a finite-difference check."""

    tol: float
    errors: dict[str, float]
    worst_index: dict[str, tuple]

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.errors.items() if not err <= self.tol]

    @property
    def passed(self) -> bool:
        return not self.failures

    def __str__(self) -> str:
        width = max((len(n) for n in self.errors), default=4)
        lines = []
        for name, err in self.errors.items():
            flag = "ok" if err <= self.tol else "FAIL"
            lines.append(f"{name:<{width}}  {err:.3e}  {flag}")
        return "\n".join(lines)


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-6,
    tol: float = 1e-4,
    names: Iterable[str] | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients against central differences.

    ``f`` rebuilds the scalar loss from the current ``params`` data on every
    call. The error for one entry is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ContractError(f"finite-difference step {h} outside [1e-7, 1e-3]")
    selected = list(names) if names is not None else list(params)

    for p in params.values():
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = {
        n: (params[n].grad.copy() if params[n].grad is not None else np.zeros(params[n].shape))
        for n in selected
    }

    with no_grad():
        first, second = f().item(), f().item()
        if first != second:
            raise OracleError(f"loss is not deterministic: {first!r} != {second!r}")

        errors: dict[str, float] = {}
        worst: dict[str, tuple] = {}
        for name in selected:
            data = params[name].data
            worst_err, worst_idx = 0.0, ()
            for idx in np.ndindex(data.shape):
                orig = data[idx]
                data[idx] = orig + h
                plus = f().item()
                data[idx] = orig - h
                minus = f().item()
                data[idx] = orig
                numeric = (plus - minus) / (2.0 * h)
                err = abs(analytic[name][idx] - numeric) / max(1.0, abs(numeric))
                if np.isnan(worst_err):
                    continue
                if not err <= worst_err:
                    worst_err, worst_idx = err, idx
            errors[name] = worst_err
            worst[name] = worst_idx
    return GradCheckReport(tol=tol, errors=errors, worst_index=worst)
