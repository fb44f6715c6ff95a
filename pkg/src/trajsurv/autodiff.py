"""Dense 2-D tensors with reverse-mode automatic differentiation.

Every trainable part of the pipeline (node embeddings, the residual graph
operator, the LSTM integrator, the survival heads) is expressed through the
primitives in this module, so one tape implementation serves the whole model.
Tensors are immutable values once they participate in a tape; only leaf
parameters are ever updated, and only between tapes (by the optimizer).
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    """Operand shapes do not conform for the requested op."""

    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class DomainError(ValueError):
    """Input outside the mathematical domain of the op (e.g. log of x <= 0)."""


class NonFiniteError(ArithmeticError):
    """A value or gradient came out NaN/Inf."""


class Tensor:
    """A rows x cols matrix of float64 values, optionally recorded on a tape.

    Interior nodes carry their op kind, parent references and any cached
    context needed by the backward rule; leaves have op None. Gradients are
    never stored on the tensor itself -- `backward` returns them in a map.
    """

    __slots__ = ("data", "op", "parents", "ctx", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeMismatchError("tensor", arr.shape)
        self.data = arr
        self.op: str | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.ctx = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _node(cls, data: np.ndarray, op: str, parents: tuple["Tensor", ...], ctx=None) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.op = op
        t.parents = parents
        t.ctx = ctx
        t.requires_grad = any(p.requires_grad for p in parents)
        t.name = None
        return t

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError("item", self.shape)
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        tag = self.name or self.op or "leaf"
        return f"Tensor({self.rows}x{self.cols}, {tag})"

    # Operator sugar; scalars are expanded to full-shape constants so the
    # elementwise ops only ever see equal shapes or the broadcast-row pattern.
    def __add__(self, other):
        return add(self, _coerce(other, self.shape))

    def __sub__(self, other):
        return sub(self, _coerce(other, self.shape))

    def __mul__(self, other):
        return mul(self, _coerce(other, self.shape))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return negate(self)


def parameter(data, name: str | None = None) -> Tensor:
    """A trainable leaf."""
    t = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
    return t


def constant(data, name: str | None = None) -> Tensor:
    """A non-trainable leaf (inputs, masks, adjacency and the like)."""
    return Tensor(data, requires_grad=False, name=name)


def _coerce(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(shape, float(x)))


# ---------------------------------------------------------------------------
# Primitives. Each returns a new node; backward rules live in _BACKWARD.
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    return Tensor._node(a.data @ b.data, "matmul", (a, b))


def _elementwise_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    # Broadcast-row pattern: one operand is a single row with matching cols.
    if a.cols == b.cols and (a.rows == 1 or b.rows == 1):
        return
    raise ShapeMismatchError(op, a.shape, b.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shapes("add", a, b)
    return Tensor._node(a.data + b.data, "add", (a, b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shapes("sub", a, b)
    return Tensor._node(a.data - b.data, "sub", (a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shapes("mul", a, b)
    return Tensor._node(a.data * b.data, "mul", (a, b))


def negate(a: Tensor) -> Tensor:
    return Tensor._node(-a.data, "negate", (a,))


def concat_cols(*tensors: Tensor) -> Tensor:
    if not tensors:
        raise ShapeMismatchError("concat-cols", ())
    rows = tensors[0].rows
    for t in tensors[1:]:
        if t.rows != rows:
            raise ShapeMismatchError("concat-cols", tensors[0].shape, t.shape)
    widths = tuple(t.cols for t in tensors)
    return Tensor._node(np.concatenate([t.data for t in tensors], axis=1),
                        "concat-cols", tuple(tensors), widths)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.cols):
        raise ShapeMismatchError("slice-cols", a.shape, (start, stop))
    return Tensor._node(a.data[:, start:stop].copy(), "slice-cols", (a,), (start, stop))


def broadcast_row(a: Tensor, rows: int) -> Tensor:
    if a.rows != 1 or rows < 1:
        raise ShapeMismatchError("broadcast-row", a.shape, (rows,))
    return Tensor._node(np.repeat(a.data, rows, axis=0), "broadcast-row", (a,), rows)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._node(out, "sigmoid", (a,))


def tanh(a: Tensor) -> Tensor:
    return Tensor._node(np.tanh(a.data), "tanh", (a,))


def relu(a: Tensor) -> Tensor:
    return Tensor._node(np.maximum(a.data, 0.0), "relu", (a,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    if not np.isfinite(out).all():
        raise NonFiniteError("exp overflowed on input outside representable range")
    return Tensor._node(out, "exp", (a,))


def log(a: Tensor) -> Tensor:
    if (a.data <= 0.0).any():
        raise DomainError("log of non-positive value")
    return Tensor._node(np.log(a.data), "log", (a,))


def sum_all(a: Tensor) -> Tensor:
    return Tensor._node(np.array([[a.data.sum()]]), "sum-all", (a,))


def mean_all(a: Tensor) -> Tensor:
    return Tensor._node(np.array([[a.data.mean()]]), "mean-all", (a,))


def mean_rows(a: Tensor) -> Tensor:
    """Column means: r x c -> 1 x c."""
    return Tensor._node(a.data.mean(axis=0, keepdims=True), "mean-rows", (a,))


def softmax_rows(a: Tensor) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return Tensor._node(e / e.sum(axis=1, keepdims=True), "softmax-rows", (a,))


_FORWARD: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "elementwise-mul": mul,
    "concat-cols": concat_cols,
    "slice-cols": slice_cols,
    "broadcast-row": broadcast_row,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "exp": exp,
    "log": log,
    "negate": negate,
    "sum-all": sum_all,
    "mean-rows": mean_rows,
    "mean-all": mean_all,
    "softmax-rows": softmax_rows,
}

PRIMITIVE_OPS = tuple(_FORWARD)


def primitive_forward(op: str, inputs: Sequence, *args):
    """Apply a primitive by name. Mostly useful for generic op-sweep tests."""
    if op not in _FORWARD:
        raise ValueError(f"unknown primitive op {op!r}")
    return _FORWARD[op](*inputs, *args)


# ---------------------------------------------------------------------------
# Backward rules: (node, upstream grad) -> per-parent gradients.
# ---------------------------------------------------------------------------


def _reduce_to(grad: np.ndarray, shape) -> np.ndarray:
    # Undo broadcast-row expansion performed by an elementwise op.
    if grad.shape == shape:
        return grad
    return grad.sum(axis=0, keepdims=True)


def _bw_matmul(node, g):
    a, b = node.parents
    return (g @ b.data.T, a.data.T @ g)


def _bw_add(node, g):
    a, b = node.parents
    return (_reduce_to(g, a.shape), _reduce_to(g, b.shape))


def _bw_sub(node, g):
    a, b = node.parents
    return (_reduce_to(g, a.shape), _reduce_to(-g, b.shape))


def _bw_mul(node, g):
    a, b = node.parents
    return (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape))


def _bw_negate(node, g):
    return (-g,)


def _bw_concat_cols(node, g):
    out = []
    start = 0
    for w in node.ctx:
        out.append(g[:, start:start + w])
        start += w
    return tuple(out)


def _bw_slice_cols(node, g):
    (a,) = node.parents
    start, stop = node.ctx
    full = np.zeros_like(a.data)
    full[:, start:stop] = g
    return (full,)


def _bw_broadcast_row(node, g):
    return (g.sum(axis=0, keepdims=True),)


def _bw_sigmoid(node, g):
    y = node.data
    return (g * y * (1.0 - y),)


def _bw_tanh(node, g):
    y = node.data
    return (g * (1.0 - y * y),)


def _bw_relu(node, g):
    # Subgradient at exactly 0 is taken as 0.
    return (g * (node.parents[0].data > 0.0),)


def _bw_exp(node, g):
    return (g * node.data,)


def _bw_log(node, g):
    return (g / node.parents[0].data,)


def _bw_sum_all(node, g):
    (a,) = node.parents
    return (np.full_like(a.data, g[0, 0]),)


def _bw_mean_all(node, g):
    (a,) = node.parents
    return (np.full_like(a.data, g[0, 0] / a.data.size),)


def _bw_mean_rows(node, g):
    (a,) = node.parents
    return (np.repeat(g / a.rows, a.rows, axis=0),)


def _bw_softmax_rows(node, g):
    s = node.data
    dot = (g * s).sum(axis=1, keepdims=True)
    return (s * (g - dot),)


_BACKWARD: dict[str, Callable] = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "negate": _bw_negate,
    "concat-cols": _bw_concat_cols,
    "slice-cols": _bw_slice_cols,
    "broadcast-row": _bw_broadcast_row,
    "sigmoid": _bw_sigmoid,
    "tanh": _bw_tanh,
    "relu": _bw_relu,
    "exp": _bw_exp,
    "log": _bw_log,
    "sum-all": _bw_sum_all,
    "mean-all": _bw_mean_all,
    "mean-rows": _bw_mean_rows,
    "softmax-rows": _bw_softmax_rows,
}


def _topo_order(output: Tensor) -> list[Tensor]:
    # Iterative post-order DFS; parent order is fixed, so the ordering (and
    # therefore gradient accumulation order) is deterministic.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    return order


def backward(output: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, Tensor]:
    """Gradients of a scalar output with respect to every trainable leaf.

    Leaves listed in `params` but unreachable from `output` get zero
    gradients. Keys are the leaf tensors themselves (identity semantics).
    """
    if output.shape != (1, 1):
        raise ShapeMismatchError("backward", output.shape)

    grads: dict[int, np.ndarray] = {id(output): np.ones((1, 1))}
    result: dict[Tensor, Tensor] = {}
    if output.requires_grad:
        for node in reversed(_topo_order(output)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.op is None:
                result[node] = Tensor(g)
                continue
            for parent, pg in zip(node.parents, _BACKWARD[node.op](node, g)):
                if not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = np.array(pg, dtype=np.float64)
                else:
                    acc += pg
    if params is not None:
        for p in params:
            if p.requires_grad and p not in result:
                result[p] = Tensor(np.zeros_like(p.data))
    return result


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1 x c tensors into an n x c tensor (composition of primitives)."""
    n = len(rows)
    if n == 0:
        raise ShapeMismatchError("stack-rows", ())
    if n == 1:
        return rows[0]
    cols = rows[0].cols
    acc = None
    for i, r in enumerate(rows):
        if r.shape != (1, cols):
            raise ShapeMismatchError("stack-rows", (1, cols), r.shape)
        sel = np.zeros((n, 1))
        sel[i, 0] = 1.0
        placed = matmul(Tensor(sel), r)
        acc = placed if acc is None else add(acc, placed)
    return acc


def grad_check(f: Callable[[], Tensor], params, step: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    `f` rebuilds its tape from the current contents of `params` on every
    call; the leaves are perturbed in place and restored. The relative error
    for one coordinate is |autodiff - fd| / max(1, |fd|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if isinstance(params, Mapping):
        leaves = list(params.items())
    else:
        leaves = [(getattr(p, "name", None) or f"param{i}", p) for i, p in enumerate(params)]

    out = f()
    auto = backward(out, params=[t for _, t in leaves])
    worst = 0.0
    for label, leaf in leaves:
        ad = auto[leaf].data
        it = np.nditer(leaf.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            saved = leaf.data[idx]
            leaf.data[idx] = saved + step
            fp = f().item()
            leaf.data[idx] = saved - step
            fm = f().item()
            leaf.data[idx] = saved
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"non-finite value while perturbing {label}{idx}")
            fd = (fp - fm) / (2.0 * step)
            rel = abs(ad[idx] - fd) / max(1.0, abs(fd))
            if rel > worst:
                worst = rel
    return worst
