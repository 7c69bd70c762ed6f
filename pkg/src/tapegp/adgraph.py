"""Reverse-mode automatic differentiation over dense matrix operations.

A :class:`Tape` is an append-only list of nodes. Each node records an
operation, the ids of its inputs and its output shape. Values are computed
eagerly when every input already has a value, and can be recomputed for new
leaf bindings with :meth:`Tape.eval`. :meth:`Tape.grad` runs one reverse
sweep in descending id order.

Every value is a C-contiguous two-dimensional ``float64`` array: scalars are
1x1 and column vectors are nx1.

The matrix-factorisation adjoints (:func:`chol_rev`, :func:`chol_rev_blocked`
and :func:`trisolve_rev`) are exposed as plain functions so they can be
checked in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit
from scipy.special import log_ndtr as _log_ndtr

__all__ = [
    "TapeError",
    "ShapeError",
    "UnboundLeafError",
    "NonFiniteError",
    "NotPositiveDefiniteError",
    "Node",
    "Tape",
    "Var",
    "OPS",
    "DEFAULT_BLOCK_SIZE",
    "chol_rev",
    "chol_rev_blocked",
    "trisolve_rev",
    "exp",
    "log",
    "square",
    "sqrt",
    "softplus",
    "log_ndtr",
    "reciprocal",
    "reduce_sum",
    "diag_part",
    "make_diag",
    "cholesky",
    "trisolve",
    "add_row",
    "add_col",
    "row_sums",
    "col_sums",
    "tile_cols",
]

DEFAULT_BLOCK_SIZE = 32


class TapeError(Exception):
    """Base class for errors raised while recording or evaluating a tape."""


class ShapeError(TapeError, ValueError):
    def __init__(self, op: str, node_id: int, shapes: Sequence[tuple[int, int]], detail: str = ""):
        self.op = op
        self.node_id = node_id
        self.shapes = tuple(shapes)
        msg = f"shape mismatch for {op} at node {node_id}: input shapes {list(self.shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class UnboundLeafError(TapeError, KeyError):
    def __init__(self, node_id: int):
        self.node_id = node_id
        super().__init__(f"leaf {node_id} has no binding")

    def __str__(self) -> str:
        return self.args[0]


class NonFiniteError(TapeError, FloatingPointError):
    def __init__(self, op: str, node_id: int):
        self.op = op
        self.node_id = node_id
        super().__init__(f"non-finite value produced by {op} at node {node_id}")


class NotPositiveDefiniteError(TapeError, np.linalg.LinAlgError):
    def __init__(self, node_id: int | None, detail: str = "matrix is not positive definite"):
        self.node_id = node_id
        where = f" at node {node_id}" if node_id is not None else ""
        super().__init__(f"cholesky failed{where}: {detail}")


# ---------------------------------------------------------------------------
# Cholesky and triangular-solve adjoints


def _phi(M: np.ndarray) -> np.ndarray:
    """Lower triangle of ``M`` with the diagonal halved."""
    out = np.tril(M)
    out[np.diag_indices_from(out)] *= 0.5
    return out


def _check_chol_factor(L: np.ndarray) -> None:
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError(f"cholesky factor must be square, got shape {L.shape}")
    if np.any(np.diag(L) <= 0.0):
        raise ValueError("cholesky factor has a non-positive diagonal entry")


def chol_rev(L: np.ndarray, Lbar: np.ndarray) -> np.ndarray:
    """Unblocked reference adjoint of ``L = cholesky(A)``.

    Returns the symmetric adjoint ``sym(L^-T P L^-1)`` with
    ``P = phi(L^T tril(Lbar))``. Entries of ``Lbar`` above the diagonal are
    ignored because the matching entries of ``L`` are structurally zero.
    """
    L = np.asarray(L, dtype=np.float64)
    Lbar = np.asarray(Lbar, dtype=np.float64)
    _check_chol_factor(L)
    if Lbar.shape != L.shape:
        raise ValueError(f"Lbar shape {Lbar.shape} does not match L shape {L.shape}")
    P = _phi(L.T @ np.tril(Lbar))
    X = solve_triangular(L, P, lower=True, trans="T", check_finite=False)
    M = solve_triangular(L, X.T, lower=True, trans="T", check_finite=False).T
    return 0.5 * (M + M.T)


def _sym_to_tril(S: np.ndarray) -> np.ndarray:
    T = np.tril(2.0 * S)
    T[np.diag_indices_from(T)] = np.diag(S)
    return T


def chol_rev_blocked(L: np.ndarray, Lbar: np.ndarray, block_size: int = DEFAULT_BLOCK_SIZE) -> np.ndarray:
    """Blocked adjoint of the Cholesky factorisation.

    Walks the factor in column blocks of ``block_size`` from the bottom-right
    corner, keeping the running adjoint in lower-triangular form (each
    off-diagonal entry holds the derivative with respect to the lower copy of
    the symmetric input). Diagonal blocks are handed to :func:`chol_rev`.
    The result is reported in the same full symmetric form as
    :func:`chol_rev`.
    """
    if block_size < 1:
        raise ValueError(f"block_size must be positive, got {block_size}")
    L = np.asarray(L, dtype=np.float64)
    Lbar = np.asarray(Lbar, dtype=np.float64)
    n = L.shape[0]
    if n <= block_size:
        return chol_rev(L, Lbar)
    _check_chol_factor(L)
    if Lbar.shape != L.shape:
        raise ValueError(f"Lbar shape {Lbar.shape} does not match L shape {L.shape}")

    Abar = np.tril(Lbar)
    for k in range(n, 0, -block_size):
        j = max(0, k - block_size)
        R = L[j:k, :j]
        D = L[j:k, j:k]
        B = L[k:, :j]
        C = L[k:, j:k]
        # C = (A_CD - B R^T) D^-T
        Mbar = solve_triangular(D, Abar[k:, j:k].T, lower=True, trans="T", check_finite=False).T
        Abar[k:, j:k] = Mbar
        Abar[k:, :j] -= Mbar @ R
        Abar[j:k, :j] -= Mbar.T @ B
        Dbar = Abar[j:k, j:k] - np.tril(Mbar.T @ C)
        # D = chol(A_DD - R R^T)
        Nbar = _sym_to_tril(chol_rev(D, Dbar))
        Abar[j:k, j:k] = Nbar
        Abar[j:k, :j] -= (Nbar + Nbar.T) @ R
    return 0.5 * (Abar + Abar.T)


def trisolve_rev(
    T: np.ndarray,
    B: np.ndarray | None,
    X: np.ndarray,
    Xbar: np.ndarray,
    lower: bool = True,
    transpose: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Adjoints ``(Tbar, Bbar)`` of ``X = op(T)^-1 B``.

    ``op(T)`` is ``T^T`` when ``transpose`` is set. ``B`` is accepted for
    symmetry with the forward call but is not needed. For the lower,
    non-transposed case ``Bbar = T^-T Xbar`` and ``Tbar = tril(-Bbar X^T)``.
    """
    T = np.asarray(T, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    Xbar = np.asarray(Xbar, dtype=np.float64)
    if T.shape[0] != T.shape[1] or X.shape[0] != T.shape[0] or Xbar.shape != X.shape:
        raise ValueError(f"shape mismatch: T {T.shape}, X {X.shape}, Xbar {Xbar.shape}")
    if B is not None and np.shape(B) != X.shape:
        raise ValueError(f"shape mismatch: B {np.shape(B)}, X {X.shape}")
    Bbar = solve_triangular(T, Xbar, lower=lower, trans="N" if transpose else "T", check_finite=False)
    if transpose:
        Tbar = -(X @ Bbar.T)
    else:
        Tbar = -(Bbar @ X.T)
    Tbar = np.tril(Tbar) if lower else np.triu(Tbar)
    return Tbar, Bbar


# ---------------------------------------------------------------------------
# Operation table


@dataclass(frozen=True)
class OpDef:
    arity: int
    shape: Callable[..., tuple[int, int] | None]
    forward: Callable[..., np.ndarray]
    backward: Callable[..., list]


def _same_shape(a, b, **_):
    return a if a == b else None


def _matmul_shape(a, b, **_):
    return (a[0], b[1]) if a[1] == b[0] else None


def _square_shape(a, **_):
    return a if a[0] == a[1] else None


def _scale_shape(s, x, **_):
    return x if s == (1, 1) else None


def _add_row_shape(x, r, **_):
    return x if r == (1, x[1]) else None


def _add_col_shape(x, c, **_):
    return x if c == (x[0], 1) else None


def _diag_part_shape(a, **_):
    return (a[0], 1) if a[0] == a[1] else None


def _make_diag_shape(a, **_):
    return (a[0], a[0]) if a[1] == 1 else None


def _trisolve_shape(t, b, **_):
    return b if t[0] == t[1] == b[0] else None


def _cholesky_forward(a, node_id=None, **_):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(node_id) from exc


def _cholesky_backward(ins, out, g, block_size=DEFAULT_BLOCK_SIZE, **_):
    return [chol_rev_blocked(out, g, block_size)]


def _trisolve_forward(t, b, lower=True, transpose=False, **_):
    return solve_triangular(t, b, lower=lower, trans="T" if transpose else "N", check_finite=False)


def _trisolve_backward(ins, out, g, lower=True, transpose=False, **_):
    Tbar, Bbar = trisolve_rev(ins[0], None, out, g, lower=lower, transpose=transpose)
    return [Tbar, Bbar]


def _sqrt_forward(a, **_):
    return np.sqrt(np.maximum(a, 0.0))


def _sqrt_backward(ins, out, g, **_):
    safe = np.where(out > 0.0, out, 1.0)
    return [np.where(out > 0.0, 0.5 * g / safe, 0.0)]


def _log_ndtr_backward(ins, out, g, **_):
    x = ins[0]
    # phi(x) / Phi(x) evaluated in log space
    return [g * np.exp(-0.5 * x * x - 0.5 * np.log(2.0 * np.pi) - out)]


OPS: dict[str, OpDef] = {
    "add": OpDef(2, _same_shape, lambda a, b, **_: a + b, lambda ins, out, g, **_: [g, g]),
    "subtract": OpDef(2, _same_shape, lambda a, b, **_: a - b, lambda ins, out, g, **_: [g, -g]),
    "multiply": OpDef(
        2, _same_shape, lambda a, b, **_: a * b, lambda ins, out, g, **_: [g * ins[1], g * ins[0]]
    ),
    "scale": OpDef(
        2,
        _scale_shape,
        lambda s, x, **_: s[0, 0] * x,
        lambda ins, out, g, **_: [np.array([[np.sum(g * ins[1])]]), ins[0][0, 0] * g],
    ),
    "matmul": OpDef(
        2, _matmul_shape, lambda a, b, **_: a @ b, lambda ins, out, g, **_: [g @ ins[1].T, ins[0].T @ g]
    ),
    "transpose": OpDef(
        1, lambda a, **_: (a[1], a[0]), lambda a, **_: np.ascontiguousarray(a.T), lambda ins, out, g, **_: [g.T]
    ),
    "square": OpDef(1, lambda a, **_: a, lambda a, **_: a * a, lambda ins, out, g, **_: [2.0 * ins[0] * g]),
    "log": OpDef(1, lambda a, **_: a, lambda a, **_: np.log(a), lambda ins, out, g, **_: [g / ins[0]]),
    "exp": OpDef(1, lambda a, **_: a, lambda a, **_: np.exp(a), lambda ins, out, g, **_: [g * out]),
    "sum": OpDef(
        1,
        lambda a, **_: (1, 1),
        lambda a, **_: np.array([[np.sum(a)]]),
        lambda ins, out, g, **_: [np.full(ins[0].shape, g[0, 0])],
    ),
    "diag_part": OpDef(
        1, _diag_part_shape, lambda a, **_: np.diag(a).reshape(-1, 1), lambda ins, out, g, **_: [np.diag(g[:, 0])]
    ),
    "make_diag": OpDef(
        1, _make_diag_shape, lambda a, **_: np.diag(a[:, 0]), lambda ins, out, g, **_: [np.diag(g).reshape(-1, 1)]
    ),
    "cholesky": OpDef(1, _square_shape, _cholesky_forward, _cholesky_backward),
    "trisolve": OpDef(2, _trisolve_shape, _trisolve_forward, _trisolve_backward),
    "add_row": OpDef(
        2, _add_row_shape, lambda x, r, **_: x + r, lambda ins, out, g, **_: [g, g.sum(axis=0, keepdims=True)]
    ),
    "add_col": OpDef(
        2, _add_col_shape, lambda x, c, **_: x + c, lambda ins, out, g, **_: [g, g.sum(axis=1, keepdims=True)]
    ),
    # elementwise extensions needed by kernels, transforms and likelihoods
    "sqrt": OpDef(1, lambda a, **_: a, _sqrt_forward, _sqrt_backward),
    "reciprocal": OpDef(1, lambda a, **_: a, lambda a, **_: 1.0 / a, lambda ins, out, g, **_: [-g * out * out]),
    "softplus": OpDef(
        1, lambda a, **_: a, lambda a, **_: np.logaddexp(0.0, a), lambda ins, out, g, **_: [g * expit(ins[0])]
    ),
    "log_ndtr": OpDef(1, lambda a, **_: a, lambda a, **_: _log_ndtr(a), _log_ndtr_backward),
}


# ---------------------------------------------------------------------------
# Tape


@dataclass
class Node:
    id: int
    op: str
    inputs: tuple[int, ...]
    shape: tuple[int, int]
    attrs: dict = field(default_factory=dict)
    value: np.ndarray | None = None
    requires_grad: bool = False


def _as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64, copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ValueError(f"values must be at most two-dimensional, got ndim={arr.ndim}")
    return np.ascontiguousarray(arr)


class Tape:
    """Append-only computation graph.

    Single-writer: record, eval and grad on one tape must not run
    concurrently. Separate tapes are independent.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.leaves: set[int] = set()

    def __len__(self) -> int:
        return len(self.nodes)

    # -- recording --------------------------------------------------------

    def constant(self, value) -> Var:
        arr = _as_matrix(value)
        node_id = len(self.nodes)
        if not np.isfinite(arr).all():
            raise NonFiniteError("constant", node_id)
        self.nodes.append(Node(node_id, "constant", (), arr.shape, value=arr))
        return Var(self, node_id)

    def leaf(self, value=None, shape: tuple[int, int] | None = None) -> Var:
        node_id = len(self.nodes)
        arr = None
        if value is not None:
            arr = _as_matrix(value)
            if not np.isfinite(arr).all():
                raise NonFiniteError("leaf", node_id)
            if shape is not None and tuple(shape) != arr.shape:
                raise ShapeError("leaf", node_id, [arr.shape, tuple(shape)])
            shape = arr.shape
        if shape is None:
            raise ValueError("a leaf needs either a value or a shape")
        self.nodes.append(Node(node_id, "leaf", (), tuple(shape), value=arr, requires_grad=True))
        self.leaves.add(node_id)
        return Var(self, node_id)

    def record(self, op: str, inputs: Sequence[int | Var], **attrs) -> int:
        """Append an operation node and return its id."""
        if op in ("constant", "leaf"):
            raise ValueError(f"use Tape.{op}() to create {op} nodes")
        if op not in OPS:
            raise ValueError(f"unknown op {op!r}")
        spec = OPS[op]
        ids = tuple(i.id if isinstance(i, Var) else int(i) for i in inputs)
        node_id = len(self.nodes)
        if len(ids) != spec.arity:
            raise ShapeError(op, node_id, [], f"expected {spec.arity} inputs, got {len(ids)}")
        if ids and not (0 <= min(ids) and max(ids) < node_id):
            raise ValueError(f"input ids {ids} do not all exist on this tape")
        nodes = [self.nodes[i] for i in ids]
        shapes = [n.shape for n in nodes]
        out_shape = spec.shape(*shapes, **attrs)
        if out_shape is None:
            raise ShapeError(op, node_id, shapes)
        node = Node(
            node_id,
            op,
            ids,
            out_shape,
            attrs=dict(attrs),
            requires_grad=any(n.requires_grad for n in nodes),
        )
        if all(n.value is not None for n in nodes):
            node.value = self._compute(node)
        self.nodes.append(node)
        return node_id

    def _compute(self, node: Node) -> np.ndarray:
        spec = OPS[node.op]
        vals = [self.nodes[i].value for i in node.inputs]
        with np.errstate(all="ignore"):
            out = spec.forward(*vals, node_id=node.id, **node.attrs)
        if not np.isfinite(out).all():
            raise NonFiniteError(node.op, node.id)
        return out

    # -- evaluation -------------------------------------------------------

    def eval(self, root: int | Var, bindings: dict | None = None) -> np.ndarray:
        """Recompute every node up to ``root`` in id order.

        ``bindings`` maps leaf ids (or leaf Vars) to values. Leaves not in
        ``bindings`` keep the value they were created with; a leaf with no
        value at all raises :class:`UnboundLeafError`.
        """
        root_id = root.id if isinstance(root, Var) else int(root)
        bound = {}
        for key, val in (bindings or {}).items():
            k = key.id if isinstance(key, Var) else int(key)
            if k not in self.leaves:
                raise ValueError(f"node {k} is not a leaf")
            arr = _as_matrix(val)
            if arr.shape != self.nodes[k].shape:
                raise ShapeError("leaf", k, [self.nodes[k].shape, arr.shape], "binding shape differs")
            if not np.isfinite(arr).all():
                raise NonFiniteError("leaf", k)
            bound[k] = arr
        needed = self._ancestors(root_id)
        for node in self.nodes[: root_id + 1]:
            if node.id not in needed:
                continue
            if node.op == "leaf":
                if node.id in bound:
                    node.value = bound[node.id]
                elif node.value is None:
                    raise UnboundLeafError(node.id)
            elif node.op != "constant":
                node.value = self._compute(node)
        return self.nodes[root_id].value

    def _ancestors(self, root_id: int) -> set[int]:
        seen = {root_id}
        stack = [root_id]
        while stack:
            for i in self.nodes[stack.pop()].inputs:
                if i not in seen:
                    seen.add(i)
                    stack.append(i)
        return seen

    def grad(self, root: int | Var, wrt: Sequence[int | Var]) -> dict[int, np.ndarray]:
        """Adjoints of a scalar ``root`` with respect to the leaves in ``wrt``."""
        root_id = root.id if isinstance(root, Var) else int(root)
        rnode = self.nodes[root_id]
        if rnode.shape != (1, 1):
            raise ShapeError("grad", root_id, [rnode.shape], "root must be 1x1")
        if rnode.value is None:
            raise TapeError(f"node {root_id} has not been evaluated")
        wrt_ids = [w.id if isinstance(w, Var) else int(w) for w in wrt]
        for w in wrt_ids:
            if w not in self.leaves:
                raise ValueError(f"node {w} is not a leaf")
        adj: dict[int, np.ndarray] = {root_id: np.ones((1, 1))}
        for node in reversed(self.nodes[: root_id + 1]):
            g = adj.get(node.id)
            if g is None or not node.inputs or not node.requires_grad:
                continue
            ins = [self.nodes[i].value for i in node.inputs]
            contribs = OPS[node.op].backward(ins, node.value, g, **node.attrs)
            for i, c in zip(node.inputs, contribs):
                if not self.nodes[i].requires_grad:
                    continue
                if i in adj:
                    adj[i] = adj[i] + c
                else:
                    adj[i] = c
        return {w: adj.get(w, np.zeros(self.nodes[w].shape)) for w in wrt_ids}

    def dump(self) -> str:
        """Line-oriented text form: ``id op RxC inputs`` per node."""
        lines = []
        for n in self.nodes:
            ins = ",".join(str(i) for i in n.inputs) or "-"
            lines.append(f"{n.id} {n.op} {n.shape[0]}x{n.shape[1]} {ins}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Var handle with operator overloading


class Var:
    """Handle to a node on a tape; arithmetic records new nodes."""

    __slots__ = ("tape", "id")
    __array_ufunc__ = None

    def __init__(self, tape: Tape, node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def node(self) -> Node:
        return self.tape.nodes[self.id]

    @property
    def shape(self) -> tuple[int, int]:
        return self.tape.nodes[self.id].shape

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    def __repr__(self) -> str:
        n = self.node
        return f"Var(id={n.id}, op={n.op}, shape={n.shape})"

    def _lift(self, other) -> Var:
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("cannot combine Vars from different tapes")
            return other
        arr = np.asarray(other, dtype=np.float64)
        if arr.ndim == 0:
            return self.tape.constant(np.full(self.shape, float(arr)))
        return self.tape.constant(arr)

    def _op(self, op: str, *inputs, **attrs) -> Var:
        return Var(self.tape, self.tape.record(op, inputs, **attrs))

    def __add__(self, other) -> Var:
        return self._op("add", self, self._lift(other))

    def __radd__(self, other) -> Var:
        return self._op("add", self._lift(other), self)

    def __sub__(self, other) -> Var:
        return self._op("subtract", self, self._lift(other))

    def __rsub__(self, other) -> Var:
        return self._op("subtract", self._lift(other), self)

    def __mul__(self, other) -> Var:
        if not isinstance(other, Var):
            if np.ndim(other) == 0:
                return self._op("scale", self.tape.constant(float(other)), self)
            other = self._lift(other)
        if other.shape == self.shape:
            return self._op("multiply", self, other)
        if other.shape == (1, 1):
            return self._op("scale", other, self)
        if self.shape == (1, 1):
            return self._op("scale", self, other)
        return self._op("multiply", self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Var:
        if isinstance(other, Var):
            return self * other._op("reciprocal", other)
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self) -> Var:
        return self * -1.0

    def __matmul__(self, other) -> Var:
        return self._op("matmul", self, self._lift(other))

    def __rmatmul__(self, other) -> Var:
        return self._op("matmul", self._lift(other), self)

    @property
    def T(self) -> Var:
        return self._op("transpose", self)


# ---------------------------------------------------------------------------
# Functional forms


def _unary(op: str) -> Callable[[Var], Var]:
    def fn(x: Var) -> Var:
        return x._op(op, x)

    fn.__name__ = op
    fn.__doc__ = f"Record ``{op}`` of ``x``."
    return fn


exp = _unary("exp")
log = _unary("log")
square = _unary("square")
sqrt = _unary("sqrt")
softplus = _unary("softplus")
log_ndtr = _unary("log_ndtr")
reciprocal = _unary("reciprocal")
reduce_sum = _unary("sum")
diag_part = _unary("diag_part")
make_diag = _unary("make_diag")
cholesky = _unary("cholesky")


def trisolve(T: Var, B: Var, lower: bool = True, transpose: bool = False) -> Var:
    """Solve ``op(T) X = B`` for triangular ``T``."""
    return T._op("trisolve", T, T._lift(B), lower=bool(lower), transpose=bool(transpose))


def add_row(x: Var, row: Var) -> Var:
    """Add a 1xm row vector to every row of an nxm matrix."""
    return x._op("add_row", x, x._lift(row))


def add_col(x: Var, col: Var) -> Var:
    """Add an nx1 column vector to every column of an nxm matrix."""
    return x._op("add_col", x, x._lift(col))


def row_sums(x: Var) -> Var:
    """nxm -> nx1."""
    return x @ np.ones((x.shape[1], 1))


def col_sums(x: Var) -> Var:
    """nxm -> 1xm."""
    return np.ones((1, x.shape[0])) @ x


def tile_cols(col: Var, m: int) -> Var:
    """Repeat an nx1 column m times: nx1 -> nxm."""
    return col @ np.ones((1, m))
