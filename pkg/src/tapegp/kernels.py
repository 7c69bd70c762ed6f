"""Covariance functions evaluated as tape operations.

Every kernel takes a :class:`~tapegp.params.Frame` so that its parameters
enter the graph as leaves and gradients flow back to them. Inputs may be
numpy arrays (data) or tape nodes (inducing inputs).
"""

from __future__ import annotations

import ast
import math
from typing import Sequence

import numpy as np

from . import adgraph as ad
from .params import POSITIVE, Frame, Param

__all__ = [
    "Kernel",
    "RBF",
    "Matern32",
    "Linear",
    "White",
    "Constant",
    "Sum",
    "Product",
    "combine",
    "parse_kernel",
    "kmatrix",
    "kdiag",
]


def _as_var(frame: Frame, X) -> ad.Var:
    if isinstance(X, ad.Var):
        return X
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return frame.constant(arr)


def _fmt_bool(b: bool) -> str:
    return "true" if b else "false"


class Kernel:
    kind = "kernel"

    def __init__(self, active_dims: Sequence[int] | None = None):
        self.active_dims = None if active_dims is None else [int(i) for i in active_dims]

    # widths -------------------------------------------------------------

    @property
    def input_dim(self) -> int | None:
        """Exact number of input columns this kernel requires, if fixed."""
        return None

    def _select(self, frame: Frame, X: ad.Var) -> ad.Var:
        d = X.shape[1]
        if self.input_dim is not None and d != self.input_dim:
            raise ValueError(f"{self.kind}: inputs have {d} columns, kernel expects {self.input_dim}")
        if self.active_dims is None:
            return X
        if max(self.active_dims) >= d or min(self.active_dims) < 0:
            raise ValueError(f"{self.kind}: active dims {self.active_dims} out of range for {d} columns")
        sel = np.zeros((d, len(self.active_dims)))
        sel[self.active_dims, np.arange(len(self.active_dims))] = 1.0
        return X @ sel

    # parameters -----------------------------------------------------------

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "kernel") -> list[tuple[str, Param]]:
        raise NotImplementedError

    # evaluation -----------------------------------------------------------

    def K(self, frame: Frame, X, X2=None) -> ad.Var:
        X = self._select(frame, _as_var(frame, X))
        X2 = None if X2 is None else self._select(frame, _as_var(frame, X2))
        if X2 is not None and X.shape[1] != X2.shape[1]:
            raise ValueError(f"{self.kind}: column counts differ ({X.shape[1]} vs {X2.shape[1]})")
        return self._K(frame, X, X2)

    def Kdiag(self, frame: Frame, X) -> ad.Var:
        return self._Kdiag(frame, self._select(frame, _as_var(frame, X)))

    def _K(self, frame: Frame, X: ad.Var, X2: ad.Var | None) -> ad.Var:
        raise NotImplementedError

    def _Kdiag(self, frame: Frame, X: ad.Var) -> ad.Var:
        raise NotImplementedError

    def _active_expr(self) -> list[str]:
        return [] if self.active_dims is None else [f"active_dims={self.active_dims}"]

    def to_expr(self) -> str:
        raise NotImplementedError

    def __add__(self, other: Kernel) -> Sum:
        return Sum([self, other])

    def __mul__(self, other: Kernel) -> Product:
        return Product([self, other])


class _Variance(Kernel):
    def __init__(self, variance: float = 1.0, active_dims=None):
        super().__init__(active_dims)
        self.variance = Param(variance, POSITIVE, name="variance")

    def named_parameters(self, prefix="kernel"):
        return [(f"{prefix}.{self.kind}.variance", self.variance)]

    def to_expr(self) -> str:
        return f"{self.kind}({', '.join(self._active_expr())})"


class Stationary(_Variance):
    """Base for kernels of the ARD-scaled distance between inputs."""

    def __init__(self, variance: float = 1.0, lengthscales=1.0, active_dims=None):
        super().__init__(variance, active_dims)
        ls = np.asarray(lengthscales, dtype=np.float64)
        self.ard = ls.ndim >= 1
        self.lengthscales = Param(ls.reshape(1, -1), POSITIVE, name="lengthscales")

    @property
    def input_dim(self):
        if self.ard and self.active_dims is None:
            return self.lengthscales.shape[1]
        return None

    def _select(self, frame, X):
        X = super()._select(frame, X)
        if self.ard and X.shape[1] != self.lengthscales.shape[1]:
            raise ValueError(
                f"{self.kind}: {X.shape[1]} active columns but {self.lengthscales.shape[1]} lengthscales"
            )
        return X

    def named_parameters(self, prefix="kernel"):
        return super().named_parameters(prefix) + [(f"{prefix}.{self.kind}.lengthscales", self.lengthscales)]

    def _scaled(self, frame: Frame, X: ad.Var) -> ad.Var:
        inv = ad.reciprocal(frame[self.lengthscales])
        if self.ard:
            return X @ ad.make_diag(inv.T)
        return X * inv

    def scaled_sqdist(self, frame: Frame, X: ad.Var, X2: ad.Var | None) -> ad.Var:
        Xs = self._scaled(frame, X)
        xx = ad.row_sums(ad.square(Xs))
        if X2 is None:
            X2s, yy = Xs, xx.T
        else:
            X2s = self._scaled(frame, X2)
            yy = ad.row_sums(ad.square(X2s)).T
        cross = (Xs @ X2s.T) * -2.0
        return ad.add_col(ad.add_row(cross, yy), xx)

    def _Kdiag(self, frame, X):
        return frame[self.variance] * np.ones((X.shape[0], 1))

    def to_expr(self) -> str:
        args = [f"ard={_fmt_bool(self.ard)}"] + self._active_expr()
        return f"{self.kind}({', '.join(args)})"


class RBF(Stationary):
    """``var * exp(-r^2 / 2)`` with ``r`` the lengthscale-scaled distance."""

    kind = "rbf"

    def _K(self, frame, X, X2):
        r2 = self.scaled_sqdist(frame, X, X2)
        return frame[self.variance] * ad.exp(r2 * -0.5)


class Matern32(Stationary):
    """``var * (1 + sqrt(3) r) exp(-sqrt(3) r)``."""

    kind = "matern32"

    def _K(self, frame, X, X2):
        # sqrt clamps rounding negatives of the expanded distance to zero
        r = ad.sqrt(self.scaled_sqdist(frame, X, X2)) * math.sqrt(3.0)
        return frame[self.variance] * ((r + 1.0) * ad.exp(-r))


class Linear(_Variance):
    """``var * x^T x'``."""

    kind = "linear"

    def _K(self, frame, X, X2):
        X2 = X if X2 is None else X2
        return frame[self.variance] * (X @ X2.T)

    def _Kdiag(self, frame, X):
        return frame[self.variance] * ad.row_sums(ad.square(X))


class Constant(_Variance):
    kind = "constant"

    def _K(self, frame, X, X2):
        m = X.shape[0] if X2 is None else X2.shape[0]
        return frame[self.variance] * np.ones((X.shape[0], m))

    def _Kdiag(self, frame, X):
        return frame[self.variance] * np.ones((X.shape[0], 1))


class White(_Variance):
    """``var`` on the diagonal of a same-input call; zero for any cross call."""

    kind = "white"

    def _K(self, frame, X, X2):
        if X2 is None:
            return frame[self.variance] * np.eye(X.shape[0])
        return frame.constant(np.zeros((X.shape[0], X2.shape[0])))

    def _Kdiag(self, frame, X):
        return frame[self.variance] * np.ones((X.shape[0], 1))


class _Combination(Kernel):
    def __init__(self, children: Sequence[Kernel]):
        super().__init__(None)
        children = list(children)
        if len(children) < 2:
            raise ValueError(f"{self.kind} needs at least two children, got {len(children)}")
        dims = {c.input_dim for c in children if c.input_dim is not None}
        if len(dims) > 1:
            raise ValueError(f"{self.kind}: children expect different input widths {sorted(dims)}")
        self.children = children

    @property
    def input_dim(self):
        dims = [c.input_dim for c in self.children if c.input_dim is not None]
        return dims[0] if dims else None

    def named_parameters(self, prefix="kernel"):
        out = []
        for i, c in enumerate(self.children):
            out.extend(c.named_parameters(f"{prefix}.{self.kind}.{i}"))
        return out

    def K(self, frame, X, X2=None):
        X = _as_var(frame, X)
        X2 = None if X2 is None else _as_var(frame, X2)
        return self._reduce([c.K(frame, X, X2) for c in self.children])

    def Kdiag(self, frame, X):
        X = _as_var(frame, X)
        return self._reduce([c.Kdiag(frame, X) for c in self.children])

    def _reduce(self, parts: list[ad.Var]) -> ad.Var:
        raise NotImplementedError

    def to_expr(self) -> str:
        return f"{self.kind}({', '.join(c.to_expr() for c in self.children)})"


class Sum(_Combination):
    kind = "sum"

    def _reduce(self, parts):
        out = parts[0]
        for p in parts[1:]:
            out = out + p
        return out


class Product(_Combination):
    kind = "product"

    def _reduce(self, parts):
        out = parts[0]
        for p in parts[1:]:
            out = out * p
        return out


def combine(kind: str, children: Sequence[Kernel]) -> Kernel:
    if kind == "sum":
        return Sum(children)
    if kind == "product":
        return Product(children)
    raise ValueError(f"unknown combination {kind!r}")


def kmatrix(kernel: Kernel, X1, X2=None) -> np.ndarray:
    """Evaluate the covariance matrix with current parameter values."""
    frame = Frame()
    return kernel.K(frame, X1, X2).value


def kdiag(kernel: Kernel, X) -> np.ndarray:
    frame = Frame()
    return kernel.Kdiag(frame, X).value[:, 0]


# ---------------------------------------------------------------------------
# Expression parser: e.g. ``sum(rbf(ard=true), white(variance=0.1))``

_LEAVES = {"rbf": RBF, "matern32": Matern32, "linear": Linear, "white": White, "constant": Constant}


def _literal(node: ast.expr):
    if isinstance(node, ast.Name) and node.id in ("true", "false", "True", "False"):
        return node.id.lower() == "true"
    return ast.literal_eval(node)


def _build(node: ast.expr, input_dim: int | None) -> Kernel:
    if isinstance(node, ast.Name) and node.id.lower() in _LEAVES:
        node = ast.Call(func=node, args=[], keywords=[])
    if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name):
        raise ValueError(f"kernel expression must be a call like rbf(...), got {ast.unparse(node)!r}")
    name = node.func.id.lower()
    if name in ("sum", "product"):
        if node.keywords:
            raise ValueError(f"{name}() takes only kernel arguments")
        return combine(name, [_build(a, input_dim) for a in node.args])
    if name not in _LEAVES:
        raise ValueError(f"unknown kernel {name!r}; choose from {sorted(_LEAVES)} or sum/product")
    if node.args:
        raise ValueError(f"{name}() takes keyword arguments only")
    kw = {k.arg: _literal(k.value) for k in node.keywords}
    cls = _LEAVES[name]
    ard = bool(kw.pop("ard", False))
    args = {}
    if "variance" in kw:
        args["variance"] = float(kw.pop("variance"))
    if "active_dims" in kw:
        args["active_dims"] = list(kw.pop("active_dims"))
    if issubclass(cls, Stationary):
        ls = kw.pop("lengthscales", 1.0)
        if ard and np.ndim(ls) == 0:
            width = len(args["active_dims"]) if "active_dims" in args else input_dim
            if width is None:
                raise ValueError(f"{name}(ard=true) needs the input dimension")
            ls = np.full(width, float(ls))
        args["lengthscales"] = ls
    elif ard:
        raise ValueError(f"{name}() does not take ard")
    if kw:
        raise ValueError(f"unexpected arguments to {name}(): {sorted(kw)}")
    return cls(**args)


def parse_kernel(expr: str, input_dim: int | None = None) -> Kernel:
    """Build a kernel from a nested call expression."""
    try:
        tree = ast.parse(expr.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse kernel expression {expr!r}: {exc.msg}") from exc
    return _build(tree.body, input_dim)
