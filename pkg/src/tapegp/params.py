"""Constrained parameters.

A :class:`Param` stores its value in unconstrained space and maps it through
a :class:`Transform` whenever the constrained value is needed. The same
object is a plain attribute on a model (``param.value``, ``param.assign``)
and a leaf on a tape (via :class:`Frame`), so optimisers and samplers work
on the flat unconstrained free state while models read constrained values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, gammaln

from . import adgraph as ad

TRANSFORM_SHIFT = 1e-6


class Transform:
    """Elementwise bijection from unconstrained to constrained space."""

    kind = "identity"

    def forward(self, x):
        return np.array(x, dtype=np.float64)

    def backward(self, y):
        return np.array(y, dtype=np.float64)

    def log_jacobian(self, x) -> float:
        return 0.0

    def forward_var(self, x: ad.Var) -> ad.Var:
        return x

    def log_jacobian_var(self, x: ad.Var) -> ad.Var | None:
        return None

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class Identity(Transform):
    kind = "identity"


class Positive(Transform):
    """Shifted softplus: ``y = log(1 + exp(x)) + 1e-6``."""

    kind = "positive"

    def __init__(self, shift: float = TRANSFORM_SHIFT):
        self.shift = shift

    def forward(self, x):
        return np.logaddexp(0.0, np.asarray(x, dtype=np.float64)) + self.shift

    def backward(self, y):
        y = np.asarray(y, dtype=np.float64)
        if np.any(y <= self.shift):
            raise ValueError(f"value outside the positive transform's image (must exceed {self.shift})")
        z = y - self.shift
        big = z > 20.0
        with np.errstate(over="ignore"):
            out = np.where(big, z + np.log1p(-np.exp(-np.where(big, z, 20.0))), np.log(np.expm1(np.where(big, 1.0, z))))
        return out

    def log_jacobian(self, x) -> float:
        # log sigmoid(x) = -softplus(-x)
        return float(-np.sum(np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))))

    def forward_var(self, x: ad.Var) -> ad.Var:
        return ad.softplus(x) + self.shift

    def log_jacobian_var(self, x: ad.Var) -> ad.Var:
        return -ad.reduce_sum(ad.softplus(-x))


IDENTITY = Identity()
POSITIVE = Positive()


def transform_from_kind(kind: str) -> Transform:
    if kind == "identity":
        return IDENTITY
    if kind == "positive":
        return POSITIVE
    raise ValueError(f"unknown transform kind {kind!r}")


@dataclass(frozen=True)
class Prior:
    """Prior on the constrained value of a parameter.

    ``kind`` is ``gaussian`` (mean, variance), ``gamma`` (shape, rate) or
    ``uniform`` (low, high). The density is summed over all entries.
    """

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in ("gaussian", "gamma", "uniform"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "gaussian" and self.b <= 0:
            raise ValueError("gaussian prior variance must be positive")
        if self.kind == "gamma" and (self.a <= 0 or self.b <= 0):
            raise ValueError("gamma prior shape and rate must be positive")
        if self.kind == "uniform" and not self.low < self.high:
            raise ValueError("uniform prior needs low < high")

    @classmethod
    def gaussian(cls, mean: float, variance: float) -> Prior:
        return cls("gaussian", float(mean), float(variance))

    @classmethod
    def gamma(cls, shape: float, rate: float) -> Prior:
        return cls("gamma", float(shape), float(rate))

    @classmethod
    def uniform(cls, low: float, high: float) -> Prior:
        return cls("uniform", float(low), float(high))

    @property
    def low(self) -> float:
        return self.a

    @property
    def high(self) -> float:
        return self.b

    def _check_support(self, x: np.ndarray) -> None:
        if self.kind == "gamma" and np.any(x <= 0):
            raise ValueError("gamma prior evaluated outside its support")
        if self.kind == "uniform" and np.any((x < self.low) | (x > self.high)):
            raise ValueError("uniform prior evaluated outside its support")

    def log_density(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        self._check_support(x)
        n = x.size
        if self.kind == "gaussian":
            return float(-0.5 * n * math.log(2 * math.pi * self.b) - np.sum((x - self.a) ** 2) / (2 * self.b))
        if self.kind == "gamma":
            k, rate = self.a, self.b
            return float(n * (k * math.log(rate) - gammaln(k)) + (k - 1) * np.sum(np.log(x)) - rate * np.sum(x))
        return -n * math.log(self.high - self.low)

    def log_density_var(self, x: ad.Var) -> ad.Var:
        self._check_support(x.value)
        n = x.shape[0] * x.shape[1]
        if self.kind == "gaussian":
            const = -0.5 * n * math.log(2 * math.pi * self.b)
            return ad.reduce_sum(ad.square(x - self.a)) * (-0.5 / self.b) + const
        if self.kind == "gamma":
            k, rate = self.a, self.b
            const = n * (k * math.log(rate) - gammaln(k))
            return ad.reduce_sum(ad.log(x)) * (k - 1) - ad.reduce_sum(x) * rate + const
        return x.tape.constant(-n * math.log(self.high - self.low))

    def to_dict(self) -> dict:
        names = {"gaussian": ("mean", "variance"), "gamma": ("shape", "rate"), "uniform": ("low", "high")}[self.kind]
        return {"kind": self.kind, names[0]: self.a, names[1]: self.b}

    @classmethod
    def from_dict(cls, d: dict) -> Prior:
        names = {"gaussian": ("mean", "variance"), "gamma": ("shape", "rate"), "uniform": ("low", "high")}[d["kind"]]
        return cls(d["kind"], float(d[names[0]]), float(d[names[1]]))


class Param:
    """A named, possibly constrained, matrix-valued model parameter."""

    def __init__(
        self,
        value,
        transform: Transform = IDENTITY,
        *,
        name: str = "param",
        fixed: bool = False,
        prior: Prior | None = None,
    ):
        self.name = name
        self.transform = transform
        self.fixed = fixed
        self.prior = prior
        self.unconstrained = self._matrix(transform.backward(self._matrix(value)))

    @staticmethod
    def _matrix(value) -> np.ndarray:
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        return np.ascontiguousarray(arr)

    @classmethod
    def from_unconstrained(cls, unconstrained, transform: Transform = IDENTITY, **kwargs) -> Param:
        p = cls(transform.forward(cls._matrix(unconstrained)), transform, **kwargs)
        p.unconstrained = cls._matrix(unconstrained)
        return p

    @property
    def shape(self) -> tuple[int, int]:
        return self.unconstrained.shape

    @property
    def size(self) -> int:
        return self.unconstrained.size

    @property
    def value(self) -> np.ndarray:
        return self.transform.forward(self.unconstrained)

    def assign(self, value) -> None:
        arr = self._matrix(value)
        if arr.shape != self.shape:
            raise ValueError(f"{self.name}: shape {arr.shape} does not match {self.shape}")
        self.unconstrained = self._matrix(self.transform.backward(arr))

    def __repr__(self) -> str:
        return (
            f"Param(name={self.name!r}, shape={self.shape}, transform={self.transform.kind}, "
            f"fixed={self.fixed}, prior={self.prior})"
        )


def free_params(params: Iterable[Param]) -> list[Param]:
    return [p for p in params if not p.fixed]


def free_state(params: Sequence[Param]) -> np.ndarray:
    """Concatenate unconstrained values of non-fixed params in declaration order."""
    parts = [p.unconstrained.ravel() for p in params if not p.fixed]
    return np.concatenate(parts) if parts else np.zeros(0)


def set_free_state(params: Sequence[Param], vector) -> None:
    vector = np.asarray(vector, dtype=np.float64).ravel()
    free = free_params(params)
    total = sum(p.size for p in free)
    if vector.size != total:
        raise ValueError(f"free state has length {total}, got vector of length {vector.size}")
    offset = 0
    for p in free:
        p.unconstrained = vector[offset : offset + p.size].reshape(p.shape).copy()
        offset += p.size


def snapshot(params: Sequence[Param]) -> list[dict]:
    return [
        {
            "name": p.name,
            "transform": p.transform.kind,
            "fixed": p.fixed,
            "shape": list(p.shape),
            "unconstrained": p.unconstrained.ravel().tolist(),
            "prior": p.prior.to_dict() if p.prior is not None else None,
        }
        for p in params
    ]


def dumps_snapshot(params: Sequence[Param]) -> str:
    # float repr is the shortest string that round-trips exactly
    return json.dumps(snapshot(params), indent=1)


def params_from_snapshot(doc: list[dict]) -> list[Param]:
    out = []
    for d in doc:
        shape = tuple(d["shape"])
        prior = Prior.from_dict(d["prior"]) if d.get("prior") else None
        out.append(
            Param.from_unconstrained(
                np.array(d["unconstrained"], dtype=np.float64).reshape(shape),
                transform_from_kind(d["transform"]),
                name=d["name"],
                fixed=bool(d["fixed"]),
                prior=prior,
            )
        )
    return out


def load_snapshot(params: Sequence[Param], doc: list[dict]) -> None:
    """Overwrite ``params`` in place from a snapshot, matching by name."""
    by_name = {d["name"]: d for d in doc}
    for p in params:
        if p.name not in by_name:
            raise KeyError(f"snapshot has no entry for parameter {p.name!r}")
        d = by_name[p.name]
        arr = np.array(d["unconstrained"], dtype=np.float64).reshape(tuple(d["shape"]))
        if arr.shape != p.shape:
            raise ValueError(f"{p.name}: snapshot shape {arr.shape} does not match {p.shape}")
        p.unconstrained = arr
        p.fixed = bool(d["fixed"])
        p.transform = transform_from_kind(d["transform"])
        p.prior = Prior.from_dict(d["prior"]) if d.get("prior") else None


class Frame:
    """Binds params to one tape for a single objective evaluation.

    Free params become leaves holding their unconstrained value; fixed
    params become constants. ``frame[param]`` returns the constrained node,
    created on first access.
    """

    def __init__(self, tape: ad.Tape | None = None):
        self.tape = tape if tape is not None else ad.Tape()
        self._constrained: dict[int, ad.Var] = {}
        self._leaves: dict[int, ad.Var] = {}

    def unconstrained(self, param: Param) -> ad.Var:
        key = id(param)
        if key not in self._leaves:
            if param.fixed:
                self._leaves[key] = self.tape.constant(param.unconstrained)
            else:
                self._leaves[key] = self.tape.leaf(param.unconstrained)
        return self._leaves[key]

    def __getitem__(self, param: Param) -> ad.Var:
        key = id(param)
        if key not in self._constrained:
            self._constrained[key] = param.transform.forward_var(self.unconstrained(param))
        return self._constrained[key]

    def constant(self, value) -> ad.Var:
        return self.tape.constant(value)

    def log_prior(self, params: Sequence[Param], require: bool = False) -> ad.Var:
        """Sum of prior log-densities plus transform log-Jacobians of free params."""
        total = self.tape.constant(0.0)
        for p in params:
            if p.fixed:
                continue
            if p.prior is None:
                if require:
                    raise ValueError(f"parameter {p.name!r} is sampled but has no prior")
                continue
            total = total + p.prior.log_density_var(self[p])
            jac = p.transform.log_jacobian_var(self.unconstrained(p))
            if jac is not None:
                total = total + jac
        return total

    def gradient(self, root: ad.Var, params: Sequence[Param]) -> np.ndarray:
        """Gradient of ``root`` laid out like :func:`free_state`."""
        free = free_params(params)
        leaves = [self._leaves[id(p)] for p in free if id(p) in self._leaves]
        grads = self.tape.grad(root, leaves)
        parts = []
        for p in free:
            leaf = self._leaves.get(id(p))
            g = grads[leaf.id] if leaf is not None else np.zeros(p.shape)
            parts.append(g.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)
