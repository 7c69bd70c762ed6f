"""Observation models.

Each likelihood supplies three things to the inference classes: the
per-datum log density, the per-datum variational expectation
``E_{N(f|mu, v)}[log p(y|f)]`` and predictive moments of ``y``.
``log_prob`` and ``variational_expectations`` build tape nodes (n x 1);
``predict_mean_var`` works on plain arrays.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc, gammaln
from scipy.special import log_ndtr as _log_ndtr

from . import adgraph as ad
from .params import IDENTITY, POSITIVE, Frame, Param
from .quadrature import DEFAULT_POINTS, hermite_rule

__all__ = [
    "Likelihood",
    "Gaussian",
    "Bernoulli",
    "Poisson",
    "MultiClass",
    "parse_likelihood",
    "normal_cdf",
]

_LOG_2PI = math.log(2.0 * math.pi)
# tolerated rounding below zero in variances coming out of conditionals
_VAR_TOL = 1e-12
# added to multiclass latent variances before dividing by the standard
# deviation; leaves any variance above ~1e-184 bit-identical and keeps v = 0 finite
_VAR_FLOOR = 1e-200


def normal_cdf(x):
    """Standard normal CDF as ``erfc(-x / sqrt 2) / 2``."""
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def _column(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y.reshape(-1, 1) if y.ndim <= 1 else y


def _check_var(var: np.ndarray) -> None:
    if np.any(var < -_VAR_TOL):
        raise ValueError(f"negative variance passed to a likelihood (min {np.min(var):.3g})")


class Likelihood:
    kind = "likelihood"
    latent_dim = 1

    def __init__(self, quadrature_points: int = DEFAULT_POINTS):
        self.rule = hermite_rule(quadrature_points)

    def named_parameters(self, prefix: str = "likelihood") -> list[tuple[str, Param]]:
        return []

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]

    def check_targets(self, Y) -> np.ndarray:
        return _column(Y)

    def to_spec(self) -> str:
        return self.kind

    # tape-level -----------------------------------------------------------

    def log_prob(self, frame: Frame, F: ad.Var, Y) -> ad.Var:
        raise NotImplementedError

    def variational_expectations(self, frame: Frame, mu: ad.Var, var: ad.Var, Y) -> ad.Var:
        raise NotImplementedError

    def _nodes(self, mu: ad.Var, var: ad.Var) -> ad.Var:
        """Quadrature abscissae ``mu + sqrt(2 var) x_h`` as an n x H node."""
        row = self.rule.nodes.reshape(1, -1)
        return ad.add_col(ad.sqrt(var * 2.0) @ row, mu)

    def _weights(self) -> np.ndarray:
        return (self.rule.weights / math.sqrt(math.pi)).reshape(-1, 1)

    # array-level ----------------------------------------------------------

    def predict_mean_var(self, mu, var) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def eval_log_prob(self, f, y) -> np.ndarray:
        frame = Frame()
        F = frame.constant(_column(f))
        return self.log_prob(frame, F, y).value[:, 0]

    def eval_variational_expectations(self, mu, var, y) -> np.ndarray:
        frame = Frame()
        out = self.variational_expectations(frame, frame.constant(_column(mu)), frame.constant(_column(var)), y)
        return out.value[:, 0]


class Gaussian(Likelihood):
    kind = "gaussian"

    def __init__(self, variance: float = 1.0, **kwargs):
        super().__init__(**kwargs)
        self.variance = Param(variance, POSITIVE, name="variance")

    def named_parameters(self, prefix="likelihood"):
        return [(f"{prefix}.gaussian.variance", self.variance)]

    def log_prob(self, frame, F, Y):
        Y = self.check_targets(Y)
        s = frame[self.variance]
        n = Y.shape[0]
        quad = ad.square(F - Y) * (ad.reciprocal(s) * -0.5)
        return quad + (ad.log(s) * -0.5 - 0.5 * _LOG_2PI) * np.ones((n, 1))

    def variational_expectations(self, frame, mu, var, Y):
        Y = self.check_targets(Y)
        _check_var(var.value)
        s = frame[self.variance]
        n = Y.shape[0]
        quad = (ad.square(mu - Y) + var) * (ad.reciprocal(s) * -0.5)
        return quad + (ad.log(s) * -0.5 - 0.5 * _LOG_2PI) * np.ones((n, 1))

    def predict_mean_var(self, mu, var):
        mu, var = np.asarray(mu, dtype=np.float64), np.asarray(var, dtype=np.float64)
        _check_var(var)
        return mu.copy(), var + self.variance.value[0, 0]


class Bernoulli(Likelihood):
    """Probit link: ``p(y=1|f) = Phi(f)``, targets in {0, 1}."""

    kind = "bernoulli"

    def check_targets(self, Y):
        Y = _column(Y)
        if not np.all((Y == 0) | (Y == 1)):
            raise ValueError("bernoulli targets must be 0 or 1")
        return Y

    def log_prob(self, frame, F, Y):
        sign = 2.0 * self.check_targets(Y) - 1.0
        return ad.log_ndtr(F * sign)

    def variational_expectations(self, frame, mu, var, Y):
        sign = 2.0 * self.check_targets(Y) - 1.0
        _check_var(var.value)
        nodes = self._nodes(mu, var)
        signs = np.repeat(sign, self.rule.count, axis=1)
        return ad.log_ndtr(nodes * signs) @ self._weights()

    def predict_mean_var(self, mu, var):
        mu, var = np.asarray(mu, dtype=np.float64), np.asarray(var, dtype=np.float64)
        _check_var(var)
        p = normal_cdf(mu / np.sqrt(1.0 + var))
        return p, p * (1.0 - p)


class Poisson(Likelihood):
    """Log link: ``y ~ Poisson(exp(f))``."""

    kind = "poisson"

    def check_targets(self, Y):
        Y = _column(Y)
        if np.any(Y < 0) or np.any(Y != np.round(Y)):
            raise ValueError("poisson targets must be non-negative integers")
        return Y

    def log_prob(self, frame, F, Y):
        Y = self.check_targets(Y)
        return F * Y - ad.exp(F) - gammaln(Y + 1.0)

    def variational_expectations(self, frame, mu, var, Y):
        Y = self.check_targets(Y)
        _check_var(var.value)
        nodes = self._nodes(mu, var)
        Ytile = np.repeat(Y, self.rule.count, axis=1)
        return (nodes * Ytile - ad.exp(nodes)) @ self._weights() - gammaln(Y + 1.0)

    def predict_mean_var(self, mu, var):
        mu, var = np.asarray(mu, dtype=np.float64), np.asarray(var, dtype=np.float64)
        _check_var(var)
        mean = np.exp(mu + 0.5 * var)
        return mean, mean + np.expm1(var) * np.exp(2.0 * mu + var)


class MultiClass(Likelihood):
    """Robust-max multiclass likelihood over ``num_classes`` latent functions.

    ``p(y|f) = 1 - eps`` if ``argmax f = y`` and ``eps / (C - 1)`` otherwise.
    ``eps`` is a fixed parameter by default.
    """

    kind = "multiclass"

    def __init__(self, num_classes: int, epsilon: float = 1e-3, **kwargs):
        super().__init__(**kwargs)
        if num_classes < 2:
            raise ValueError("multiclass needs at least two classes")
        if not 0.0 < epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        self.num_classes = int(num_classes)
        self.latent_dim = self.num_classes
        self.epsilon = Param(epsilon, IDENTITY, name="epsilon", fixed=True)

    def named_parameters(self, prefix="likelihood"):
        return [(f"{prefix}.multiclass.epsilon", self.epsilon)]

    def to_spec(self) -> str:
        return f"multiclass:{self.num_classes}"

    def check_targets(self, Y):
        Y = _column(Y)
        if Y.shape[1] != 1:
            raise ValueError("multiclass targets must be one column of labels")
        if np.any(Y != np.round(Y)) or np.any(Y < 0) or np.any(Y >= self.num_classes):
            raise ValueError(f"multiclass labels must be integers in [0, {self.num_classes})")
        return Y

    def _onehot(self, Y) -> np.ndarray:
        labels = self.check_targets(Y)[:, 0].astype(int)
        return np.eye(self.num_classes)[labels]

    def _mix(self, frame: Frame, p: ad.Var) -> ad.Var:
        eps = frame[self.epsilon]
        off = eps * (1.0 / (self.num_classes - 1))
        ones = np.ones(p.shape)
        return ad.log(p * (1.0 - eps - off) + off * ones)

    def log_prob(self, frame, F, Y):
        onehot = self._onehot(Y)
        if F.shape != onehot.shape:
            raise ValueError(f"latent values have shape {F.shape}, expected {onehot.shape}")
        hit = (np.argmax(F.value, axis=1) == np.argmax(onehot, axis=1)).astype(float).reshape(-1, 1)
        return self._mix(frame, frame.constant(hit))

    def _argmax_probability(self, mu: ad.Var, var: ad.Var, onehot: np.ndarray) -> ad.Var:
        """Quadrature estimate of P(argmax f = y) per datum, as an n x 1 node."""
        H = self.rule.count
        mu_y = ad.row_sums(mu * onehot)
        var_y = ad.row_sums(var * onehot)
        f_y = self._nodes(mu_y, var_y)
        log_cdf = None
        for j in range(self.num_classes):
            e_j = np.zeros((self.num_classes, 1))
            e_j[j] = 1.0
            inv_sd = ad.reciprocal(ad.sqrt(var @ e_j + _VAR_FLOOR))
            z = ad.add_col(f_y, -(mu @ e_j)) * ad.tile_cols(inv_sd, H)
            term = ad.log_ndtr(z) * np.repeat(1.0 - onehot[:, j : j + 1], H, axis=1)
            log_cdf = term if log_cdf is None else log_cdf + term
        return ad.exp(log_cdf) @ self._weights()

    def variational_expectations(self, frame, mu, var, Y):
        onehot = self._onehot(Y)
        if mu.shape != onehot.shape or var.shape != onehot.shape:
            raise ValueError(f"mean/variance have shapes {mu.shape}/{var.shape}, expected {onehot.shape}")
        _check_var(var.value)
        return self._mix(frame, self._argmax_probability(mu, var, onehot))

    def class_probabilities(self, mu, var) -> np.ndarray:
        """Predictive class probabilities, rows summing to one."""
        mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
        var = np.atleast_2d(np.asarray(var, dtype=np.float64))
        _check_var(var)
        C = self.num_classes
        x = self.rule.nodes
        w = self.rule.weights / math.sqrt(math.pi)
        sd = np.sqrt(np.maximum(var, 0.0) + _VAR_FLOOR)
        P = np.empty_like(mu)
        for c in range(C):
            f_c = mu[:, c : c + 1] + math.sqrt(2.0) * sd[:, c : c + 1] * x
            logs = np.zeros_like(f_c)
            for j in range(C):
                if j != c:
                    logs += _log_ndtr((f_c - mu[:, j : j + 1]) / sd[:, j : j + 1])
            P[:, c] = np.exp(logs) @ w
        # quadrature error leaves the column sum slightly off one
        P /= P.sum(axis=1, keepdims=True)
        eps = float(self.epsilon.value[0, 0])
        return (1.0 - eps) * P + eps / (C - 1) * (1.0 - P)

    def predict_mean_var(self, mu, var):
        p = self.class_probabilities(mu, var)
        return p, p * (1.0 - p)


def parse_likelihood(spec: str) -> Likelihood:
    """``gaussian``, ``bernoulli``, ``poisson`` or ``multiclass:<C>``."""
    text = spec.strip().lower()
    if text == "gaussian":
        return Gaussian()
    if text == "bernoulli":
        return Bernoulli()
    if text == "poisson":
        return Poisson()
    if text.startswith("multiclass:"):
        try:
            C = int(text.split(":", 1)[1])
        except ValueError as exc:
            raise ValueError(f"bad class count in {spec!r}") from exc
        return MultiClass(C)
    raise ValueError(f"unknown likelihood {spec!r}; use gaussian, bernoulli, poisson or multiclass:<C>")
