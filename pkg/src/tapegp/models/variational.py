"""Variational models for arbitrary likelihoods: SVGP and VGP."""

from __future__ import annotations

import numpy as np

from .. import adgraph as ad
from ..params import IDENTITY, POSITIVE, Frame, Param
from .base import GPModel
from .conditionals import conditional, gauss_kl, jitter_cholesky, sqrt_factor


class _VariationalMixin:
    """Holds q(u) = N(q_mu, L L^T) per latent, one triangular factor each.

    Each factor is split into a positive diagonal param and a strictly-lower
    param (stored as a full square matrix; entries on and above the diagonal
    are ignored).
    """

    def _init_variational(self, size: int, q_mu=None, q_sqrt=None) -> None:
        L = self.num_latent
        q_mu = np.zeros((size, L)) if q_mu is None else np.asarray(q_mu, dtype=np.float64).reshape(size, L)
        self.q_mu = Param(q_mu, IDENTITY, name="q_mu")
        if q_sqrt is None:
            q_sqrt = [np.eye(size) for _ in range(L)]
        if len(q_sqrt) != L:
            raise ValueError(f"expected {L} q_sqrt factors, got {len(q_sqrt)}")
        self.q_sqrt_diag = []
        self.q_sqrt_lower = []
        for f in q_sqrt:
            f = np.asarray(f, dtype=np.float64)
            if f.shape != (size, size):
                raise ValueError(f"q_sqrt factor shape {f.shape} does not match ({size}, {size})")
            self.q_sqrt_diag.append(Param(np.diag(f).reshape(-1, 1), POSITIVE, name="q_sqrt_diag"))
            self.q_sqrt_lower.append(Param(np.tril(f, k=-1), IDENTITY, name="q_sqrt_lower"))

    def _variational_parameters(self) -> list[tuple[str, Param]]:
        out = [("q_mu", self.q_mu)]
        for l, (d, low) in enumerate(zip(self.q_sqrt_diag, self.q_sqrt_lower)):
            out.append((f"q_sqrt.{l}.diag", d))
            out.append((f"q_sqrt.{l}.lower", low))
        return out

    def q_sqrt_factors(self, frame: Frame) -> list[ad.Var]:
        return [sqrt_factor(frame[d], frame[low]) for d, low in zip(self.q_sqrt_diag, self.q_sqrt_lower)]

    @property
    def q_sqrt(self) -> list[np.ndarray]:
        """Current lower-triangular factors as arrays."""
        return [np.diag(d.value[:, 0]) + np.tril(low.value, k=-1) for d, low in zip(self.q_sqrt_diag, self.q_sqrt_lower)]

    def prior_kl(self, frame: Frame, Z) -> ad.Var:
        q_mu = frame[self.q_mu]
        factors = self.q_sqrt_factors(frame)
        if self.whiten:
            return gauss_kl(q_mu, factors)
        K_chol = jitter_cholesky(self.kernel.K(frame, Z), self.jitter)
        return gauss_kl(q_mu, factors, K_chol)


class SVGP(_VariationalMixin, GPModel):
    """Uncollapsed sparse variational GP; the ELBO supports minibatches.

    ``elbo(batch) = n / |batch| * sum_batch E_q[log p(y|f)] - KL[q(u) || p(u)]``.
    """

    kind = "svgp"

    def __init__(self, data, kernel, likelihood, Z, *, whiten: bool = True, q_mu=None, q_sqrt=None, **kwargs):
        super().__init__(data, kernel, likelihood, **kwargs)
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim == 1:
            Z = Z.reshape(-1, 1)
        if Z.shape[1] != self.data.input_dim:
            raise ValueError("inducing inputs and data have different widths")
        self.Z = Param(Z, IDENTITY, name="Z")
        self.whiten = bool(whiten)
        self._init_variational(Z.shape[0], q_mu, q_sqrt)

    @property
    def num_inducing(self) -> int:
        return self.Z.shape[0]

    def own_parameters(self):
        return [("Z", self.Z)] + self._variational_parameters()

    def build_objective(self, frame, batch=None):
        return self.elbo_var(frame, batch)

    def elbo_var(self, frame: Frame, batch=None) -> ad.Var:
        X, Y = self.data.X, self.data.Y
        n = X.shape[0]
        if batch is not None:
            batch = np.asarray(batch, dtype=int)
            if batch.size == 0:
                raise ValueError("minibatch is empty")
            X, Y = X[batch], Y[batch]
        Z = frame[self.Z]
        mean, var = conditional(
            frame, X, Z, self.kernel, frame[self.q_mu], self.q_sqrt_factors(frame), self.whiten, jitter=self.jitter
        )
        ve = self.likelihood.variational_expectations(frame, mean, var, Y)
        scale = n / X.shape[0]
        return ad.reduce_sum(ve) * scale - self.prior_kl(frame, Z)

    def elbo(self, batch=None) -> float:
        return self.objective(batch)

    def _predict_f(self, frame, Xnew, full_cov):
        return conditional(
            frame,
            Xnew,
            frame[self.Z],
            self.kernel,
            frame[self.q_mu],
            self.q_sqrt_factors(frame),
            self.whiten,
            full_cov,
            jitter=self.jitter,
        )


class VGP(_VariationalMixin, GPModel):
    """Full-covariance variational GP in the whitened parameterisation (Z = X)."""

    kind = "vgp"

    def __init__(self, data, kernel, likelihood, *, q_mu=None, q_sqrt=None, **kwargs):
        super().__init__(data, kernel, likelihood, **kwargs)
        self.whiten = True
        self._init_variational(self.data.num_data, q_mu, q_sqrt)

    def own_parameters(self):
        return self._variational_parameters()

    def build_objective(self, frame, batch=None):
        if batch is not None:
            raise ValueError("vgp does not support minibatches")
        return self.elbo_var(frame)

    def elbo_var(self, frame: Frame) -> ad.Var:
        X, Y = self.data.X, self.data.Y
        mean, var = conditional(frame, X, X, self.kernel, frame[self.q_mu], self.q_sqrt_factors(frame), jitter=self.jitter)
        ve = self.likelihood.variational_expectations(frame, mean, var, Y)
        return ad.reduce_sum(ve) - self.prior_kl(frame, X)

    def elbo(self) -> float:
        return self.objective()

    def _predict_f(self, frame, Xnew, full_cov):
        X = self.data.X
        return conditional(
            frame, Xnew, X, self.kernel, frame[self.q_mu], self.q_sqrt_factors(frame), True, full_cov, jitter=self.jitter
        )
