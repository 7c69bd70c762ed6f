"""Models sampled with HMC: GPMC (full) and SGPMC (sparse).

Latent values are whitened, ``f = L v`` with ``v ~ N(0, I)``; the sampled
state is the free state of every parameter. Free hyperparameters must carry
a prior; their log density is evaluated on the constrained value and the
transform's log-Jacobian is added so the chain targets the right density in
unconstrained space.
"""

from __future__ import annotations

import numpy as np

from .. import adgraph as ad
from ..params import IDENTITY, Frame, Param
from .base import GPModel
from .conditionals import LOG_2PI, conditional, jitter_cholesky


class _MCMCModel(GPModel):
    def _init_latents(self, size: int, V=None) -> None:
        L = self.num_latent
        V = np.zeros((size, L)) if V is None else np.asarray(V, dtype=np.float64).reshape(size, L)
        self.V = Param(V, IDENTITY, name="V")

    def sampled_hyperparameters(self) -> list[Param]:
        return [p for p in self.parameters() if p is not self.V and not p.fixed]

    def check_priors(self) -> None:
        missing = [p.name for p in self.sampled_hyperparameters() if p.prior is None]
        if missing:
            raise ValueError(f"sampled hyperparameters need priors; missing for {missing}")

    def _latent_prior(self, frame: Frame) -> ad.Var:
        V = frame[self.V]
        size = V.shape[0] * V.shape[1]
        return ad.reduce_sum(ad.square(V)) * -0.5 - 0.5 * size * LOG_2PI

    def _hyper_prior(self, frame: Frame) -> ad.Var:
        self.check_priors()
        return frame.log_prior(self.sampled_hyperparameters(), require=True)

    def build_objective(self, frame, batch=None):
        if batch is not None:
            raise ValueError(f"{self.kind} does not support minibatches")
        return self.log_target_var(frame)

    def log_target(self) -> float:
        return self.objective()


class GPMC(_MCMCModel):
    """``log p(y | L v) + log N(v | 0, I) + log p(theta)`` with ``L = chol(Kxx)``."""

    kind = "gpmc"

    def __init__(self, data, kernel, likelihood, *, V=None, **kwargs):
        super().__init__(data, kernel, likelihood, **kwargs)
        self._init_latents(self.data.num_data, V)

    def own_parameters(self):
        return [("V", self.V)]

    def log_target_var(self, frame: Frame) -> ad.Var:
        X, Y = self.data.X, self.data.Y
        L = jitter_cholesky(self.kernel.K(frame, X), self.jitter)
        F = L @ frame[self.V]
        loglik = ad.reduce_sum(self.likelihood.log_prob(frame, F, Y))
        return loglik + self._latent_prior(frame) + self._hyper_prior(frame)

    def _predict_f(self, frame, Xnew, full_cov):
        X = self.data.X
        return conditional(frame, Xnew, X, self.kernel, frame[self.V], None, True, full_cov, jitter=self.jitter)


class SGPMC(_MCMCModel):
    """Sparse MCMC: ``u = Luu v`` at inducing inputs ``Z``.

    The data term is ``sum_i E[log p(y_i | f_i)]`` under the conditional of
    ``f_i`` given a deterministic ``u``, which keeps the conditional variance.
    ``Z`` is fixed by default.
    """

    kind = "sgpmc"

    def __init__(self, data, kernel, likelihood, Z, *, V=None, fix_inducing: bool = True, **kwargs):
        super().__init__(data, kernel, likelihood, **kwargs)
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim == 1:
            Z = Z.reshape(-1, 1)
        if Z.shape[1] != self.data.input_dim:
            raise ValueError("inducing inputs and data have different widths")
        self.Z = Param(Z, IDENTITY, name="Z", fixed=fix_inducing)
        self._init_latents(Z.shape[0], V)

    def own_parameters(self):
        return [("Z", self.Z), ("V", self.V)]

    def log_target_var(self, frame: Frame) -> ad.Var:
        X, Y = self.data.X, self.data.Y
        mean, var = conditional(frame, X, frame[self.Z], self.kernel, frame[self.V], None, True, jitter=self.jitter)
        data_term = ad.reduce_sum(self.likelihood.variational_expectations(frame, mean, var, Y))
        return data_term + self._latent_prior(frame) + self._hyper_prior(frame)

    def _predict_f(self, frame, Xnew, full_cov):
        return conditional(
            frame, Xnew, frame[self.Z], self.kernel, frame[self.V], None, True, full_cov, jitter=self.jitter
        )
