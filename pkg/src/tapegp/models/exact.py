"""Gaussian-likelihood models: exact GPR and the collapsed sparse bound (SGPR)."""

from __future__ import annotations

import numpy as np

from .. import adgraph as ad
from ..params import IDENTITY, Frame, Param
from .base import GPModel
from .conditionals import LOG_2PI, jitter_cholesky


class GPR(GPModel):
    """Exact regression with log marginal likelihood ``log N(y | 0, K + s2 I)``."""

    kind = "gpr"

    def _noisy_chol(self, frame: Frame) -> ad.Var:
        X = self.data.X
        K = self.kernel.K(frame, X) + frame[self.likelihood.variance] * np.eye(X.shape[0])
        # the noise term already regularises K; jitter is only a fallback
        return jitter_cholesky(K, 0.0)

    def build_objective(self, frame, batch=None):
        if batch is not None:
            raise ValueError("gpr does not support minibatches")
        return self.log_marginal_likelihood_var(frame)

    def log_marginal_likelihood_var(self, frame: Frame) -> ad.Var:
        Y = self.data.Y
        n, p = Y.shape
        L = self._noisy_chol(frame)
        alpha = ad.trisolve(L, Y)
        fit = ad.reduce_sum(ad.square(alpha)) * -0.5
        logdet = ad.reduce_sum(ad.log(ad.diag_part(L))) * -float(p)
        return fit + logdet - 0.5 * n * p * LOG_2PI

    def log_marginal_likelihood(self) -> float:
        return self.objective()

    def _predict_f(self, frame, Xnew, full_cov):
        L = self._noisy_chol(frame)
        Kmn = self.kernel.K(frame, self.data.X, Xnew)
        A = ad.trisolve(L, Kmn)
        alpha = ad.trisolve(L, self.data.Y)
        mean = A.T @ alpha
        if full_cov:
            return mean, [self.kernel.K(frame, Xnew) - A.T @ A]
        return mean, self.kernel.Kdiag(frame, Xnew) - ad.col_sums(ad.square(A)).T


class SGPR(GPModel):
    """Sparse regression with the collapsed variational bound.

    Evaluated in the m x m factorised form: with ``A = Luu^-1 Kuf / s``,
    ``B = I + A A^T`` and ``c = LB^-1 A y / s``.
    """

    kind = "sgpr"

    def __init__(self, data, kernel, Z, likelihood=None, **kwargs):
        super().__init__(data, kernel, likelihood, **kwargs)
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim == 1:
            Z = Z.reshape(-1, 1)
        if not 1 <= Z.shape[0] <= self.data.num_data:
            raise ValueError(f"need 1 <= m <= n inducing points, got m={Z.shape[0]}, n={self.data.num_data}")
        if Z.shape[1] != self.data.input_dim:
            raise ValueError("inducing inputs and data have different widths")
        self.Z = Param(Z, IDENTITY, name="Z")

    def own_parameters(self):
        return [("Z", self.Z)]

    def _common(self, frame: Frame):
        X, Y = self.data.X, self.data.Y
        Z = frame[self.Z]
        s2 = frame[self.likelihood.variance]
        inv_s = ad.exp(ad.log(s2) * -0.5)
        Luu = jitter_cholesky(self.kernel.K(frame, Z), self.jitter)
        Kuf = self.kernel.K(frame, Z, X)
        A = ad.trisolve(Luu, Kuf) * inv_s
        AAT = A @ A.T
        LB = ad.cholesky(AAT + np.eye(Z.shape[0]))
        c = ad.trisolve(LB, A @ Y) * inv_s
        return Z, s2, Luu, A, LB, c

    def build_objective(self, frame, batch=None):
        if batch is not None:
            raise ValueError("sgpr does not support minibatches")
        return self.elbo_var(frame)

    def elbo_var(self, frame: Frame) -> ad.Var:
        X, Y = self.data.X, self.data.Y
        n, p = Y.shape
        Z, s2, Luu, A, LB, c = self._common(frame)
        inv_s2 = ad.reciprocal(s2)
        bound = ad.reduce_sum(ad.log(ad.diag_part(LB))) * -float(p)
        bound = bound + ad.log(s2) * (-0.5 * n * p)
        bound = bound + inv_s2 * (-0.5 * float(np.sum(Y * Y)))
        bound = bound + ad.reduce_sum(ad.square(c)) * 0.5
        # trace term: -(sum kdiag - tr Q) / (2 s2), with tr(Q)/s2 = sum(A^2)
        bound = bound + ad.reduce_sum(self.kernel.Kdiag(frame, X)) * inv_s2 * (-0.5 * p)
        bound = bound + ad.reduce_sum(ad.square(A)) * (0.5 * p)
        return bound - 0.5 * n * p * LOG_2PI

    def elbo(self) -> float:
        return self.objective()

    def _predict_f(self, frame, Xnew, full_cov):
        Z, s2, Luu, A, LB, c = self._common(frame)
        Kus = self.kernel.K(frame, Z, Xnew)
        tmp1 = ad.trisolve(Luu, Kus)
        tmp2 = ad.trisolve(LB, tmp1)
        mean = tmp2.T @ c
        if full_cov:
            return mean, [self.kernel.K(frame, Xnew) - tmp1.T @ tmp1 + tmp2.T @ tmp2]
        var = self.kernel.Kdiag(frame, Xnew) - ad.col_sums(ad.square(tmp1)).T + ad.col_sums(ad.square(tmp2)).T
        return mean, var
