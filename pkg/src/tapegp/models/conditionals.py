"""Shared building blocks for the inference classes."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .. import adgraph as ad
from ..kernels import Kernel
from ..params import Frame

DEFAULT_JITTER = 1e-6
MAX_JITTER = 1e-2


class JitterError(ad.NotPositiveDefiniteError):
    """Cholesky still fails after the largest allowed jitter."""


def jitter_levels(relative: float) -> list[float]:
    levels = [0.0] if relative == 0.0 else []
    level = relative if relative > 0.0 else DEFAULT_JITTER
    while level <= MAX_JITTER * (1 + 1e-9):
        levels.append(level)
        level *= 10.0
    return levels


def jitter_cholesky(K: ad.Var, relative: float = DEFAULT_JITTER) -> ad.Var:
    """Cholesky of ``K + j * mean(diag K) * I`` with escalating ``j``.

    ``j`` starts at ``relative`` and grows tenfold up to 1e-2. With
    ``relative = 0`` the first attempt adds nothing. The jitter is recorded
    on the tape as a function of ``K`` so gradients stay exact.
    """
    Kv = K.value
    n = Kv.shape[0]
    scale = float(np.mean(np.diag(Kv)))
    for level in jitter_levels(relative):
        try:
            np.linalg.cholesky(Kv + (level * scale) * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        if level == 0.0:
            return ad.cholesky(K)
        amount = ad.reduce_sum(ad.diag_part(K)) * (level / n)
        return ad.cholesky(K + amount * np.eye(n))
    raise JitterError(None, f"not positive definite even with jitter {MAX_JITTER:g} x mean diagonal")


def sqrt_factor(diag: ad.Var, lower: ad.Var) -> ad.Var:
    """Lower-triangular factor from a positive diagonal and a strictly-lower part."""
    m = diag.shape[0]
    mask = np.tril(np.ones((m, m)), k=-1)
    return ad.make_diag(diag) + lower * mask


def gauss_kl(q_mu: ad.Var, q_sqrt: Sequence[ad.Var], K_chol: ad.Var | None = None) -> ad.Var:
    """Sum over latents of KL[N(m_l, S_l) || N(0, K)], ``S_l = L_l L_l^T``.

    ``K`` is the identity (whitened case) unless the Cholesky factor of the
    prior covariance is passed as ``K_chol``.
    """
    m, L = q_mu.shape
    if len(q_sqrt) != L:
        raise ValueError(f"q_mu has {L} columns but {len(q_sqrt)} q_sqrt factors were given")
    for f in q_sqrt:
        if f.shape != (m, m):
            raise ValueError(f"q_sqrt factor shape {f.shape} does not match ({m}, {m})")
        if np.any(np.diag(f.value) <= 0.0):
            raise ValueError("q_sqrt factor has a non-positive diagonal")
    if K_chol is None:
        total = ad.reduce_sum(ad.square(q_mu))
        for f in q_sqrt:
            total = total + ad.reduce_sum(ad.square(f)) - ad.reduce_sum(ad.log(ad.diag_part(f))) * 2.0
    else:
        total = ad.reduce_sum(ad.square(ad.trisolve(K_chol, q_mu)))
        logdet_K = ad.reduce_sum(ad.log(ad.diag_part(K_chol))) * (2.0 * L)
        total = total + logdet_K
        for f in q_sqrt:
            total = total + ad.reduce_sum(ad.square(ad.trisolve(K_chol, f)))
            total = total - ad.reduce_sum(ad.log(ad.diag_part(f))) * 2.0
    return (total - float(m * L)) * 0.5


def _columns_to_matrix(cols: list[ad.Var]) -> ad.Var:
    L = len(cols)
    if L == 1:
        return cols[0]
    out = None
    for l, c in enumerate(cols):
        e = np.zeros((1, L))
        e[0, l] = 1.0
        term = c @ e
        out = term if out is None else out + term
    return out


def conditional(
    frame: Frame,
    Xnew,
    Z,
    kernel: Kernel,
    q_mu: ad.Var,
    q_sqrt: Sequence[ad.Var] | None,
    whiten: bool = True,
    full_cov: bool = False,
    jitter: float = DEFAULT_JITTER,
):
    """Predictive moments of f at ``Xnew`` given q(u) at inducing inputs ``Z``.

    With ``Luu = chol(Kzz + jitter)`` and ``A = Luu^-1 Kzx`` the mean is
    ``A^T q_mu`` (whitened) or ``(Luu^-T A)^T q_mu`` otherwise. ``q_sqrt=None``
    means a deterministic u. Returns ``(mean t x L, var t x L)`` or, with
    ``full_cov``, ``(mean, [t x t per latent])``.
    """
    Kmm = kernel.K(frame, Z)
    Lm = jitter_cholesky(Kmm, jitter)
    Kmn = kernel.K(frame, Z, Xnew)
    A1 = ad.trisolve(Lm, Kmn)
    A = A1 if whiten else ad.trisolve(Lm, A1, transpose=True)
    mean = A.T @ q_mu
    L = q_mu.shape[1]
    if q_sqrt is not None and len(q_sqrt) != L:
        raise ValueError(f"q_mu has {L} columns but {len(q_sqrt)} q_sqrt factors were given")

    if full_cov:
        base = kernel.K(frame, Xnew) - A1.T @ A1
        if q_sqrt is None:
            return mean, [base] * L
        covs = []
        for f in q_sqrt:
            LA = f.T @ A
            covs.append(base + LA.T @ LA)
        return mean, covs

    base = kernel.Kdiag(frame, Xnew) - ad.col_sums(ad.square(A1)).T
    if q_sqrt is None:
        return mean, base if L == 1 else base @ np.ones((1, L))
    cols = [base + ad.col_sums(ad.square(f.T @ A)).T for f in q_sqrt]
    return mean, _columns_to_matrix(cols)


LOG_2PI = math.log(2.0 * math.pi)
