"""Hamiltonian Monte Carlo with a fixed step size and identity mass matrix."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..adgraph import TapeError

LogTarget = Callable[[np.ndarray], tuple[float, np.ndarray]]

MAX_INITIAL_DIVERGENT = 100


class DivergentTrajectory(FloatingPointError):
    pass


@dataclass(frozen=True)
class HMCConfig:
    step_size: float = 0.05
    leapfrog_steps: int = 10
    num_samples: int = 1000
    burn_in: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step size must be positive")
        if self.leapfrog_steps < 1:
            raise ValueError("need at least one leapfrog step")
        if not 0 <= self.burn_in < self.num_samples:
            raise ValueError("burn-in must be non-negative and smaller than the sample count")


@dataclass
class Chain:
    samples: np.ndarray
    accepted: np.ndarray
    log_targets: np.ndarray

    def __post_init__(self):
        if not len(self.samples) == len(self.accepted) == len(self.log_targets):
            raise ValueError("chain arrays have inconsistent lengths")

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if len(self.accepted) else 0.0


def _finite(*arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def leapfrog(position, momentum, step_size: float, n_steps: int, grad_log_target):
    """Half kick, alternating drifts and kicks, half kick.

    ``grad_log_target(q)`` returns the gradient of the log target at ``q``.
    Raises :class:`DivergentTrajectory` on any non-finite intermediate.
    """
    if n_steps < 1:
        raise ValueError("need at least one leapfrog step")
    q = np.array(position, dtype=np.float64)
    p = np.array(momentum, dtype=np.float64)
    if q.shape != p.shape:
        raise ValueError(f"position shape {q.shape} differs from momentum shape {p.shape}")
    p = p + 0.5 * step_size * grad_log_target(q)
    for i in range(n_steps):
        q = q + step_size * p
        g = grad_log_target(q)
        p = p + (step_size if i < n_steps - 1 else 0.5 * step_size) * g
        if not _finite(q, p):
            raise DivergentTrajectory(f"non-finite state after leapfrog step {i + 1}")
    return q, p


def hmc_sample(log_target: LogTarget, initial, config: HMCConfig) -> Chain:
    """Run ``config.num_samples`` HMC iterations and drop the first ``burn_in``.

    ``log_target(x)`` returns ``(log density, gradient)``. Momenta and the
    accept draws both come from one generator seeded with ``config.seed``.
    """
    rng = np.random.default_rng(config.seed)
    x = np.array(initial, dtype=np.float64)
    cache: dict = {}

    def evaluate(q):
        key = q.tobytes()
        if key not in cache:
            cache.clear()
            value, grad = log_target(q)
            cache[key] = (float(value), np.asarray(grad, dtype=np.float64))
        return cache[key]

    logp, _ = evaluate(x)
    if not np.isfinite(logp):
        raise ValueError("log target is not finite at the initial state")

    samples, accepted, targets = [], [], []
    divergent_run = 0
    for it in range(config.num_samples):
        p0 = rng.standard_normal(x.shape)
        h0 = -logp + 0.5 * float(p0 @ p0)
        try:
            q1, p1 = leapfrog(x, p0, config.step_size, config.leapfrog_steps, lambda q: evaluate(q)[1])
            logp1, _ = evaluate(q1)
            h1 = -logp1 + 0.5 * float(p1 @ p1)
            ok = np.isfinite(h1)
        except (DivergentTrajectory, TapeError, np.linalg.LinAlgError, ValueError, FloatingPointError):
            ok = False
        u = rng.uniform()
        accept = bool(ok) and u < np.exp(min(0.0, h0 - h1))
        if ok:
            divergent_run = 0
        else:
            divergent_run += 1
            if divergent_run >= MAX_INITIAL_DIVERGENT and it + 1 == divergent_run:
                raise DivergentTrajectory(f"first {MAX_INITIAL_DIVERGENT} proposals all diverged")
        if accept:
            x, logp = q1, logp1
        if it >= config.burn_in:
            samples.append(x.copy())
            accepted.append(accept)
            targets.append(logp)
    return Chain(np.array(samples), np.array(accepted, dtype=bool), np.array(targets))


def model_log_target(model) -> LogTarget:
    """Wrap an MCMC model so HMC can drive its free state."""
    model.check_priors()

    def fn(x):
        model.set_free_state(x)
        return model.objective_and_grad()

    return fn
