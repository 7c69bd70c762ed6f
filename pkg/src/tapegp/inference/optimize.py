"""Adam and the training loop over a model's free state."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..adgraph import TapeError

DEFAULT_RATE = 0.01


class OptimizationError(RuntimeError):
    def __init__(self, iteration: int, detail: str):
        self.iteration = iteration
        super().__init__(f"optimisation aborted at iteration {iteration}: {detail}")


@dataclass
class AdamState:
    size: int
    rate: float = DEFAULT_RATE
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def adam_step(state: AdamState, gradient) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update for *minimising*; returns the new state and the step."""
    g = np.asarray(gradient, dtype=np.float64).ravel()
    if g.shape != state.m.shape:
        raise ValueError(f"gradient has length {g.size}, optimiser state has {state.m.size}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    delta = -state.rate * m_hat / (np.sqrt(v_hat) + state.eps)
    new = AdamState(state.size, state.rate, state.beta1, state.beta2, state.eps, t, m, v)
    return new, delta


@dataclass
class TraceRow:
    iteration: int
    objective: float
    seconds: float


def minibatches(n: int, batch_size: int, seed: int):
    """Endless stream of sorted index batches, a fresh permutation per epoch.

    Indices left over at the end of an epoch (fewer than ``batch_size``) are
    dropped.
    """
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch size must lie in [1, {n}], got {batch_size}")
    rng = np.random.default_rng(seed)
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield np.sort(perm[start : start + batch_size])


def minimize(
    model,
    iterations: int,
    *,
    rate: float = DEFAULT_RATE,
    batch_size: int | None = None,
    seed: int = 0,
    state: AdamState | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> list[TraceRow]:
    """Maximise ``model``'s objective by running Adam on its negation.

    Full-batch when ``batch_size`` is None, otherwise stochastic with seeded
    minibatches. Each trace row holds the objective evaluated at the start of
    that iteration and the wall time since the loop began.
    """
    x = model.free_state()
    state = state if state is not None else AdamState(x.size, rate)
    batches = None if batch_size is None else minibatches(model.data.num_data, batch_size, seed)
    trace = []
    start = time.perf_counter()
    for it in range(iterations):
        batch = None if batches is None else next(batches)
        try:
            value, grad = model.objective_and_grad(batch)
        except (TapeError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise OptimizationError(it, str(exc)) from exc
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise OptimizationError(it, f"non-finite objective {value!r}")
        state, delta = adam_step(state, -grad)
        x = x + delta
        model.set_free_state(x)
        trace.append(TraceRow(it, value, time.perf_counter() - start))
        if callback is not None:
            callback(it, value)
    return trace


def write_trace(trace: list[TraceRow], path, timing: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "objective", "seconds"] if timing else ["iteration", "objective"])
        for row in trace:
            cells = [row.iteration, format(row.objective, ".17g")]
            if timing:
                cells.append(format(row.seconds, ".17g"))
            w.writerow(cells)
