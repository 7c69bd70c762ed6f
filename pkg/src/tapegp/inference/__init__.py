from .hmc import Chain, DivergentTrajectory, HMCConfig, hmc_sample, leapfrog, model_log_target
from .optimize import (
    DEFAULT_RATE,
    AdamState,
    OptimizationError,
    TraceRow,
    adam_step,
    minibatches,
    minimize,
    write_trace,
)

__all__ = [
    "Chain",
    "DivergentTrajectory",
    "HMCConfig",
    "hmc_sample",
    "leapfrog",
    "model_log_target",
    "DEFAULT_RATE",
    "AdamState",
    "OptimizationError",
    "TraceRow",
    "adam_step",
    "minibatches",
    "minimize",
    "write_trace",
]
