from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import adgraph as ad
from ..kernels import Kernel
from ..likelihoods import Gaussian, Likelihood
from ..params import Frame, Param, free_state, set_free_state
from .conditionals import DEFAULT_JITTER

# model kind -> whether it accepts non-gaussian likelihoods
MODEL_TABLE = {
    "gpr": False,
    "sgpr": False,
    "vgp": True,
    "svgp": True,
    "gpmc": True,
    "sgpmc": True,
}


class UnsupportedCombination(ValueError):
    pass


def check_combination(kind: str, likelihood: Likelihood) -> None:
    if kind not in MODEL_TABLE:
        raise UnsupportedCombination(f"unknown model {kind!r}; choose one of {sorted(MODEL_TABLE)}")
    if not MODEL_TABLE[kind] and not isinstance(likelihood, Gaussian):
        raise UnsupportedCombination(
            f"model {kind!r} requires a gaussian likelihood (got {likelihood.to_spec()!r}); "
            "in the model table non-gaussian likelihoods are served by vgp/svgp (variational) "
            "or gpmc/sgpmc (MCMC)"
        )


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if Y.ndim == 1:
            Y = Y.reshape(-1, 1)
        if X.shape[0] < 1:
            raise ValueError("dataset needs at least one row")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset contains non-finite entries")
        self.X = np.ascontiguousarray(X)
        self.Y = np.ascontiguousarray(Y)

    @property
    def num_data(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]


class GPModel:
    """Common plumbing: parameter naming, objective evaluation, gradients.

    Subclasses implement :meth:`build_objective` (the quantity to maximise)
    and :meth:`_predict_f`.
    """

    kind = "model"

    def __init__(self, data, kernel: Kernel, likelihood: Likelihood | None = None, jitter: float = DEFAULT_JITTER):
        self.data = data if isinstance(data, Dataset) else Dataset(*data)
        self.kernel = kernel
        self.likelihood = likelihood if likelihood is not None else Gaussian()
        check_combination(self.kind, self.likelihood)
        self.data.Y = self.likelihood.check_targets(self.data.Y)
        self.jitter = float(jitter)

    @property
    def num_latent(self) -> int:
        return self.likelihood.latent_dim

    def own_parameters(self) -> list[tuple[str, Param]]:
        return []

    def named_parameters(self) -> list[tuple[str, Param]]:
        named = self.kernel.named_parameters("kernel")
        named += self.likelihood.named_parameters("likelihood")
        named += self.own_parameters()
        return named

    def parameters(self) -> list[Param]:
        """All params in declaration order: kernel, likelihood, model-specific."""
        out = []
        for name, p in self.named_parameters():
            p.name = name
            out.append(p)
        return out

    def hyperparameters(self) -> list[Param]:
        return self.kernel.parameters() + self.likelihood.parameters()

    # free state -----------------------------------------------------------

    def free_state(self) -> np.ndarray:
        return free_state(self.parameters())

    def set_free_state(self, vector) -> None:
        set_free_state(self.parameters(), vector)

    # objective ------------------------------------------------------------

    def build_objective(self, frame: Frame, batch=None) -> ad.Var:
        raise NotImplementedError

    def objective(self, batch=None) -> float:
        frame = Frame()
        return float(self.build_objective(frame, batch).value[0, 0])

    def objective_and_grad(self, batch=None) -> tuple[float, np.ndarray]:
        params = self.parameters()
        frame = Frame()
        root = self.build_objective(frame, batch)
        return float(root.value[0, 0]), frame.gradient(root, params)

    # prediction -----------------------------------------------------------

    def _predict_f(self, frame: Frame, Xnew: np.ndarray, full_cov: bool):
        raise NotImplementedError

    def predict_f(self, Xnew, full_cov: bool = False):
        """Latent mean (t x L) and variance (t x L, or t x t x L with ``full_cov``)."""
        Xnew = np.asarray(Xnew, dtype=np.float64)
        if Xnew.ndim == 1:
            Xnew = Xnew.reshape(-1, 1)
        if Xnew.shape[1] != self.data.input_dim:
            raise ValueError(f"inputs have {Xnew.shape[1]} columns, model was trained on {self.data.input_dim}")
        frame = Frame()
        mean, var = self._predict_f(frame, Xnew, full_cov)
        if full_cov:
            return mean.value.copy(), np.stack([v.value for v in var], axis=-1)
        return mean.value.copy(), var.value.copy()

    def predict_y(self, Xnew):
        mean, var = self.predict_f(Xnew)
        return self.likelihood.predict_mean_var(mean, var)
