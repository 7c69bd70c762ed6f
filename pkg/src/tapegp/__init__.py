"""Gaussian process models built on a small reverse-mode tape."""

from . import adgraph, inference, kernels, likelihoods, models, params, quadrature
from .adgraph import Tape, Var
from .inference import HMCConfig, hmc_sample, minimize
from .kernels import parse_kernel
from .likelihoods import parse_likelihood
from .models import GPMC, GPR, SGPMC, SGPR, SVGP, VGP, load_model, save_model
from .params import Param, Prior

__version__ = "0.1.0"

__all__ = [
    "adgraph",
    "inference",
    "kernels",
    "likelihoods",
    "models",
    "params",
    "quadrature",
    "Tape",
    "Var",
    "HMCConfig",
    "hmc_sample",
    "minimize",
    "parse_kernel",
    "parse_likelihood",
    "GPR",
    "SGPR",
    "SVGP",
    "VGP",
    "GPMC",
    "SGPMC",
    "load_model",
    "save_model",
    "Param",
    "Prior",
]
