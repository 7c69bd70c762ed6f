"""The six inference classes and their shared machinery.

=================  ===========  =========================  ===================
                   gaussian     non-gaussian (variational)  non-gaussian (MCMC)
=================  ===========  =========================  ===================
full covariance    GPR          VGP                         GPMC
sparse             SGPR         SVGP                        SGPMC
=================  ===========  =========================  ===================
"""

from .base import MODEL_TABLE, Dataset, GPModel, UnsupportedCombination, check_combination
from .conditionals import DEFAULT_JITTER, JitterError, conditional, gauss_kl, jitter_cholesky
from .exact import GPR, SGPR
from .mcmc import GPMC, SGPMC
from .serialize import load_model, model_from_dict, model_to_dict, save_model
from .variational import SVGP, VGP

__all__ = [
    "MODEL_TABLE",
    "Dataset",
    "GPModel",
    "UnsupportedCombination",
    "check_combination",
    "DEFAULT_JITTER",
    "JitterError",
    "conditional",
    "gauss_kl",
    "jitter_cholesky",
    "GPR",
    "SGPR",
    "SVGP",
    "VGP",
    "GPMC",
    "SGPMC",
    "save_model",
    "load_model",
    "model_to_dict",
    "model_from_dict",
]
