"""Bayesian semiparametric vector multiplicative error models.

Conditional-mean recursion, a parameter-expanded slice sampler for a
Dirichlet process mixture of log-normal innovations, the single
log-normal MAP comparator, and predictive/diagnostic tools.
"""

from ._backend import COMPILED
from .baseline import LN1Fit, ln1_loglik, ln1_map
from .evaluation import FitReport, ess, lpml, lps, summarize
from .kernels import MixtureComponent, NWHyper
from .postprocess import IdentifiedDraw, identify
from .sampler import SamplerConfig, SliceSampler, fit_dpm, run
from .vmem import InnovationSpec, MeanParams, SeriesMatrix, mean_recursion, reference_design, simulate

__version__ = "0.1.0"

__all__ = [
    "COMPILED",
    "FitReport",
    "IdentifiedDraw",
    "InnovationSpec",
    "LN1Fit",
    "MeanParams",
    "MixtureComponent",
    "NWHyper",
    "SamplerConfig",
    "SeriesMatrix",
    "SliceSampler",
    "ess",
    "fit_dpm",
    "identify",
    "ln1_loglik",
    "ln1_map",
    "lpml",
    "lps",
    "mean_recursion",
    "reference_design",
    "run",
    "simulate",
    "summarize",
]
