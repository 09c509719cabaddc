"""Bayesian two-step mixture estimates of treatment effects on bunching customers.

The non-bunching spend distribution (Singh-Maddala) is fitted on data
outside neighbourhoods of each threshold, frozen, and a skew-normal bunching
component is mixed in on the data inside each neighbourhood.  Hierarchical
variants pool information across customer groups.
"""
from .distributions import SinghMaddalaParams, SkewNormalParams
from .estimands import AttEstimate, att, hdi, posterior_att, summarize
from .fit import TwoStepFit, fit_bmtm, fit_bmtm_groups, fit_hbmtm
from .model import MixtureParams, NeighborhoodSpec
from .priors import PriorConfig, PriorSpec
from .sampler import PosteriorDraws, SamplerConfig, run_chains

__all__ = [
    "AttEstimate", "MixtureParams", "NeighborhoodSpec", "PosteriorDraws", "PriorConfig",
    "PriorSpec", "SamplerConfig", "SinghMaddalaParams", "SkewNormalParams", "TwoStepFit",
    "att", "fit_bmtm", "fit_bmtm_groups", "fit_hbmtm", "hdi", "posterior_att", "run_chains",
    "summarize",
]
__version__ = "0.1.0"
