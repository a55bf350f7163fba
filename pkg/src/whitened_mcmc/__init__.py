"""Dimension-robust MCMC for Bayesian inverse problems on white-noise coordinates."""

from .errors import DomainError, FormatError, NumericError, UnsupportedGradientError
from .transforms import (
    BesovLaw,
    CosineBasis,
    EvaluationGrid,
    GaussianLaw,
    LevelSetSpec,
    SeriesPrior,
    SeriesTransform,
    StableLaw,
    UniformLaw,
    WhiteNoiseVector,
    inverse_lower_incomplete_gamma,
    lambda_besov,
    lambda_stable,
    lambda_uniform,
    levelset_map,
    series_transform,
    series_transform_grad,
    vector_levelset_map,
)
from .samplers import PCN, RWM, WMALA, WPCN, ChainRecord, ChainState, HyperParam, HyperPrior, NonCentredGibbs, run_chain

__version__ = "0.1.0"
