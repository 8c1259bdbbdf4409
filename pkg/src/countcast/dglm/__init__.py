"""Dynamic generalized linear models for binary and count series, plus the normal DLM."""

from .conjugate import (
    BetaBernoulli,
    ConjugateParams,
    NegBinomial,
    forecast_bernoulli,
    forecast_poisson,
    match_beta,
    match_beta_arrays,
    match_gamma,
    match_gamma_arrays,
    posterior_moments_arrays,
    posterior_predictor_moments,
)
from .cycle import PredictorMoments, evolve, linear_bayes_update, predictor_moments, repair_psd
from .model import (
    Block,
    ModelSpec,
    StateMoments,
    build_design,
    harmonic_rotation,
    seasonal_factor,
    seasonal_functional,
)
from .normal import VolatilityState, dlm_forecast, dlm_step, dlm_update, evolve_volatility
from .prior import binary_warmup_prior, dcmm_warmup_priors, flat_prior, origin_design, rotate, static_glm_prior

__all__ = [
    "Block",
    "ModelSpec",
    "StateMoments",
    "PredictorMoments",
    "ConjugateParams",
    "VolatilityState",
    "BetaBernoulli",
    "NegBinomial",
    "build_design",
    "harmonic_rotation",
    "seasonal_factor",
    "seasonal_functional",
    "evolve",
    "predictor_moments",
    "linear_bayes_update",
    "repair_psd",
    "match_beta",
    "match_gamma",
    "match_beta_arrays",
    "match_gamma_arrays",
    "forecast_bernoulli",
    "forecast_poisson",
    "posterior_predictor_moments",
    "posterior_moments_arrays",
    "dlm_step",
    "dlm_forecast",
    "dlm_update",
    "evolve_volatility",
    "flat_prior",
    "origin_design",
    "static_glm_prior",
    "binary_warmup_prior",
    "dcmm_warmup_priors",
    "rotate",
]
