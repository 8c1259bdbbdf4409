"""Shared latent factors: an aggregate model emits factor draws, series models consume them."""

from .aggregate import (
    FACTOR_NAME,
    FactorDraws,
    aggregate_model,
    aggregate_series,
    factor_mean_path,
    fit_aggregate,
    sample_factor_paths,
)
from .series import (
    DegenerateWeightsWarning,
    FactorMixtureForecast,
    MultiscaleSeriesModel,
    conditional_forecasts,
    factor_marginal_forecasts,
    multiscale_forecast,
    recoupled_update,
    with_covariate,
)

__all__ = [
    "FACTOR_NAME",
    "FactorDraws",
    "FactorMixtureForecast",
    "MultiscaleSeriesModel",
    "DegenerateWeightsWarning",
    "aggregate_model",
    "aggregate_series",
    "factor_mean_path",
    "fit_aggregate",
    "sample_factor_paths",
    "conditional_forecasts",
    "factor_marginal_forecasts",
    "multiscale_forecast",
    "recoupled_update",
    "with_covariate",
]
