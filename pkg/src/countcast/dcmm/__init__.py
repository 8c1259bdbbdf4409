"""Dynamic count mixture models: filtering, marginal forecasts and path simulation."""

from .core import (
    DcmmState,
    MixtureForecast,
    apply_random_effect,
    filter_series,
    forecast_marginal,
    forecast_marginals,
    step,
    update,
)
from .generate import GeneratedSeries, count_summary, sample_series
from .paths import PathSamples, forecast_path

__all__ = [
    "DcmmState",
    "MixtureForecast",
    "PathSamples",
    "GeneratedSeries",
    "apply_random_effect",
    "filter_series",
    "forecast_marginal",
    "forecast_marginals",
    "forecast_path",
    "step",
    "update",
    "sample_series",
    "count_summary",
]
