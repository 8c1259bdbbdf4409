"""Synthetic panels of intermittent count series sharing a weekly pattern."""

from __future__ import annotations

import datetime as _dt
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .dglm.model import Block
from .errors import ConfigError
from .io import SeriesData
from .special import RngStream


@dataclass
class PanelConfig:
    """Generator settings.

    The shared factor is the current value of a full period-7 Fourier state
    whose coefficients follow a random walk with standard deviation
    ``factor_drift`` per day, started so the weekly swing has log-scale
    amplitude about ``weekly_amplitude``.
    """

    n_series: int = 17
    days: int = 365
    start_date: str = "2020-01-01"
    seed: int = 0
    weekly_amplitude: float = 0.5
    factor_drift: float = 0.02
    shared_factor: bool = True
    loading_mean: float = 1.0
    loading_sd: float = 0.2
    log_rate_range: tuple = (-1.0, 1.5)
    logit_range: tuple = (-1.0, 2.5)
    zero_shift: float = 0.0
    level_drift: float = 0.01
    price_effect: float = -1.0
    promo_rate: float = 0.1
    promo_depth: float = 0.25
    with_price: bool = True

    def __post_init__(self):
        if self.n_series < 1 or self.days < 1:
            raise ConfigError("need at least one series and one day")
        self.log_rate_range = tuple(self.log_rate_range)
        self.logit_range = tuple(self.logit_range)

    @classmethod
    def from_dict(cls, d) -> "PanelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**d)


def shared_weekly_factor(days: int, amplitude: float, drift: float, rng: RngStream) -> np.ndarray:
    g = rng.generator
    blk = Block.fourier(7)
    G = blk.evolution_matrix()
    F = blk.design_template()
    theta = g.standard_normal(blk.dim)
    # the factor's mean square over a week is half the squared coefficient norm
    theta *= amplitude * np.sqrt(2.0) / np.linalg.norm(theta)
    out = np.empty(days)
    for t in range(days):
        theta = G @ theta + drift * g.standard_normal(blk.dim)
        out[t] = F @ theta
    return out


def generate_panel(cfg: PanelConfig):
    """Simulate a panel; returns ``(series_list, truth_dict)``."""
    root = RngStream(cfg.seed, "panel")
    phi = (
        shared_weekly_factor(cfg.days, cfg.weekly_amplitude, cfg.factor_drift, root.spawn("factor"))
        if cfg.shared_factor
        else np.zeros(cfg.days)
    )
    start = _dt.date.fromisoformat(cfg.start_date)
    dates = [(start + _dt.timedelta(days=t)).isoformat() for t in range(cfg.days)]
    width = max(3, len(str(cfg.n_series)))
    series, truth = [], {"factor": phi.tolist(), "series": {}}
    for i in range(cfg.n_series):
        sid = f"S{i:0{width}d}"
        g = root.spawn("series", i).generator
        base_rate = g.uniform(*cfg.log_rate_range)
        base_logit = g.uniform(*cfg.logit_range) - cfg.zero_shift
        load0 = cfg.loading_mean + cfg.loading_sd * g.standard_normal()
        load1 = cfg.loading_mean + cfg.loading_sd * g.standard_normal()
        promo = g.random(cfg.days) < cfg.promo_rate
        log_price = (-cfg.promo_depth * promo + 0.02 * g.standard_normal(cfg.days)) if cfg.with_price else np.zeros(cfg.days)
        level = base_rate + np.cumsum(cfg.level_drift * g.standard_normal(cfg.days))
        eta0 = base_logit + load0 * phi + cfg.price_effect * log_price
        eta1 = level + load1 * phi + cfg.price_effect * log_price
        pi = 1.0 / (1.0 + np.exp(-eta0))
        z = g.random(cfg.days) < pi
        y = np.where(z, 1 + g.poisson(np.exp(eta1)), 0)
        covs = {"log_price": log_price} if cfg.with_price else {}
        series.append(SeriesData(sid, list(dates), y.astype(float), covs))
        truth["series"][sid] = {
            "base_logit": base_logit,
            "base_log_rate": base_rate,
            "binary_loading": load0,
            "positive_loading": load1,
            "price_effect": cfg.price_effect,
            "zero_fraction": float(np.mean(y == 0)),
            "mean": float(np.mean(y)),
        }
    truth["config"] = asdict(cfg)
    return series, truth


def write_truth(path, truth):
    with open(path, "w") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
        fh.write("\n")
