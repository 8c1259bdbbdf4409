"""Aggregate-level normal DLM and simulation of the shared seasonal factor."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..dglm.cycle import evolve
from ..dglm.model import Block, ModelSpec, StateMoments, seasonal_functional
from ..dglm.normal import VolatilityState, dlm_step
from ..errors import InputError
from ..special import RngStream

FACTOR_NAME = "dow_factor"


def aggregate_model(predictors: Sequence[str] = (), trend_discount=0.995, seasonal_discount=0.999) -> ModelSpec:
    """Log-aggregate model: local linear trend, optional regression, weekly and two-harmonic yearly seasonals."""
    blocks = [Block.trend(trend_discount)]
    if predictors:
        blocks.append(Block.regression(*predictors, discount=trend_discount))
    blocks.append(Block.fourier(7, discount=seasonal_discount))
    blocks.append(Block.fourier(365, 2, discount=seasonal_discount))
    return ModelSpec(tuple(blocks), link="identity")


def aggregate_series(series: Sequence[Sequence[float]], offset: float = 0.5):
    """Log of the elementwise total of aligned count series.

    Days with a zero total get ``log(offset)``. Returns ``(values, zero_mask)``.
    """
    if not len(series):
        raise InputError("no series to aggregate")
    lengths = {len(s) for s in series}
    if len(lengths) != 1:
        raise InputError(f"series are not aligned: lengths {sorted(lengths)}")
    if not offset > 0:
        raise InputError("zero-total offset must be positive")
    total = np.sum(np.asarray(series, dtype=float), axis=0)
    if np.any(np.isnan(total)) or np.any(total < 0):
        raise InputError("aggregate totals must be non-negative and observed")
    zero = total == 0
    return np.log(np.where(zero, offset, total)), zero


def fit_aggregate(
    spec: ModelSpec,
    y: Sequence[float],
    covariates: Sequence[Mapping[str, float] | None] | None = None,
    prior: StateMoments | None = None,
    vol: VolatilityState | None = None,
    vol_discount: float = 0.999,
):
    """Filter the aggregate series; returns a list of ``(StateMoments, VolatilityState)`` per time.

    Without an explicit prior the trend level starts at the first observation
    with unit variance on every element, and the volatility at ``n = 1`` with
    ``s`` equal to the sample variance of the first 28 values.
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InputError("aggregate series must be finite")
    if covariates is None:
        covariates = [None] * len(y)
    if len(covariates) != len(y):
        raise InputError("covariates and observations differ in length")
    if prior is None:
        m = np.zeros(spec.dim)
        if len(y):
            m[0] = y[0]
        prior = StateMoments(m, np.eye(spec.dim))
    if vol is None:
        head = y[:28]
        s = float(np.var(head)) if head.size > 1 else 1.0
        vol = VolatilityState(1.0, max(s, 1e-6))
    state, out = prior, []
    for yt, cov in zip(y, covariates):
        state, vol, _ = dlm_step(state, vol, spec, spec.design(cov), float(yt), vol_discount)
        out.append((state, vol))
    return out


@dataclass(frozen=True, eq=False)
class FactorDraws:
    """Simulated factor values: ``draws[s, j]`` is path ``s`` at time ``origin + 1 + j``."""

    draws: np.ndarray
    origin: int = 0
    name: str = FACTOR_NAME

    def __post_init__(self):
        d = np.array(self.draws, dtype=float)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise InputError(f"factor draws must be an S x (k+1) array, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise InputError("factor draws must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)

    @property
    def S(self) -> int:
        return self.draws.shape[0]

    @property
    def k(self) -> int:
        return self.draws.shape[1] - 1

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "horizon", "value"])
            for s in range(self.S):
                for j in range(self.draws.shape[1]):
                    w.writerow([s, j, repr(float(self.draws[s, j]))])

    @classmethod
    def from_csv(cls, path, origin: int = 0, name: str = FACTOR_NAME) -> "FactorDraws":
        rows = []
        with open(path, newline="") as fh:
            r = csv.DictReader(fh)
            if r.fieldnames is None or not {"s", "horizon", "value"} <= set(r.fieldnames):
                raise InputError(f"{path}: factor draw file needs columns s, horizon, value")
            for line, row in enumerate(r, start=2):
                try:
                    rows.append((int(row["s"]), int(row["horizon"]), float(row["value"])))
                except (TypeError, ValueError):
                    raise InputError(f"{path}:{line}: malformed factor draw row {row}") from None
        if not rows:
            raise InputError(f"{path}: no factor draws")
        arr = np.array(rows)
        S, H = int(arr[:, 0].max()) + 1, int(arr[:, 1].max()) + 1
        if len(rows) != S * H:
            raise InputError(f"{path}: expected {S * H} rows for S={S}, {H} horizons, got {len(rows)}")
        d = np.full((S, H), np.nan)
        d[arr[:, 0].astype(int), arr[:, 1].astype(int)] = arr[:, 2]
        if np.isnan(d).any():
            raise InputError(f"{path}: duplicate or missing (s, horizon) pairs")
        return cls(d, origin, name)


def _psd_sqrt(W):
    w, V = np.linalg.eigh(0.5 * (W + W.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def sample_factor_paths(
    state: StateMoments,
    spec: ModelSpec,
    k: int,
    S: int,
    rng: RngStream | int,
    period: float = 7,
    origin: int = 0,
    name: str = FACTOR_NAME,
) -> FactorDraws:
    """Draw ``S`` trajectories of the current seasonal effect for the next ``k + 1`` steps.

    The origin state is drawn from ``N(m, C)``, then each step applies
    ``theta <- G theta + w`` with ``w ~ N(0, W)`` and ``W`` the evolution
    variance implied by the block discounts along the forward moment
    recursion. No observations enter.
    """
    if k < 0 or S < 1:
        raise InputError(f"need k >= 0 and S >= 1, got k={k}, S={S}")
    gen = (rng if isinstance(rng, RngStream) else RngStream(int(rng))).generator
    L = seasonal_functional(spec, 0, period)
    G = np.asarray(spec.G)
    theta = state.mean + gen.standard_normal((S, spec.dim)) @ _psd_sqrt(state.cov).T
    out = np.empty((S, k + 1))
    R = state.cov
    for j in range(k + 1):
        P = G @ R @ G.T
        Rn = evolve(StateMoments(np.zeros(spec.dim), R), spec).cov
        theta = theta @ G.T + gen.standard_normal((S, spec.dim)) @ _psd_sqrt(Rn - P).T
        out[:, j] = theta @ L
        R = Rn
    return FactorDraws(out, origin, name)


def factor_mean_path(state: StateMoments, spec: ModelSpec, k: int, period: float = 7) -> np.ndarray:
    """Mean of the factor at steps ``1..k+1`` ahead (the expectation of :func:`sample_factor_paths`)."""
    L = seasonal_functional(spec, 0, period)
    G = np.asarray(spec.G)
    m, out = state.mean, np.empty(k + 1)
    for j in range(k + 1):
        m = G @ m
        out[j] = L @ m
    return out

