"""Dynamic count mixture: a Bernoulli DGLM for y > 0 and a Poisson DGLM for y - 1."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..dglm.conjugate import (
    ConjugateParams,
    NegBinomial,
    match_beta,
    match_gamma,
    posterior_predictor_moments,
)
from ..dglm.cycle import PredictorMoments, evolve, linear_bayes_update, predictor_moments
from ..dglm.model import ModelSpec, StateMoments
from ..errors import ConfigError, InputError

Covariates = Mapping[str, float] | None

TAIL = 1e-10


def apply_random_effect(pm: PredictorMoments, rho: float) -> PredictorMoments:
    """Inflate the predictor variance for a time-specific random effect: ``q -> q / rho``."""
    if not (0.0 < rho <= 1.0):
        raise ConfigError(f"random-effect discount must lie in (0, 1], got {rho}")
    if rho == 1.0:
        return pm
    return PredictorMoments(pm.f, pm.q / rho)


@dataclass(frozen=True)
class DcmmState:
    """Posterior moments of both components at the current time.

    ``binary`` holds the logit-scale state of Pr[y > 0]; ``positive`` the
    log-scale state of the rate of ``y - 1`` given ``y > 0``.
    """

    binary_spec: ModelSpec
    binary: StateMoments
    positive_spec: ModelSpec
    positive: StateMoments
    re_discount: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.re_discount <= 1.0):
            raise ConfigError(f"random-effect discount must lie in (0, 1], got {self.re_discount}")
        if self.binary.dim != self.binary_spec.dim or self.positive.dim != self.positive_spec.dim:
            raise ConfigError("state dimension does not match its model specification")

    @classmethod
    def from_specs(cls, binary_spec, binary, positive_spec, positive, re_discount=None) -> "DcmmState":
        """Build a state, taking ``re_discount`` from the positive spec unless given."""
        rho = positive_spec.re_discount if re_discount is None else re_discount
        return cls(binary_spec, binary, positive_spec, positive, float(rho))

    def with_moments(self, binary: StateMoments, positive: StateMoments) -> "DcmmState":
        return DcmmState(self.binary_spec, binary, self.positive_spec, positive, self.re_discount)

    def with_re_discount(self, rho: float) -> "DcmmState":
        return DcmmState(self.binary_spec, self.binary, self.positive_spec, self.positive, rho)


class MixtureForecast:
    """Predictive ``(1 - pi) * delta_0 + pi * (1 + NB(alpha+, beta+/(1+beta+)))``.

    ``pi`` is the Beta-Bernoulli probability ``alpha0 / (alpha0 + beta0)``.
    """

    __slots__ = ("binary", "positive", "_nb")

    def __init__(self, binary: ConjugateParams, positive: ConjugateParams):
        self.binary = binary
        self.positive = positive
        self._nb = NegBinomial.from_gamma(positive.alpha, positive.beta)

    @property
    def p_nonzero(self) -> float:
        return self.binary.alpha / (self.binary.alpha + self.binary.beta)

    @property
    def shifted_nb(self) -> NegBinomial:
        return self._nb

    @property
    def mean(self) -> float:
        return self.p_nonzero * (1.0 + self._nb.mean)

    @property
    def var(self) -> float:
        pi, nb = self.p_nonzero, self._nb
        second = nb.var + (1.0 + nb.mean) ** 2
        return pi * second - (pi * (1.0 + nb.mean)) ** 2

    def pmf(self, y):
        y = np.asarray(y)
        pi = self.p_nonzero
        pos = pi * self._nb.pmf(np.maximum(y - 1, 0))
        out = np.where(y == 0, 1.0 - pi, np.where(y >= 1, pos, 0.0))
        return float(out) if out.ndim == 0 else out

    def cdf(self, y):
        y = np.floor(np.asarray(y, dtype=float))
        pi = self.p_nonzero
        pos = (1.0 - pi) + pi * self._nb.cdf(np.maximum(y - 1.0, 0.0))
        out = np.where(y < 0, 0.0, np.where(y == 0, 1.0 - pi, pos))
        return float(out) if out.ndim == 0 else out

    def upper(self, tail: float = TAIL) -> int:
        """Smallest count ``n`` with ``P(Y > n) < tail``."""
        if self.p_nonzero < tail:
            return 0
        return 1 + self._nb.upper(tail / max(self.p_nonzero, tail))

    def support_pmf(self, tail: float = TAIL) -> np.ndarray:
        """pmf on ``0..upper(tail)``."""
        return self.pmf(np.arange(self.upper(tail) + 1))

    def __repr__(self):
        return f"MixtureForecast(p_nonzero={self.p_nonzero!r}, shifted_nb={self._nb!r})"


def _component_prior(spec, post, F, rho, family):
    prior = evolve(post, spec)
    pm = predictor_moments(prior, F)
    if family == "gamma":
        pm = apply_random_effect(pm, rho)
        cp = match_gamma(pm)
    else:
        cp = match_beta(pm)
    return prior, pm, cp


def _check_count(y):
    if y is None:
        return None
    if isinstance(y, float) and math.isnan(y):
        return None
    if y < 0 or int(y) != y:
        raise InputError(f"count observation must be a non-negative integer, got {y!r}")
    return int(y)


def step(state: DcmmState, y, covariates: Covariates = None):
    """Evolve one step, forecast, then update with ``y``.

    Returns ``(new_state, forecast)`` where ``forecast`` is the one-step
    :class:`MixtureForecast` issued before seeing ``y``. ``y = None`` (or NaN)
    marks a missing day: both components are evolved and not updated.
    """
    y = _check_count(y)
    F0 = state.binary_spec.design(covariates)
    F1 = state.positive_spec.design(covariates)
    prior0, pm0, cp0 = _component_prior(state.binary_spec, state.binary, F0, 1.0, "beta")
    prior1, pm1, cp1 = _component_prior(state.positive_spec, state.positive, F1, state.re_discount, "gamma")
    fc = MixtureForecast(cp0, cp1)
    if y is None:
        return state.with_moments(prior0, prior1), fc
    z = 1 if y > 0 else 0
    post0 = linear_bayes_update(prior0, F0, pm0, posterior_predictor_moments(cp0, z))
    if z:
        post1 = linear_bayes_update(prior1, F1, pm1, posterior_predictor_moments(cp1, y - 1))
    else:
        post1 = prior1
    return state.with_moments(post0, post1), fc


def update(state: DcmmState, y, covariates: Covariates = None) -> DcmmState:
    """Sequential update for one time step (see :func:`step`)."""
    return step(state, y, covariates)[0]


def filter_series(state: DcmmState, ys: Iterable, covariates: Sequence[Covariates] | None = None):
    """Run :func:`step` over a series; returns ``(states, forecasts)`` lists."""
    ys = list(ys)
    if covariates is None:
        covariates = [None] * len(ys)
    if len(covariates) != len(ys):
        raise InputError("covariates and observations differ in length")
    states, forecasts = [], []
    for y, cov in zip(ys, covariates):
        state, fc = step(state, y, cov)
        states.append(state)
        forecasts.append(fc)
    return states, forecasts


def forecast_marginal(state: DcmmState, k: int, covariate_path: Sequence[Covariates] | None = None):
    """Exact k-step marginal mixture forecast.

    Component moments are evolved ``k`` times without observation, applying
    discount inflation at each step; ``covariate_path[j]`` holds covariates for
    time ``t + j + 1``. Returns the horizon-``k`` :class:`MixtureForecast`.
    """
    return forecast_marginals(state, k, covariate_path)[-1]


def forecast_marginals(state: DcmmState, k: int, covariate_path: Sequence[Covariates] | None = None):
    """Marginal forecasts for horizons ``1..k`` as a list."""
    if k < 1:
        raise InputError(f"horizon must be >= 1, got {k}")
    if covariate_path is None:
        covariate_path = [None] * k
    if len(covariate_path) < k:
        raise InputError(f"covariate path covers {len(covariate_path)} steps, horizon is {k}")
    out = []
    s0, s1 = state.binary, state.positive
    for j in range(k):
        cov = covariate_path[j]
        s0, _, cp0 = _component_prior(state.binary_spec, s0, state.binary_spec.design(cov), 1.0, "beta")
        s1, _, cp1 = _component_prior(
            state.positive_spec, s1, state.positive_spec.design(cov), state.re_discount, "gamma"
        )
        out.append(MixtureForecast(cp0, cp1))
    return out
