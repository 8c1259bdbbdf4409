"""Series-level models that load on a shared, externally simulated factor."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import betainc, gammaln, logsumexp

from ..dcmm.core import Covariates, DcmmState, MixtureForecast
from ..dcmm.paths import PathSamples, forecast_path
from ..dglm.conjugate import ConjugateParams, match_beta_arrays, match_gamma_arrays, posterior_moments_arrays
from ..dglm.cycle import evolve
from ..dglm.model import StateMoments
from ..errors import ConfigError, InputError
from ..special import RngStream
from .aggregate import FACTOR_NAME, FactorDraws


class DegenerateWeightsWarning(RuntimeWarning):
    """Every factor draw gave the observation zero likelihood; uniform weights were used."""


@dataclass(frozen=True)
class MultiscaleSeriesModel:
    """A count-mixture state whose components regress on the factor ``factor_name``.

    The factor enters each component as an ordinary regression predictor, so
    its loading is a state element like any other. A component without that
    predictor simply ignores the factor.
    """

    dcmm: DcmmState
    factor_name: str = FACTOR_NAME

    def __post_init__(self):
        if not any(self.factor_name in s.predictor_slots for s in (self.dcmm.binary_spec, self.dcmm.positive_spec)):
            raise ConfigError(f"neither component has a {self.factor_name!r} predictor")


def _with_factor(covariates: Covariates, name: str, value: float = 0.0) -> dict:
    cov = dict(covariates or {})
    cov[name] = value
    return cov


def _conditional_moments(spec, prior: StateMoments, covariates, name, values):
    """Per-draw predictor moments ``(f, q, RF)`` for factor ``values`` (shape (S,))."""
    F = spec.design(_with_factor(covariates, name) if name in spec.predictor_slots else covariates)
    F = np.repeat(F[None, :], values.shape[0], axis=0)
    if name in spec.predictor_slots:
        F[:, spec.predictor_slots[name]] = values
    RF = F @ prior.cov  # R symmetric
    return F @ prior.mean, np.einsum("ij,ij->i", RF, F), RF


def _collapse(prior: StateMoments, w, RF, f, q, g, p):
    """Weighted mixture of the per-draw linear Bayes posteriors, moment matched."""
    ms = prior.mean[None, :] + RF * ((g - f) / q)[:, None]
    c = (1.0 - p / q) / q
    m = w @ ms
    d = ms - m
    C = prior.cov - (RF * (w * c)[:, None]).T @ RF + (d * w[:, None]).T @ d
    C = 0.5 * (C + C.T)
    return StateMoments(m, C)


def _mixture_logpmf(y, a0, b0, a1, b1):
    pi = a0 / (a0 + b0)
    if y == 0:
        with np.errstate(divide="ignore"):
            return np.log1p(-pi)
    x = y - 1
    pr = b1 / (1.0 + b1)
    lnb = gammaln(x + a1) - gammaln(a1) - gammaln(x + 1.0) + a1 * np.log(pr) + x * np.log1p(-pr)
    return np.log(pi) + lnb


def recoupled_update(model: MultiscaleSeriesModel, y, factor_values, covariates: Covariates = None):
    """Update with ``y`` marginalising over simulated factor values at that time.

    For each draw the conditional one-step mixture pmf at ``y`` gives a
    likelihood weight; the per-draw conditional posteriors are then collapsed
    to a single mean and covariance. ``y = None`` evolves both components
    without updating.

    Returns
    -------
    model : MultiscaleSeriesModel
    weights : ndarray
        Normalised weights, shape (S,).
    """
    st = model.dcmm
    phi = np.asarray(factor_values, dtype=float).reshape(-1)
    if phi.size < 1:
        raise InputError("need at least one factor draw")
    prior0 = evolve(st.binary, st.binary_spec)
    prior1 = evolve(st.positive, st.positive_spec)
    if y is None or (isinstance(y, float) and np.isnan(y)):
        return MultiscaleSeriesModel(st.with_moments(prior0, prior1), model.factor_name), np.full(phi.size, 1.0 / phi.size)
    if y < 0 or int(y) != y:
        raise InputError(f"count observation must be a non-negative integer, got {y!r}")
    y = int(y)
    name = model.factor_name
    f0, q0, RF0 = _conditional_moments(st.binary_spec, prior0, covariates, name, phi)
    f1, q1, RF1 = _conditional_moments(st.positive_spec, prior1, covariates, name, phi)
    q1 = q1 / st.re_discount
    a0, b0 = match_beta_arrays(f0, q0)
    a1, b1 = match_gamma_arrays(f1, q1)

    logp = _mixture_logpmf(y, a0, b0, a1, b1)
    if not np.any(np.isfinite(logp)):
        warnings.warn(
            f"all {phi.size} factor draws give zero likelihood for y={y}; using uniform weights",
            DegenerateWeightsWarning,
            stacklevel=2,
        )
        w = np.full(phi.size, 1.0 / phi.size)
    else:
        w = np.exp(logp - logsumexp(logp))
        w = w / w.sum()

    z = 1.0 if y > 0 else 0.0
    g0, p0 = posterior_moments_arrays("beta", a0, b0, z)
    post0 = _collapse(prior0, w, RF0, f0, q0, g0, p0)
    if y > 0:
        g1, p1 = posterior_moments_arrays("gamma", a1, b1, float(y - 1))
        post1 = _collapse(prior1, w, RF1, f1, q1, g1, p1)
    else:
        post1 = prior1
    return MultiscaleSeriesModel(st.with_moments(post0, post1), name), w


def multiscale_forecast(
    model: MultiscaleSeriesModel,
    factors: FactorDraws,
    k: int,
    covariate_path: Sequence[Covariates] | None = None,
    rng: RngStream | int = 0,
) -> PathSamples:
    """One conditional path per factor draw: ``S = factors.S`` paths over horizons ``1..k``."""
    if factors.draws.shape[1] < k:
        raise InputError(f"factor draws cover {factors.draws.shape[1]} steps, horizon is {k}")
    return forecast_path(
        model.dcmm,
        k,
        factors.S,
        covariate_path,
        rng,
        sample_covariates={model.factor_name: factors.draws[:, :k]},
    )


class FactorMixtureForecast:
    """Equal-weight mixture over factor draws of conditional count-mixture forecasts.

    Draw ``s`` contributes ``(1 - pi_s) delta_0 + pi_s (1 + NB(r_s, p_s))``.
    """

    __slots__ = ("pi", "r", "p")

    def __init__(self, pi, r, p):
        self.pi = np.asarray(pi, dtype=float)
        self.r = np.asarray(r, dtype=float)
        self.p = np.asarray(p, dtype=float)

    @classmethod
    def from_conjugate(cls, a0, b0, a1, b1) -> "FactorMixtureForecast":
        return cls(a0 / (a0 + b0), a1, b1 / (1.0 + b1))

    @property
    def components(self) -> tuple:
        """Conditional :class:`MixtureForecast` per draw."""
        beta0 = 1.0 - self.pi
        return tuple(
            MixtureForecast(
                ConjugateParams(float(self.pi[s]), float(beta0[s]), "beta"),
                ConjugateParams(float(self.r[s]), float(self.p[s] / (1.0 - self.p[s])), "gamma"),
            )
            for s in range(self.pi.size)
        )

    @property
    def mean(self) -> float:
        nb_mean = self.r * (1.0 - self.p) / self.p
        return float(np.mean(self.pi * (1.0 + nb_mean)))

    @property
    def var(self) -> float:
        nb_mean = self.r * (1.0 - self.p) / self.p
        nb_var = nb_mean / self.p
        second = self.pi * (nb_var + (1.0 + nb_mean) ** 2)
        return float(second.mean() - self.mean**2)

    def pmf(self, y):
        y = np.asarray(y)
        x = np.maximum(np.atleast_1d(y) - 1, 0).astype(float)[None, :]
        r, p = self.r[:, None], self.p[:, None]
        lnb = gammaln(x + r) - gammaln(r) - gammaln(x + 1.0) + r * np.log(p) + x * np.log1p(-p)
        pos = np.mean(self.pi[:, None] * np.exp(lnb), axis=0)
        yy = np.atleast_1d(y)
        out = np.where(yy == 0, np.mean(1.0 - self.pi), np.where(yy >= 1, pos, 0.0))
        return float(out[0]) if np.ndim(y) == 0 else out

    def cdf(self, y):
        yy = np.floor(np.atleast_1d(np.asarray(y, dtype=float)))
        nb = betainc(self.r[:, None], np.maximum(yy, 1.0)[None, :], self.p[:, None])
        pos = np.mean((1.0 - self.pi)[:, None] + self.pi[:, None] * nb, axis=0)
        out = np.where(yy < 0, 0.0, np.where(yy == 0, np.mean(1.0 - self.pi), pos))
        return float(out[0]) if np.ndim(y) == 0 else out

    def _grid_pmf(self, n: int) -> np.ndarray:
        """Mixture pmf on ``0..n`` from one vectorised log-pmf table."""
        x = np.arange(n, dtype=float)
        r, p = self.r[:, None], self.p[:, None]
        # log Gamma(x + r) - log Gamma(r) as a running sum of log(r + j)
        rising = np.zeros((self.r.size, n))
        np.cumsum(np.log(r + x[None, :-1]), axis=1, out=rising[:, 1:])
        lnb = rising - gammaln(x + 1.0)[None, :] + r * np.log(p) + x[None, :] * np.log1p(-p)
        out = np.empty(n + 1)
        out[0] = np.mean(1.0 - self.pi)
        out[1:] = self.pi @ np.exp(lnb) / self.pi.size
        return out

    def support_pmf(self, tail: float = 1e-10) -> np.ndarray:
        """pmf on ``0..n`` with ``n`` the smallest count whose upper tail is below ``tail``."""
        nb_mean = self.r * (1.0 - self.p) / self.p
        nb_sd = np.sqrt(nb_mean / self.p)
        hi = int(np.max(1.0 + nb_mean + 10.0 * nb_sd)) + 10
        while True:
            pmf = self._grid_pmf(hi)
            # upper tails from the exact cdf so cancellation in 1 - sum(pmf) cannot mislead
            above = 1.0 - self.cdf(hi)
            if above < tail:
                break
            hi = int(hi * 1.5) + 10
        tails = above + np.cumsum(pmf[::-1])[::-1] - pmf  # P(Y > n) for n = 0..hi
        n = int(np.argmax(tails < tail))
        return pmf[: n + 1]

    def upper(self, tail: float = 1e-10) -> int:
        """Smallest count ``n`` with ``P(Y > n) < tail``."""
        return self.support_pmf(tail).size - 1


def factor_marginal_forecasts(
    model: MultiscaleSeriesModel,
    factors: FactorDraws,
    k: int,
    covariate_path: Sequence[Covariates] | None = None,
):
    """Exact k-step marginal forecasts averaged over factor draws, horizons ``1..k``.

    Component moments evolve without data exactly as in the baseline marginal
    forecast; only the design vector changes between draws.
    """
    st = model.dcmm
    if factors.draws.shape[1] < k:
        raise InputError(f"factor draws cover {factors.draws.shape[1]} steps, horizon is {k}")
    if covariate_path is None:
        covariate_path = [None] * k
    s0, s1 = st.binary, st.positive
    out = []
    for j in range(k):
        phi = factors.draws[:, j]
        s0 = evolve(s0, st.binary_spec)
        s1 = evolve(s1, st.positive_spec)
        f0, q0, _ = _conditional_moments(st.binary_spec, s0, covariate_path[j], model.factor_name, phi)
        f1, q1, _ = _conditional_moments(st.positive_spec, s1, covariate_path[j], model.factor_name, phi)
        a0, b0 = match_beta_arrays(f0, q0)
        a1, b1 = match_gamma_arrays(f1, q1 / st.re_discount)
        out.append(FactorMixtureForecast.from_conjugate(a0, b0, a1, b1))
    return out


def conditional_forecasts(model: MultiscaleSeriesModel, factor_values, covariates: Covariates = None):
    """One-step conditional forecasts, one :class:`MixtureForecast` per factor value."""
    draws = FactorDraws(np.asarray(factor_values, dtype=float).reshape(-1, 1))
    return factor_marginal_forecasts(model, draws, 1, [covariates])[0].components


def with_covariate(covariates: Mapping[str, float] | None, name: str, value: float) -> dict:
    """Covariate mapping with ``name`` set to ``value`` (helper for conditional runs)."""
    return _with_factor(covariates, name, value)
