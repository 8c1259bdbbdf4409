"""Conjugate (variational Bayes) matching for Bernoulli and Poisson DGLMs.

Beta priors on a probability are matched to logit-scale moments through
``f = psi(a) - psi(b)``, ``q = psi'(a) + psi'(b)``; gamma priors on a rate to
log-scale moments through ``f = psi(a) - log(b)``, ``q = psi'(a)``. Both
solves are Newton-Raphson on log parameters with a bisection fallback.

Every solver has a scalar form (plain floats, used by the sequential
filters) and an ``*_arrays`` form vectorised over numpy arrays (used when
many Monte Carlo states are propagated together).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc, gammaln

from ..errors import InputError, NumericalError
from ..special import _digamma_scalar as _psi
from ..special import _tetragamma_scalar as _psi2
from ..special import _trigamma_scalar as _psi1
from ..special import digamma, polygamma_012, trigamma
from .cycle import PredictorMoments

MAX_ITER = 100
RESIDUAL_TOL = 1e-10
_STEP_TOL = 1e-14
_MAX_STEP = 4.0  # log-scale Newton step cap
# quadratic convergence: once a step is below 1e-9 the step just taken leaves an error near 1e-18
_ARRAY_STEP_TOL = 1e-9
_LOG_LO, _LOG_HI = math.log(1e-12), math.log(1e15)


@dataclass(frozen=True)
class ConjugateParams:
    alpha: float
    beta: float
    family: str  # "beta" or "gamma"

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise NumericalError("conjugate parameters must be positive", alpha=self.alpha, beta=self.beta)
        if self.family not in ("beta", "gamma"):
            raise ValueError(f"unknown conjugate family {self.family!r}")


def _q_residual(value, q):
    return abs(value - q) / max(1.0, q)


# ---------------------------------------------------------------------------
# gamma
# ---------------------------------------------------------------------------


def _gamma_shape(q):
    """Solve psi'(alpha) = q for alpha (scalar)."""
    u = math.log(min(max(1.0 / q, 1e-8), 1e12))
    lq = math.log(q)
    for _ in range(MAX_ITER):
        a = math.exp(u)
        t = _psi1(a)
        step = (math.log(t) - lq) / (_psi2(a) * a / t)
        step = max(-_MAX_STEP, min(_MAX_STEP, step))
        u -= step
        if abs(step) < _STEP_TOL * max(1.0, abs(u)):
            break
    a = math.exp(u)
    if _q_residual(_psi1(a), q) <= RESIDUAL_TOL:
        return a
    lo, hi = _LOG_LO, _LOG_HI
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _psi1(math.exp(mid)) > q:
            lo = mid
        else:
            hi = mid
    a = math.exp(0.5 * (lo + hi))
    if _q_residual(_psi1(a), q) > RESIDUAL_TOL:
        raise NumericalError("gamma moment matching did not converge", q=q, last_alpha=a)
    return a


def match_gamma(pm: PredictorMoments) -> ConjugateParams:
    """Gamma(alpha, beta) prior for a Poisson rate matched to log-rate moments ``(f, q)``."""
    f, q = float(pm.f), float(pm.q)
    if not q > 0:
        raise NumericalError("q must be positive", f=f, q=q)
    try:
        a = _gamma_shape(q)
    except NumericalError as exc:
        exc.diagnostics["f"] = f
        raise
    return ConjugateParams(a, math.exp(_psi(a) - f), "gamma")


def match_gamma_arrays(f, q):
    """Vectorised :func:`match_gamma`; returns ``(alpha, beta)`` arrays."""
    f = np.asarray(f, dtype=float)
    q = np.asarray(q, dtype=float)
    if not np.all(q > 0):
        raise NumericalError("q must be positive", q=q[~(q > 0)][:5])
    u = np.log(np.clip(1.0 / q, 1e-8, 1e12))
    lq = np.log(q)
    active = np.ones(u.shape, dtype=bool)
    for _ in range(MAX_ITER):
        a = np.exp(u[active])
        _, t, t2 = polygamma_012(a)
        step = np.clip((np.log(t) - lq[active]) / (t2 * a / t), -_MAX_STEP, _MAX_STEP)
        u[active] -= step
        done = np.abs(step) < _ARRAY_STEP_TOL * np.maximum(1.0, np.abs(u[active]))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            break
    a = np.exp(u)
    d, t, _ = polygamma_012(a)
    bad = np.abs(t - q) / np.maximum(1.0, q) > RESIDUAL_TOL
    if bad.any():
        a[bad] = [_gamma_shape(float(qq)) for qq in q[bad]]
        d[bad] = digamma(a[bad])
    return a, np.exp(d - f)


# ---------------------------------------------------------------------------
# beta
# ---------------------------------------------------------------------------


def _inverse_digamma(c):
    """Solve psi(x) = c (scalar), Newton from a standard starting point."""
    x = math.exp(c) + 0.5 if c >= -2.22 else -1.0 / (c - _psi(1.0))
    for _ in range(MAX_ITER):
        step = (_psi(x) - c) / _psi1(x)
        nx = x - step
        if nx <= 0:
            nx = 0.5 * x
        if abs(nx - x) <= 1e-15 * x:
            x = nx
            break
        x = nx
    return x


def _beta_bisect(f, q):
    """Fallback: one-dimensional bisection on log(alpha).

    For fixed ``f``, ``beta`` follows from alpha by inverting the digamma
    function and ``psi'(alpha) + psi'(beta)`` is then decreasing in alpha.
    """

    def total(u):
        a = math.exp(u)
        b = _inverse_digamma(_psi(a) - f)
        return _psi1(a) + _psi1(b), a, b

    lo, hi = _LOG_LO, _LOG_HI
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total(mid)[0] > q:
            lo = mid
        else:
            hi = mid
    return total(0.5 * (lo + hi))[1:]


def _beta_residuals(a, b, f, q):
    return abs(_psi(a) - _psi(b) - f), _q_residual(_psi1(a) + _psi1(b), q)


def _beta_params(f, q):
    ef = math.exp(min(max(f, -700.0), 700.0))
    u = math.log(min(max((1.0 + ef) / q, 1e-8), 1e12))
    v = math.log(min(max((1.0 + 1.0 / ef) / q, 1e-8), 1e12))
    lq = math.log(q)
    for _ in range(MAX_ITER):
        a, b = math.exp(u), math.exp(v)
        ta, tb = _psi1(a), _psi1(b)
        Q = ta + tb
        r1 = _psi(a) - _psi(b) - f
        r2 = math.log(Q) - lq
        j11, j12 = ta * a, -tb * b
        j21, j22 = _psi2(a) * a / Q, _psi2(b) * b / Q
        det = j11 * j22 - j12 * j21
        if det == 0.0 or not math.isfinite(det):
            break
        du = (j22 * r1 - j12 * r2) / det
        dv = (-j21 * r1 + j11 * r2) / det
        big = max(abs(du), abs(dv))
        if big > _MAX_STEP:
            du, dv = du * _MAX_STEP / big, dv * _MAX_STEP / big
        u, v = u - du, v - dv
        if big < _STEP_TOL * max(1.0, abs(u), abs(v)):
            break
    a, b = math.exp(u), math.exp(v)
    r_f, r_q = _beta_residuals(a, b, f, q)
    if r_f <= RESIDUAL_TOL and r_q <= RESIDUAL_TOL:
        return a, b
    a, b = _beta_bisect(f, q)
    r_f, r_q = _beta_residuals(a, b, f, q)
    if r_f > RESIDUAL_TOL or r_q > RESIDUAL_TOL:
        raise NumericalError("beta moment matching did not converge", f=f, q=q, last_alpha=a, last_beta=b)
    return a, b


def match_beta(pm: PredictorMoments) -> ConjugateParams:
    """Beta(alpha, beta) prior for a probability matched to logit moments ``(f, q)``."""
    f, q = float(pm.f), float(pm.q)
    if not q > 0:
        raise NumericalError("q must be positive", f=f, q=q)
    a, b = _beta_params(f, q)
    return ConjugateParams(a, b, "beta")


def match_beta_arrays(f, q):
    """Vectorised :func:`match_beta`; returns ``(alpha, beta)`` arrays."""
    f = np.asarray(f, dtype=float)
    q = np.asarray(q, dtype=float)
    if not np.all(q > 0):
        raise NumericalError("q must be positive", q=q[~(q > 0)][:5])
    ef = np.exp(np.clip(f, -700.0, 700.0))
    u = np.log(np.clip((1.0 + ef) / q, 1e-8, 1e12))
    v = np.log(np.clip((1.0 + 1.0 / ef) / q, 1e-8, 1e12))
    lq = np.log(q)
    active = np.ones(u.shape, dtype=bool)
    for _ in range(MAX_ITER):
        idx = np.flatnonzero(active)
        n = idx.size
        # alpha and beta share one polygamma evaluation
        d, t, w = polygamma_012(np.exp(np.concatenate([u[idx], v[idx]])))
        a, b = np.exp(u[idx]), np.exp(v[idx])
        ta, tb = t[:n], t[n:]
        Q = ta + tb
        r1 = d[:n] - d[n:] - f[idx]
        r2 = np.log(Q) - lq[idx]
        j11, j12 = ta * a, -tb * b
        j21, j22 = w[:n] * a / Q, w[n:] * b / Q
        det = j11 * j22 - j12 * j21
        with np.errstate(divide="ignore", invalid="ignore"):
            du = (j22 * r1 - j12 * r2) / det
            dv = (-j21 * r1 + j11 * r2) / det
        ok = np.isfinite(du) & np.isfinite(dv)
        du, dv = np.where(ok, du, 0.0), np.where(ok, dv, 0.0)
        big = np.maximum(np.abs(du), np.abs(dv))
        shrink = np.where(big > _MAX_STEP, _MAX_STEP / np.maximum(big, 1e-300), 1.0)
        u[idx] -= du * shrink
        v[idx] -= dv * shrink
        done = ~ok | (big < _ARRAY_STEP_TOL * np.maximum(1.0, np.maximum(np.abs(u[idx]), np.abs(v[idx]))))
        active[idx[done]] = False
        if not active.any():
            break
    a, b = np.exp(u), np.exp(v)
    m = a.size
    d, t, _ = polygamma_012(np.concatenate([a, b]))
    r_f = np.abs(d[:m] - d[m:] - f)
    r_q = np.abs(t[:m] + t[m:] - q) / np.maximum(1.0, q)
    bad = (r_f > RESIDUAL_TOL) | (r_q > RESIDUAL_TOL)
    for i in np.flatnonzero(bad):
        a[i], b[i] = _beta_params(float(f[i]), float(q[i]))
    return a, b


# ---------------------------------------------------------------------------
# one-step predictives and posterior moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BetaBernoulli:
    """One-step Beta-Bernoulli predictive; only the mean alpha/(alpha+beta) matters."""

    alpha: float
    beta: float

    @property
    def prob(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def pmf(self, z):
        p = self.prob
        z = np.asarray(z)
        out = np.where(z == 1, p, np.where(z == 0, 1.0 - p, 0.0))
        return float(out) if out.ndim == 0 else out


class NegBinomial:
    """Negative binomial on x = 0, 1, ... with size ``r`` and success probability ``p``.

    pmf(x) = C(x + r - 1, x) p^r (1 - p)^x, evaluated through log-gamma.
    """

    __slots__ = ("r", "p")

    def __init__(self, r: float, p: float):
        if not (r > 0 and 0 < p <= 1):
            raise NumericalError("invalid negative binomial parameters", r=r, p=p)
        self.r = float(r)
        self.p = float(p)

    @classmethod
    def from_gamma(cls, alpha: float, beta: float) -> "NegBinomial":
        return cls(alpha, beta / (1.0 + beta))

    @property
    def mean(self) -> float:
        return self.r * (1.0 - self.p) / self.p

    @property
    def var(self) -> float:
        return self.r * (1.0 - self.p) / (self.p * self.p)

    def logpmf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            out = (
                gammaln(x + self.r)
                - gammaln(self.r)
                - gammaln(x + 1.0)
                + self.r * math.log(self.p)
                + x * np.log1p(-self.p)
            )
        out = np.where(x >= 0, out, -np.inf)
        return float(out) if out.ndim == 0 else out

    def pmf(self, x):
        out = np.exp(self.logpmf(x))
        return float(out) if np.ndim(out) == 0 else out

    def cdf(self, x):
        x = np.floor(np.asarray(x, dtype=float))
        safe = np.maximum(x, 0.0)
        out = np.where(x >= 0, betainc(self.r, safe + 1.0, self.p), 0.0)
        return float(out) if out.ndim == 0 else out

    def upper(self, tail: float = 1e-10) -> int:
        """Smallest n with P(X > n) < tail."""
        m, sd = self.mean, math.sqrt(self.var)
        n = int(m + 10.0 * sd + 10)
        while 1.0 - self.cdf(n) >= tail:
            n = int(n * 1.5) + 10
        lo, hi = 0, n
        while lo < hi:
            mid = (lo + hi) // 2
            if 1.0 - self.cdf(mid) < tail:
                hi = mid
            else:
                lo = mid + 1
        return lo

    def __repr__(self):
        return f"NegBinomial(r={self.r!r}, p={self.p!r})"


def forecast_bernoulli(cp: ConjugateParams) -> BetaBernoulli:
    if cp.family != "beta":
        raise ValueError("Bernoulli forecasts need beta conjugate parameters")
    return BetaBernoulli(cp.alpha, cp.beta)


def forecast_poisson(cp: ConjugateParams) -> NegBinomial:
    """Negative binomial one-step predictive with size alpha and p = beta/(1+beta)."""
    if cp.family != "gamma":
        raise ValueError("Poisson forecasts need gamma conjugate parameters")
    return NegBinomial.from_gamma(cp.alpha, cp.beta)


def posterior_predictor_moments(cp: ConjugateParams, y) -> PredictorMoments:
    """Linear-predictor moments ``(g, p)`` under the conjugate posterior after observing ``y``."""
    if cp.family == "beta":
        if y not in (0, 1):
            raise InputError(f"binary observation must be 0 or 1, got {y!r}")
        a, b = cp.alpha + y, cp.beta + 1 - y
        return PredictorMoments(_psi(a) - _psi(b), _psi1(a) + _psi1(b))
    if y < 0 or int(y) != y:
        raise InputError(f"count observation must be a non-negative integer, got {y!r}")
    a = cp.alpha + y
    return PredictorMoments(_psi(a) - math.log(cp.beta + 1.0), _psi1(a))


def posterior_moments_arrays(family: str, alpha, beta, y):
    """Vectorised :func:`posterior_predictor_moments`; returns ``(g, p)``."""
    if family == "beta":
        a, b = alpha + y, beta + 1.0 - y
        return digamma(a) - digamma(b), trigamma(a) + trigamma(b)
    a = alpha + y
    return digamma(a) - np.log(beta + 1.0), trigamma(a)
