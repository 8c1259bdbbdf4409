"""Normal DLM with discount-based stochastic volatility.

The observation variance is unknown with a gamma prior on its precision.
Between time points the degrees of freedom are discounted (``n <- beta * n``)
while the point estimate ``s`` is kept, which lets the variance drift. With
``n = inf`` the variance is known and equal to ``s``; the step then reduces
to an ordinary Kalman filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, InputError, NumericalError
from ..special import StudentT
from .cycle import evolve, repair_psd
from .model import ModelSpec, StateMoments


@dataclass(frozen=True)
class VolatilityState:
    """Degrees of freedom ``n`` and point estimate ``s`` of the observation variance."""

    n: float
    s: float

    def __post_init__(self):
        if not (self.n > 0 and self.s > 0 and math.isfinite(self.s)):
            raise NumericalError("volatility state needs n > 0 and finite s > 0", n=self.n, s=self.s)

    @property
    def known(self) -> bool:
        return math.isinf(self.n)


def _check_discount(beta):
    if not (0.0 < beta <= 1.0):
        raise ConfigError(f"volatility discount must lie in (0, 1], got {beta}")


def evolve_volatility(vol: VolatilityState, beta: float) -> VolatilityState:
    _check_discount(beta)
    return vol if vol.known else VolatilityState(beta * vol.n, vol.s)


def dlm_forecast(prior: StateMoments, vol_prior: VolatilityState, F) -> tuple[StudentT, float]:
    """One-step predictive ``t(n, F'a, sqrt(q))`` with ``q = F'RF + s``; returns ``(dist, q)``."""
    F = np.asarray(F, dtype=float)
    f = float(F @ prior.mean)
    q = float(F @ prior.cov @ F) + vol_prior.s
    if not q > 0.0:
        raise NumericalError("forecast variance is not positive", f=f, q=q)
    return StudentT(vol_prior.n, f, math.sqrt(q)), q


def dlm_update(prior: StateMoments, vol_prior: VolatilityState, F, y: float):
    """Condition evolved moments on an observation ``y``; returns ``(post, vol_post)``."""
    if not math.isfinite(y):
        raise InputError(f"observation must be finite, got {y!r}")
    F = np.asarray(F, dtype=float)
    R = prior.cov
    RF = R @ F
    f = float(F @ prior.mean)
    q = float(F @ RF) + vol_prior.s
    if not q > 0.0:
        raise NumericalError("forecast variance is not positive", f=f, q=q)
    e = y - f
    A = RF / q
    m = prior.mean + A * e
    C = R - np.outer(A, A) * q
    if vol_prior.known:
        return StateMoments(m, repair_psd(C)), vol_prior
    n0 = vol_prior.n
    s_new = vol_prior.s * (n0 + e * e / q) / (n0 + 1.0)
    C = C * (s_new / vol_prior.s)
    return StateMoments(m, repair_psd(C)), VolatilityState(n0 + 1.0, s_new)


def dlm_step(
    state: StateMoments,
    vol: VolatilityState,
    spec: ModelSpec,
    F,
    y: float | None,
    vol_discount: float = 1.0,
    G: np.ndarray | None = None,
):
    """Evolve, forecast and (when ``y`` is observed) update one time step.

    Returns ``(post, vol_post, forecast)`` where ``forecast`` is the one-step
    Student-t predictive. A missing ``y`` (``None`` or NaN) leaves the evolved
    prior as the posterior.
    """
    prior = evolve(state, spec, G)
    vol_prior = evolve_volatility(vol, vol_discount)
    fc, _ = dlm_forecast(prior, vol_prior, F)
    if y is None or (isinstance(y, float) and math.isnan(y)):
        return prior, vol_prior, fc
    post, vol_post = dlm_update(prior, vol_prior, F, float(y))
    return post, vol_post, fc
