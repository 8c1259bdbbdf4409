"""Initial priors for the filters.

These are heuristics. ``static_glm_prior`` fits a time-invariant GLM to a
short warmup window by penalised iteratively reweighted least squares and
turns the fit into moments for the state at the origin, that is, before the
first warmup observation. The caller then filters from the start of the
window.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigError, InputError, NumericalError
from .model import ModelSpec, StateMoments


def flat_prior(spec: ModelSpec, level: float = 0.0, var: float = 1.0) -> StateMoments:
    """Zero-mean prior with ``var * I`` covariance and the level (or trend level) set to ``level``."""
    m = np.zeros(spec.dim)
    for b, sl in zip(spec.blocks, spec.slices):
        if b.kind in ("level", "trend"):
            m[sl.start] = level
            break
    C = var * np.eye(spec.dim)
    for b, sl in zip(spec.blocks, spec.slices):
        if b.kind == "random_effect":
            m[sl] = 0.0
            C[sl, sl] = 0.0
    return StateMoments(m, C)


def origin_design(spec: ModelSpec, covariates: Sequence[Mapping[str, float] | None]) -> np.ndarray:
    """Rows ``(G^t)' F_t`` for t = 1..T, so that row t times the origin state gives the mean predictor."""
    G = np.asarray(spec.G)
    rows = np.empty((len(covariates), spec.dim))
    P = np.eye(spec.dim)
    for t, cov in enumerate(covariates):
        P = G @ P
        rows[t] = P.T @ spec.design(cov)
    return rows


def _irls(X, y, family, ridge, max_iter=100, tol=1e-10):
    n, d = X.shape
    beta = np.zeros(d)
    pen = ridge * np.eye(d)

    def mean_and_weight(beta):
        eta = np.clip(X @ beta, -30.0, 30.0)
        if family == "bernoulli":
            mu = 1.0 / (1.0 + np.exp(-eta))
            return mu, mu * (1.0 - mu)
        mu = np.exp(eta)
        return mu, mu

    for _ in range(max_iter):
        mu, w = mean_and_weight(beta)
        H = X.T @ (X * w[:, None]) + pen
        step = np.linalg.solve(H, X.T @ (y - mu) - ridge * beta)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    _, w = mean_and_weight(beta)
    return beta, np.linalg.inv(X.T @ (X * w[:, None]) + pen)


def static_glm_prior(
    spec: ModelSpec,
    y: Sequence[float],
    covariates: Sequence[Mapping[str, float] | None] | None = None,
    family: str = "poisson",
    ridge: float = 1.0,
    inflate: float = 1.0,
    min_var: float = 1e-4,
    at_end: bool = False,
) -> StateMoments:
    """Moments of the origin state from a penalised static GLM fit.

    Parameters
    ----------
    spec : ModelSpec
        Model whose state vector is being initialised.
    y : sequence
        Warmup observations: 0/1 for ``family="bernoulli"``, counts for
        ``"poisson"``. NaN entries are skipped.
    covariates : sequence of mappings, optional
        Covariates aligned with ``y``.
    ridge : float
        Gaussian prior precision shrinking every coefficient towards zero;
        keeps all-zero or tiny windows finite.
    inflate : float
        Multiplier applied to the inverse-Hessian covariance.
    min_var : float
        Floor for prior variances of non random-effect elements.
    at_end : bool
        Return moments of the state at the last warmup time (the static fit
        rotated forward by ``G``) instead of the origin.

    Returns
    -------
    StateMoments
        Mean is the penalised MLE, covariance the inflated inverse Hessian.
        Random-effect elements are fixed at zero.
    """
    if family not in ("bernoulli", "poisson"):
        raise ConfigError(f"unknown warmup family {family!r}")
    y = np.asarray(y, dtype=float)
    if covariates is None:
        covariates = [None] * len(y)
    if len(covariates) != len(y):
        raise InputError("warmup covariates and observations differ in length")
    X = origin_design(spec, covariates)
    keep = ~np.isnan(y)
    X, yk = X[keep], y[keep]
    if family == "bernoulli" and np.any((yk != 0) & (yk != 1)):
        raise InputError("bernoulli warmup needs 0/1 observations")
    if np.any(yk < 0):
        raise InputError("warmup counts must be non-negative")
    if yk.size == 0:
        return flat_prior(spec)
    beta, cov = _irls(X, yk, family, ridge)
    if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(cov))):
        raise NumericalError("warmup GLM fit failed", coefficients=beta)
    cov = inflate * 0.5 * (cov + cov.T)
    idx = np.arange(spec.dim)
    cov[idx, idx] = np.maximum(cov[idx, idx], min_var)
    for b, sl in zip(spec.blocks, spec.slices):
        if b.kind == "random_effect":
            beta[sl] = 0.0
            cov[sl, :] = 0.0
            cov[:, sl] = 0.0
    out = StateMoments(beta, cov)
    return rotate(out, spec, len(y)) if at_end else out


def rotate(state: StateMoments, spec: ModelSpec, steps: int) -> StateMoments:
    """Apply the evolution matrix ``steps`` times without adding evolution variance."""
    Gk = np.linalg.matrix_power(np.asarray(spec.G), int(steps))
    return StateMoments(Gk @ state.mean, Gk @ state.cov @ Gk.T)


def binary_warmup_prior(spec: ModelSpec, z: Sequence[float], clip: float = 0.5) -> StateMoments:
    """Level at ``logit(p)`` for the share ``p`` of warmup days with a non-zero count; identity covariance.

    ``p`` is computed as ``(k + clip) / (n + 2 * clip)`` so that all-zero or
    all-positive windows stay finite. Other means are zero; random-effect
    elements are fixed at zero.
    """
    z = np.asarray(z, dtype=float)
    z = z[~np.isnan(z)]
    p = (np.sum(z > 0) + clip) / (z.size + 2.0 * clip)
    level = float(np.log(p / (1.0 - p)))
    return flat_prior(spec, level=level, var=1.0)


def dcmm_warmup_priors(
    binary_spec: ModelSpec,
    positive_spec: ModelSpec,
    y: Sequence[float],
    covariates: Sequence[Mapping[str, float] | None] | None = None,
    ridge: float = 1.0,
):
    """Priors for both mixture components at the end of a warmup window.

    The binary prior follows :func:`binary_warmup_prior`. The positive prior is
    a static Poisson GLM fitted to ``y - 1`` on the days with ``y > 0``.
    Returns ``(binary_prior, positive_prior)``.
    """
    y = np.asarray(y, dtype=float)
    x = np.where(y > 0, y - 1.0, np.nan)
    b = binary_warmup_prior(binary_spec, y)
    p = static_glm_prior(positive_spec, x, covariates, "poisson", ridge=ridge, at_end=True)
    return b, p
