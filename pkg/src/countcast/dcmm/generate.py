"""Synthetic count series drawn from the mixture model's generative form."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..dglm.model import ModelSpec
from ..errors import ConfigError, InputError
from ..special import RngStream


@dataclass(frozen=True)
class GeneratedSeries:
    y: np.ndarray
    prob_nonzero: np.ndarray
    rate: np.ndarray
    binary_states: np.ndarray
    positive_states: np.ndarray
    covariates: list


def _innovation(spec: ModelSpec, scales):
    if scales is None:
        return np.zeros((spec.dim, spec.dim))
    W = np.asarray(scales, dtype=float)
    if W.ndim == 1:
        W = np.diag(W)
    if W.shape != (spec.dim, spec.dim):
        raise ConfigError(f"innovation covariance must be {spec.dim}x{spec.dim}, got {W.shape}")
    return W


def sample_series(
    binary_spec: ModelSpec,
    binary_state0,
    positive_spec: ModelSpec,
    positive_state0,
    T: int,
    rng: RngStream | int,
    binary_innovation=None,
    positive_innovation=None,
    covariates: Sequence[Mapping[str, float] | None] | None = None,
    random_effect_sd: float = 0.0,
) -> GeneratedSeries:
    """Simulate ``T`` counts.

    States follow ``theta_t = G theta_{t-1} + w_t`` with ``w_t ~ N(0, W)``
    (``W`` given as a covariance matrix or a vector of variances; ``None``
    means static states). Each day ``z_t ~ Bernoulli(logistic(F0' xi_t))``
    and, when ``z_t = 1``, ``y_t = 1 + Poisson(exp(F1' theta_t + e_t))`` with
    ``e_t ~ N(0, random_effect_sd^2)``.
    """
    if T < 0:
        raise InputError("series length must be non-negative")
    gen = (rng if isinstance(rng, RngStream) else RngStream(int(rng))).generator
    if covariates is None:
        covariates = [None] * T
    if len(covariates) < T:
        raise InputError("covariates shorter than the requested series")
    W0 = _innovation(binary_spec, binary_innovation)
    W1 = _innovation(positive_spec, positive_innovation)
    L0 = np.linalg.cholesky(W0 + 1e-300 * np.eye(binary_spec.dim)) if W0.any() else None
    L1 = np.linalg.cholesky(W1 + 1e-300 * np.eye(positive_spec.dim)) if W1.any() else None
    G0, G1 = np.asarray(binary_spec.G), np.asarray(positive_spec.G)
    xi = np.array(binary_state0, dtype=float)
    th = np.array(positive_state0, dtype=float)
    ys = np.zeros(T, dtype=np.int64)
    pis, mus = np.zeros(T), np.zeros(T)
    xis, ths = np.zeros((T, binary_spec.dim)), np.zeros((T, positive_spec.dim))
    for t in range(T):
        xi = G0 @ xi
        th = G1 @ th
        if L0 is not None:
            xi = xi + L0 @ gen.standard_normal(binary_spec.dim)
        if L1 is not None:
            th = th + L1 @ gen.standard_normal(positive_spec.dim)
        cov = covariates[t]
        eta0 = binary_spec.design(cov) @ xi
        eta1 = positive_spec.design(cov) @ th
        if random_effect_sd > 0:
            eta1 += random_effect_sd * gen.standard_normal()
        pi = 1.0 / (1.0 + np.exp(-eta0))
        mu = np.exp(eta1)
        z = gen.random() < pi
        ys[t] = 1 + gen.poisson(mu) if z else 0
        pis[t], mus[t] = pi, mu
        xis[t], ths[t] = xi, th
    return GeneratedSeries(ys, pis, mus, xis, ths, list(covariates[:T]))


def count_summary(y) -> dict:
    """Descriptive statistics of a count series (mean, median, share of zeros, max, variance)."""
    y = np.asarray(y, dtype=float)
    y = y[~np.isnan(y)]
    if y.size == 0:
        raise InputError("empty series")
    return {
        "n": int(y.size),
        "mean": float(y.mean()),
        "median": float(np.median(y)),
        "zero_fraction": float(np.mean(y == 0)),
        "max": float(y.max()),
        "var": float(y.var()),
    }
