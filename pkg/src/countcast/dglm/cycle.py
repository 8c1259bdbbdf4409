"""Evolution, linear-predictor moments and the linear Bayes state update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericalError
from .model import ModelSpec, StateMoments

# eigenvalues down to -UPDATE_TOL * trace are clipped to zero, anything lower is an error
UPDATE_TOL = 1e-8


@dataclass(frozen=True)
class PredictorMoments:
    """Mean ``f`` and variance ``q`` of the linear predictor (or ``g``, ``p`` after updating)."""

    f: float
    q: float

    def __post_init__(self):
        if not (self.q > 0.0):
            raise NumericalError("linear predictor variance must be positive", f=self.f, q=self.q)


def evolve(post: StateMoments, spec: ModelSpec, G: np.ndarray | None = None) -> StateMoments:
    """Evolve posterior moments one step with component discounting.

    ``a = G m`` and ``P = G C G'``; each diagonal block of ``P`` is divided by
    its block discount while off-diagonal blocks are kept as they are.
    """
    if G is None:
        G = spec.G
    if spec.G_is_identity and G is spec.G:
        a, P = post.mean.copy(), post.cov
    else:
        a = G @ post.mean
        P = G @ post.cov @ G.T
    return StateMoments(a, P * spec.discount_scale)


def predictor_moments(prior: StateMoments, F: np.ndarray) -> PredictorMoments:
    F = np.asarray(F, dtype=float)
    if F.shape != prior.mean.shape:
        raise ValueError(f"design vector length {F.shape} does not match state dimension {prior.dim}")
    f = float(F @ prior.mean)
    q = float(F @ prior.cov @ F)
    if not q > 0.0:
        raise NumericalError("linear predictor variance is not positive", f=f, q=q, F=F)
    return PredictorMoments(f, q)


def repair_psd(C: np.ndarray, tol: float = UPDATE_TOL) -> np.ndarray:
    """Symmetrise ``C`` and clip slightly negative eigenvalues to zero."""
    C = 0.5 * (C + C.T)
    w, V = np.linalg.eigh(C)
    if w[0] >= 0.0:
        return C
    scale = max(float(np.trace(C)), 1e-300)
    if w[0] < -tol * scale:
        raise NumericalError("updated covariance is not positive semi-definite", min_eigenvalue=float(w[0]))
    C = (V * np.clip(w, 0.0, None)) @ V.T
    return 0.5 * (C + C.T)


def linear_bayes_update(
    prior: StateMoments, F: np.ndarray, pm_prior: PredictorMoments, pm_post: PredictorMoments
) -> StateMoments:
    """Map updated linear-predictor moments ``(g, p)`` back to the state vector.

    ``m = a + R F (g - f) / q`` and ``C = R - R F F' R (1 - p/q) / q``.
    """
    F = np.asarray(F, dtype=float)
    f, q = pm_prior.f, pm_prior.q
    RF = prior.cov @ F
    m = prior.mean + RF * ((pm_post.f - f) / q)
    C = prior.cov - np.outer(RF, RF) * ((1.0 - pm_post.q / q) / q)
    return StateMoments(m, repair_psd(C))
