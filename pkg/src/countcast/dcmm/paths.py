"""Monte Carlo simulation of joint predictive paths.

Each path draws y at horizon 1, feeds it back as data, draws at horizon 2 and
so on. All paths are propagated together as numpy arrays. Paths with the same
history so far share one state, so early horizons (where few distinct
histories exist) cost almost nothing.

Samples are processed in fixed-size chunks, each drawing from its own
substream ``rng.spawn("chunk", i)``. Output therefore depends only on the
seed and ``S``, never on how the work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..dglm.conjugate import match_beta_arrays, match_gamma_arrays, posterior_moments_arrays
from ..errors import InputError
from ..special import RngStream
from .core import Covariates, DcmmState

CHUNK = 8192


@dataclass(frozen=True, eq=False)
class PathSamples:
    """``samples[s, j]`` is the count drawn for horizon ``j + 1`` on path ``s``."""

    samples: np.ndarray
    seed: int | None = None
    stream: tuple = field(default=())

    def __post_init__(self):
        a = np.asarray(self.samples)
        if a.ndim != 2 or a.shape[0] < 1:
            raise InputError(f"path samples must be an S x k array with S >= 1, got shape {a.shape}")
        if a.size and a.min() < 0:
            raise InputError("path samples must be non-negative")
        a = a.astype(np.int64, copy=False)
        a.setflags(write=False)
        object.__setattr__(self, "samples", a)

    @property
    def S(self) -> int:
        return self.samples.shape[0]

    @property
    def k(self) -> int:
        return self.samples.shape[1]

    def column(self, horizon: int) -> np.ndarray:
        return self.samples[:, horizon - 1]


class _Component:
    """Per-component arrays shared by all chunks."""

    def __init__(self, spec, moments, designs, rho, family):
        self.G = np.asarray(spec.G)
        self.identity = spec.G_is_identity
        self.D = np.asarray(spec.discount_scale)
        self.m = moments.mean
        self.C = moments.cov
        self.designs = designs  # list over horizons of (d,) or (S, d)
        self.rho = rho
        self.family = family

    def evolve(self, m, C):
        if not self.identity:
            m = m @ self.G.T
            C = self.G @ C @ self.G.T
        return m, C * self.D

    def moments(self, a, R, F):
        if F.ndim == 1:
            RF = R @ F
            f = a @ F
        else:
            RF = np.einsum("uij,uj->ui", R, F)
            f = np.einsum("ui,ui->u", a, F)
        q = np.einsum("ui,ui->u", RF, F) if F.ndim > 1 else RF @ F
        return f, q / self.rho, RF

    def match(self, f, q):
        if self.family == "beta":
            return match_beta_arrays(f, q)
        return match_gamma_arrays(f, q)


def _design_rows(spec, covariate_path, k, sample_covariates, S):
    """Design vector per horizon; a horizon becomes (S, d) when any covariate varies by sample."""
    out = []
    slots = spec.predictor_slots
    for j in range(k):
        cov = dict(covariate_path[j] or {})
        per = {}
        for name, values in (sample_covariates or {}).items():
            if name in slots:
                col = np.asarray(values, dtype=float)[:, j]
                per[name] = col
                cov[name] = 0.0
        F = spec.design(cov)
        if per:
            F = np.repeat(F[None, :], S, axis=0)
            for name, col in per.items():
                F[:, slots[name]] = col
        out.append(F)
    return out


def _simulate_chunk(comps, lo, hi, k, gen):
    n = hi - lo
    b, p = comps
    per_sample = any(F.ndim == 2 for c in comps for F in c.designs)
    if per_sample:
        m0 = np.repeat(b.m[None], n, 0)
        C0 = np.repeat(b.C[None], n, 0)
        m1 = np.repeat(p.m[None], n, 0)
        C1 = np.repeat(p.C[None], n, 0)
        ptr = np.arange(n)
    else:
        m0, C0, m1, C1 = b.m[None], b.C[None], p.m[None], p.C[None]
        ptr = np.zeros(n, dtype=np.int64)
    out = np.empty((n, k), dtype=np.int64)
    for j in range(k):
        F0, F1 = b.designs[j], p.designs[j]
        if F0.ndim == 2:
            F0 = F0[lo:hi]
        if F1.ndim == 2:
            F1 = F1[lo:hi]
        a0, R0 = b.evolve(m0, C0)
        a1, R1 = p.evolve(m1, C1)
        f0, q0, RF0 = b.moments(a0, R0, F0)
        f1, q1, RF1 = p.moments(a1, R1, F1)
        al0, be0 = b.match(f0, q0)
        al1, be1 = p.match(f1, q1)

        pi = (al0 / (al0 + be0))[ptr]
        z = gen.random(n) < pi
        idx = np.flatnonzero(z)
        y = np.zeros(n, dtype=np.int64)
        if idx.size:
            src = ptr[idx]
            y[idx] = 1 + gen.negative_binomial(al1[src], (be1 / (1.0 + be1))[src])
        out[:, j] = y
        if j == k - 1:
            break

        if per_sample:
            parent, yu = ptr, y
        else:
            key = ptr * (int(y.max()) + 1) + y
            uniq, first, inv = np.unique(key, return_index=True, return_inverse=True)
            parent, yu = ptr[first], y[first]
            ptr = inv.reshape(-1)
        zu = (yu > 0).astype(float)

        g0, pp0 = posterior_moments_arrays("beta", al0[parent], be0[parent], zu)
        fq0, qq0 = f0[parent], q0[parent]
        rf0 = RF0[parent]
        m0 = a0[parent] + rf0 * ((g0 - fq0) / qq0)[:, None]
        C0 = R0[parent] - rf0[:, :, None] * rf0[:, None, :] * ((1.0 - pp0 / qq0) / qq0)[:, None, None]

        m1 = a1[parent].copy()
        C1 = R1[parent].copy()
        pos = np.flatnonzero(yu > 0)
        if pos.size:
            par = parent[pos]
            g1, pp1 = posterior_moments_arrays("gamma", al1[par], be1[par], (yu[pos] - 1).astype(float))
            rf1 = RF1[par]
            m1[pos] += rf1 * ((g1 - f1[par]) / q1[par])[:, None]
            C1[pos] -= rf1[:, :, None] * rf1[:, None, :] * ((1.0 - pp1 / q1[par]) / q1[par])[:, None, None]
        C0 = 0.5 * (C0 + np.swapaxes(C0, 1, 2))
        C1 = 0.5 * (C1 + np.swapaxes(C1, 1, 2))
    return out


def forecast_path(
    state: DcmmState,
    k: int,
    S: int,
    covariate_path: Sequence[Covariates] | None = None,
    rng: RngStream | int = 0,
    sample_covariates: Mapping[str, np.ndarray] | None = None,
) -> PathSamples:
    """Draw ``S`` joint predictive paths over horizons ``1..k``.

    Parameters
    ----------
    state : DcmmState
        Posterior at the forecast origin.
    k, S : int
        Horizon and number of paths.
    covariate_path : sequence of mappings, optional
        Covariates for each future step.
    rng : RngStream or int
        Random stream (an int is taken as a seed).
    sample_covariates : mapping of name -> (S, k) array, optional
        Covariates whose values differ between paths, e.g. draws of a shared
        latent factor. They override ``covariate_path`` for that name.
    """
    if k < 1 or S < 1:
        raise InputError(f"need k >= 1 and S >= 1, got k={k}, S={S}")
    if covariate_path is None:
        covariate_path = [None] * k
    if len(covariate_path) < k:
        raise InputError(f"covariate path covers {len(covariate_path)} steps, horizon is {k}")
    if sample_covariates:
        for name, v in sample_covariates.items():
            if np.shape(v)[0] != S or np.shape(v)[1] < k:
                raise InputError(f"sample covariate {name!r} has shape {np.shape(v)}, need ({S}, >={k})")
    if not isinstance(rng, RngStream):
        rng = RngStream(int(rng))
    comps = (
        _Component(
            state.binary_spec,
            state.binary,
            _design_rows(state.binary_spec, covariate_path, k, sample_covariates, S),
            1.0,
            "beta",
        ),
        _Component(
            state.positive_spec,
            state.positive,
            _design_rows(state.positive_spec, covariate_path, k, sample_covariates, S),
            state.re_discount,
            "gamma",
        ),
    )
    out = np.empty((S, k), dtype=np.int64)
    for i, lo in enumerate(range(0, S, CHUNK)):
        hi = min(S, lo + CHUNK)
        out[lo:hi] = _simulate_chunk(comps, lo, hi, k, rng.spawn("chunk", i).generator)
    return PathSamples(out, rng.seed, (rng.stream_id, *rng.path))
