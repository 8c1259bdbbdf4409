"""Polygamma functions and reproducible random sampling.

``digamma``, ``trigamma`` and ``tetragamma`` shift their argument upward with
the recurrence relations until it is at least 6 and then sum the asymptotic
Bernoulli-number expansion. Scalars take a pure ``math`` path (the filters
call these in tight loops); arrays are handled elementwise with numpy.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = [
    "digamma",
    "trigamma",
    "tetragamma",
    "RngStream",
    "stream_key",
    "Bernoulli",
    "Beta",
    "Gamma",
    "Poisson",
    "NegativeBinomial",
    "Normal",
    "StudentT",
    "sample",
]

_SHIFT_TO = 6.0
_N_SHIFTS = 6  # any x > 0 reaches x >= 6 after six unit shifts

# Bernoulli numbers B_2, B_4, ..., B_20
_B2K = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
)
# series coefficients in powers of z = 1/x^2, highest order first for Horner
_DIG = tuple(b / (2 * k) for k, b in enumerate(_B2K, start=1))[::-1]
_TRI = _B2K[::-1]
_TET = tuple((2 * k + 1) * b for k, b in enumerate(_B2K, start=1))[::-1]


def _horner(coefs, z):
    acc = coefs[0]
    for c in coefs[1:]:
        acc = acc * z + c
    return acc


def _check_scalar(x):
    if not (math.isfinite(x) and x > 0.0):
        raise DomainError(f"argument must be positive and finite, got {x!r}")


def _check_array(x):
    if not np.all(np.isfinite(x) & (x > 0.0)):
        bad = x[~(np.isfinite(x) & (x > 0.0))]
        raise DomainError(f"argument must be positive and finite, got {bad[:5]!r}")


def _digamma_scalar(x):
    acc = 0.0
    while x < _SHIFT_TO:
        acc -= 1.0 / x
        x += 1.0
    z = 1.0 / (x * x)
    return acc + math.log(x) - 0.5 / x - z * _horner(_DIG, z)


def _trigamma_scalar(x):
    acc = 0.0
    while x < _SHIFT_TO:
        acc += 1.0 / (x * x)
        x += 1.0
    z = 1.0 / (x * x)
    return acc + 1.0 / x + 0.5 * z + z / x * _horner(_TRI, z)


def _tetragamma_scalar(x):
    acc = 0.0
    while x < _SHIFT_TO:
        acc -= 2.0 / (x * x * x)
        x += 1.0
    z = 1.0 / (x * x)
    return acc - z - z / x - z * z * _horner(_TET, z)


def _shift(x, term):
    acc = np.zeros_like(x)
    for _ in range(_N_SHIFTS):
        small = x < _SHIFT_TO
        if not small.any():
            break
        acc = acc + np.where(small, term(x), 0.0)
        x = np.where(small, x + 1.0, x)
    return acc, x


def _dispatch(x, scalar_fn, array_fn):
    if np.ndim(x) == 0 and not isinstance(x, np.ndarray):
        x = float(x)
        _check_scalar(x)
        return scalar_fn(x)
    arr = np.asarray(x, dtype=float)
    _check_array(arr)
    return array_fn(arr)


def _digamma_array(x):
    acc, x = _shift(x, lambda v: -1.0 / v)
    z = 1.0 / (x * x)
    return acc + np.log(x) - 0.5 / x - z * _horner(_DIG, z)


def _trigamma_array(x):
    acc, x = _shift(x, lambda v: 1.0 / (v * v))
    z = 1.0 / (x * x)
    return acc + 1.0 / x + 0.5 * z + z / x * _horner(_TRI, z)


def _tetragamma_array(x):
    acc, x = _shift(x, lambda v: -2.0 / (v * v * v))
    z = 1.0 / (x * x)
    return acc - z - z / x - z * z * _horner(_TET, z)


def polygamma_012(x):
    """Digamma, trigamma and tetragamma of a positive array in one pass.

    Shares the upward recurrence between the three functions, which is what
    the vectorised Newton solvers need at every iteration.
    """
    x = np.asarray(x, dtype=float)
    _check_array(x)
    a0 = np.zeros_like(x)
    a1 = np.zeros_like(x)
    a2 = np.zeros_like(x)
    for _ in range(_N_SHIFTS):
        small = x < _SHIFT_TO
        if not small.any():
            break
        inv = np.where(small, 1.0 / x, 0.0)
        inv2 = inv * inv
        a0 -= inv
        a1 += inv2
        a2 -= 2.0 * inv2 * inv
        x = x + small
    z = 1.0 / (x * x)
    r = 1.0 / x
    d0 = a0 + np.log(x) - 0.5 * r - z * _horner(_DIG, z)
    d1 = a1 + r + 0.5 * z + z * r * _horner(_TRI, z)
    d2 = a2 - z - z * r - z * z * _horner(_TET, z)
    return d0, d1, d2


def digamma(x):
    """Digamma function psi(x) = d/dx log Gamma(x) for x > 0.

    Accepts a scalar (returns ``float``) or an array (returns ``ndarray``).
    Raises :class:`DomainError` for non-positive or non-finite input.
    """
    return _dispatch(x, _digamma_scalar, _digamma_array)


def trigamma(x):
    """Trigamma function psi'(x) for x > 0."""
    return _dispatch(x, _trigamma_scalar, _trigamma_array)


def tetragamma(x):
    """Second derivative of the digamma function, used by the Newton solvers."""
    return _dispatch(x, _tetragamma_scalar, _tetragamma_array)


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def stream_key(label) -> int:
    """Map an arbitrary label (e.g. a series id) to a stable 64-bit integer."""
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK64
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """A seeded, splittable random stream.

    The stream is a Philox counter-based generator keyed by
    ``(seed, stream_id, *path)`` through :class:`numpy.random.SeedSequence`,
    so the same key gives the same draws on every platform and distinct keys
    give independent streams. ``spawn`` derives children from the key alone,
    never from how many draws the parent has consumed, which keeps results
    independent of task scheduling.
    """

    def __init__(self, seed: int, stream_id: int = 0, path: tuple = ()):
        self.seed = int(seed) & _MASK64
        self.stream_id = stream_key(stream_id)
        self.path = tuple(stream_key(p) for p in path)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        self.generator = np.random.Generator(np.random.Philox(seq))

    def spawn(self, *keys) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + tuple(keys))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------


def _require(cond, msg):
    if not cond:
        raise DomainError(msg)


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        _require(0.0 <= self.p <= 1.0, f"bernoulli p must lie in [0, 1], got {self.p}")


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def __post_init__(self):
        _require(self.a > 0 and self.b > 0, f"beta parameters must be positive, got {self.a}, {self.b}")


@dataclass(frozen=True)
class Gamma:
    """Gamma with shape and *rate* (mean shape/rate)."""

    shape: float
    rate: float

    def __post_init__(self):
        _require(self.shape > 0 and self.rate > 0, "gamma shape and rate must be positive")


@dataclass(frozen=True)
class Poisson:
    mu: float

    def __post_init__(self):
        _require(math.isfinite(self.mu) and self.mu >= 0, f"poisson mean must be >= 0, got {self.mu}")


@dataclass(frozen=True)
class NegativeBinomial:
    """pmf(x) = C(x+r-1, x) p^r (1-p)^x on x = 0, 1, 2, ..."""

    r: float
    p: float

    def __post_init__(self):
        _require(self.r > 0, f"negative binomial size must be positive, got {self.r}")
        _require(0.0 < self.p <= 1.0, f"negative binomial p must lie in (0, 1], got {self.p}")


@dataclass(frozen=True)
class Normal:
    mean: float
    var: float

    def __post_init__(self):
        _require(self.var >= 0 and math.isfinite(self.mean), "normal variance must be >= 0")


@dataclass(frozen=True)
class StudentT:
    df: float
    loc: float
    scale: float

    def __post_init__(self):
        _require(self.df > 0 and self.scale >= 0, "student-t needs df > 0 and scale >= 0")


def sample(dist, rng: RngStream, size=None):
    """Draw from ``dist`` using ``rng``.

    Poisson draws use numpy's generator, which inverts the cdf for means below
    10 and switches to transformed rejection (PTRS) above.
    """
    g = rng.generator if isinstance(rng, RngStream) else rng
    if isinstance(dist, Bernoulli):
        return (g.random(size) < dist.p).astype(np.int64) if size is not None else int(g.random() < dist.p)
    if isinstance(dist, Beta):
        return g.beta(dist.a, dist.b, size)
    if isinstance(dist, Gamma):
        return g.gamma(dist.shape, 1.0 / dist.rate, size)
    if isinstance(dist, Poisson):
        return g.poisson(dist.mu, size)
    if isinstance(dist, NegativeBinomial):
        return g.negative_binomial(dist.r, dist.p, size)
    if isinstance(dist, Normal):
        return g.normal(dist.mean, math.sqrt(dist.var), size)
    if isinstance(dist, StudentT):
        if math.isinf(dist.df):
            return g.normal(dist.loc, dist.scale, size)
        return dist.loc + dist.scale * g.standard_t(dist.df, size)
    raise DomainError(f"unsupported distribution {dist!r}")
