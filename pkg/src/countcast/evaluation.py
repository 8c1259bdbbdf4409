"""Forecast evaluation for count predictives.

Predictives are represented by :class:`DiscretePredictive`, a pmf on
``0..N``. It is built either from an exact forecast, truncated where the
upper tail drops below ``1e-10``, or from Monte Carlo samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InputError
from .special import RngStream

TAIL = 1e-10
MIN_SAMPLES = 1000
# slack when comparing accumulated probability mass with a nominal level
MASS_TOL = 1e-12


class DiscretePredictive:
    """Probability mass function on the counts ``0..len(pmf)-1``.

    Parameters
    ----------
    pmf : array_like
        Non-negative masses. For exact forecasts the missing tail mass is
        below ``TAIL``; values beyond the support have probability zero.
    exact : bool
        Whether the pmf came from an analytic forecast (``True``) or samples.
    """

    __slots__ = ("pmf_values", "exact", "_cdf")

    def __init__(self, pmf, exact: bool = True):
        p = np.asarray(pmf, dtype=float).reshape(-1)
        if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InputError("pmf must be a non-empty array of finite non-negative values")
        total = p.sum()
        if abs(total - 1.0) > 1e-9:
            raise InputError(f"pmf sums to {total!r}, not 1")
        self.pmf_values = p
        self.exact = exact
        self._cdf = np.cumsum(p)

    @classmethod
    def from_forecast(cls, forecast, tail: float = TAIL) -> "DiscretePredictive":
        """From any object with ``support_pmf(tail)`` (e.g. a mixture forecast)."""
        return cls(forecast.support_pmf(tail), exact=True)

    @classmethod
    def from_samples(cls, samples, min_samples: int = MIN_SAMPLES) -> "DiscretePredictive":
        s = np.asarray(samples).reshape(-1)
        if s.size < min_samples:
            raise InputError(f"sample-based predictive needs at least {min_samples} samples, got {s.size}")
        if np.any(s < 0) or np.any(s != np.floor(s)):
            raise InputError("samples must be non-negative integers")
        counts = np.bincount(s.astype(np.int64))
        return cls(counts / s.size, exact=False)

    @classmethod
    def point_mass(cls, y: int) -> "DiscretePredictive":
        p = np.zeros(int(y) + 1)
        p[-1] = 1.0
        return cls(p)

    @property
    def support_max(self) -> int:
        return self.pmf_values.size - 1

    def pmf(self, y):
        y = np.asarray(y)
        inside = (y >= 0) & (y <= self.support_max)
        out = np.where(inside, self.pmf_values[np.clip(y, 0, self.support_max).astype(int)], 0.0)
        return float(out) if out.ndim == 0 else out

    def cdf(self, y):
        y = np.floor(np.asarray(y, dtype=float))
        idx = np.clip(y, 0, self.support_max).astype(int)
        out = np.where(y < 0, 0.0, self._cdf[idx])
        return float(out) if out.ndim == 0 else out

    @property
    def mean(self) -> float:
        return float(np.arange(self.pmf_values.size) @ self.pmf_values)

    @property
    def var(self) -> float:
        x = np.arange(self.pmf_values.size)
        return float((x * x) @ self.pmf_values - self.mean**2)

    def quantile(self, alpha: float) -> int:
        """Smallest count ``m`` with ``cdf(m) >= alpha``."""
        if not (0.0 < alpha < 1.0):
            raise InputError(f"quantile level must lie in (0, 1), got {alpha}")
        return int(min(np.searchsorted(self._cdf, alpha, side="left"), self.support_max))

    @property
    def median(self) -> int:
        return self.quantile(0.5)


def as_predictive(obj) -> DiscretePredictive:
    if isinstance(obj, DiscretePredictive):
        return obj
    if hasattr(obj, "support_pmf"):
        return DiscretePredictive.from_forecast(obj)
    return DiscretePredictive(obj)


@dataclass
class ForecastRecord:
    """One forecast of ``outcome``, issued at ``origin`` for ``origin + horizon``.

    ``history_mean`` is the mean of the series observed up to the origin, used
    to scale squared errors.
    """

    origin: int
    horizon: int
    predictive: DiscretePredictive
    outcome: int
    history_mean: float | None = None
    series_id: str | None = None

    def __post_init__(self):
        if self.outcome < 0:
            raise InputError(f"outcome must be non-negative, got {self.outcome}")
        self.predictive = as_predictive(self.predictive)


# ---------------------------------------------------------------------------
# HPD sets and coverage
# ---------------------------------------------------------------------------


def hpd_set(pmf, level: float, contiguous: bool = False) -> np.ndarray:
    """Boolean mask over ``0..len(pmf)-1`` of a highest-density set with mass ``>= level``.

    Set mode adds counts in decreasing order of mass (ties to the smaller
    count) until the level is reached, so the set may have holes. Contiguous
    mode returns the shortest interval reaching the level, preferring larger
    mass and then the leftmost interval. If the level exceeds the available
    mass the whole support is returned.
    """
    p = pmf.pmf_values if isinstance(pmf, DiscretePredictive) else np.asarray(pmf, dtype=float)
    if not (0.0 < level <= 1.0):
        raise InputError(f"level must lie in (0, 1], got {level}")
    mask = np.zeros(p.size, dtype=bool)
    target = level - MASS_TOL
    if contiguous:
        cs = np.concatenate([[0.0], np.cumsum(p)])
        # for each start a, smallest end b with mass(a..b) >= level
        ends = np.searchsorted(cs, cs[:-1] + target, side="left") - 1
        ok = ends < p.size
        if not ok.any():
            mask[:] = True
            return mask
        starts = np.flatnonzero(ok)
        widths = ends[ok] - starts
        masses = cs[ends[ok] + 1] - cs[starts]
        order = np.lexsort((starts, -masses, widths))
        a = starts[order[0]]
        mask[a : ends[a] + 1] = True
        return mask
    order = np.lexsort((np.arange(p.size), -p))
    acc = np.cumsum(p[order])
    n = int(np.searchsorted(acc, target, side="left")) + 1
    mask[order[: min(n, p.size)]] = True
    return mask


def in_hpd(predictive, y: int, level: float, contiguous: bool = False) -> bool:
    pred = as_predictive(predictive)
    if y < 0 or y > pred.support_max:
        return False
    return bool(hpd_set(pred, level, contiguous)[int(y)])


@dataclass(frozen=True)
class CoverageRow:
    level: float
    horizon: int
    n: int
    covered: int

    @property
    def coverage(self) -> float:
        return self.covered / self.n if self.n else float("nan")


def coverage(records: Iterable[ForecastRecord], levels: Sequence[float], contiguous: bool = False):
    """Empirical coverage of HPD sets per (level, horizon); returns a list of :class:`CoverageRow`."""
    tally: dict = {}
    for r in records:
        for lv in levels:
            key = (float(lv), r.horizon)
            n, c = tally.get(key, (0, 0))
            tally[key] = (n + 1, c + int(in_hpd(r.predictive, r.outcome, lv, contiguous)))
    return [CoverageRow(lv, h, n, c) for (lv, h), (n, c) in sorted(tally.items())]


# ---------------------------------------------------------------------------
# PIT and calibration
# ---------------------------------------------------------------------------


def randomized_pit(cdf, y: int, rng: RngStream | np.random.Generator) -> float:
    """Uniform draw between ``P(y - 1)`` and ``P(y)`` with ``P(-1) = 0``.

    ``cdf`` is a callable or a predictive with a ``cdf`` method. When the
    outcome has zero mass the common cdf value is returned.
    """
    F = cdf.cdf if hasattr(cdf, "cdf") else cdf
    hi = float(F(y))
    lo = float(F(y - 1)) if y > 0 else 0.0
    if hi < lo - 1e-15:
        raise InputError(f"cdf decreases at y={y}: P(y-1)={lo}, P(y)={hi}")
    if hi <= lo:
        return hi
    gen = rng.generator if isinstance(rng, RngStream) else rng
    return lo + (hi - lo) * float(gen.random())


def pit_values(records: Sequence[ForecastRecord], rng) -> np.ndarray:
    return np.array([randomized_pit(r.predictive, r.outcome, rng) for r in records])


def pit_order_statistics(u) -> tuple[np.ndarray, np.ndarray]:
    """Plotting positions ``i / (n + 1)`` against sorted PIT values."""
    u = np.sort(np.asarray(u, dtype=float))
    return np.arange(1, u.size + 1) / (u.size + 1), u


@dataclass(frozen=True)
class CalibrationBin:
    lo: float
    hi: float
    n: int
    frequency: float | None
    ci_lo: float | None
    ci_hi: float | None


@dataclass(frozen=True)
class CalibrationTable:
    bins: tuple

    @property
    def total(self) -> int:
        return sum(b.n for b in self.bins)


def binary_calibration(probs, outcomes, n_bins: int = 10) -> CalibrationTable:
    """Observed frequency of non-zero outcomes within equal-width probability bins.

    Bins span ``[min(probs), max(probs)]``; the last bin is closed on the
    right. Each occupied bin carries a Wald 95% interval
    ``f +/- 1.96 sqrt(f (1 - f) / n)`` (not clipped to [0, 1]).
    """
    p = np.asarray(probs, dtype=float).reshape(-1)
    z = np.asarray(outcomes).reshape(-1)
    if p.shape != z.shape:
        raise InputError("probabilities and outcomes differ in length")
    if p.size == 0:
        raise InputError("no forecasts to calibrate")
    if np.any((p < 0) | (p > 1)):
        raise InputError("probabilities must lie in [0, 1]")
    z = (z > 0).astype(float)
    lo, hi = float(p.min()), float(p.max())
    edges = np.linspace(lo, hi, n_bins + 1)
    if hi > lo:
        idx = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, n_bins - 1)
    else:
        idx = np.zeros(p.size, dtype=int)
    bins = []
    for b in range(n_bins):
        sel = idx == b
        n = int(sel.sum())
        if n:
            f = float(z[sel].mean())
            half = 1.96 * math.sqrt(f * (1.0 - f) / n)
            bins.append(CalibrationBin(float(edges[b]), float(edges[b + 1]), n, f, f - half, f + half))
        else:
            bins.append(CalibrationBin(float(edges[b]), float(edges[b + 1]), 0, None, None, None))
    return CalibrationTable(tuple(bins))


# ---------------------------------------------------------------------------
# point and probabilistic accuracy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricResult:
    value: float
    n: int
    excluded: int = 0
    diagnostics: dict = field(default_factory=dict)


def smse(records: Sequence[ForecastRecord], history_means: Sequence[float] | None = None) -> MetricResult:
    """Mean of ``(y - mean forecast)^2 / ybar^2``; records with ``ybar = 0`` are excluded and counted."""
    if history_means is None:
        history_means = [r.history_mean for r in records]
    if len(history_means) != len(records):
        raise InputError("history means and records differ in length")
    vals, excluded = [], 0
    for r, ybar in zip(records, history_means):
        if ybar is None or not ybar > 0:
            excluded += 1
            continue
        vals.append((r.outcome - r.predictive.mean) ** 2 / ybar**2)
    value = float(np.mean(vals)) if vals else float("nan")
    return MetricResult(value, len(vals), excluded, {"zero_history": excluded})


def mad(records: Sequence[ForecastRecord]) -> MetricResult:
    """Mean absolute deviation of the outcome from the predictive median."""
    vals = [abs(r.outcome - r.predictive.median) for r in records]
    return MetricResult(float(np.mean(vals)) if vals else float("nan"), len(vals))


def rps(predictive, y: int) -> float:
    """Ranked probability score, summed until ``1 - P(j) < 1e-10`` and ``j >= y``."""
    pred = as_predictive(predictive)
    J = max(int(y), pred.support_max)
    P = np.concatenate([pred._cdf, np.full(J + 1 - pred._cdf.size, pred._cdf[-1])])
    j = np.arange(J + 1)
    done = np.flatnonzero((j >= y) & (1.0 - P < TAIL))
    if done.size:
        P, j = P[: done[0] + 1], j[: done[0] + 1]
    return float(np.sum((P - (j >= y)) ** 2))


def mrps(records: Sequence[ForecastRecord]) -> MetricResult:
    vals = [rps(r.predictive, r.outcome) for r in records]
    return MetricResult(float(np.mean(vals)) if vals else float("nan"), len(vals))


# ---------------------------------------------------------------------------
# optimal point forecasts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Pinball:
    alpha: float


@dataclass(frozen=True)
class Zape:
    """Zero-adjusted absolute percentage error with cost ``zero_cost(f)`` for forecasting ``f`` when ``y = 0``."""

    zero_cost: Callable[[float], float] | None = None
    c: float = 1.0

    def cost(self, f):
        return self.zero_cost(f) if self.zero_cost is not None else self.c * f


def expected_zape(pred: DiscretePredictive, f: float, loss: Zape) -> float:
    p = pred.pmf_values
    y = np.arange(1, p.size)
    return float(np.sum(p[1:] * np.abs(1.0 - f / y)) + p[0] * loss.cost(f))


def point_forecast(predictive, loss="squared"):
    """Optimal point forecast under ``loss``.

    ``"squared"`` gives the mean, ``"absolute"`` the median, ``Pinball(a)`` the
    ``a``-quantile, ``"ape"`` the median of ``g(y) ~ p(y) / y`` on ``y >= 1``,
    and ``Zape(...)`` the integer minimising expected zero-adjusted APE.
    """
    pred = as_predictive(predictive)
    if loss == "squared":
        return pred.mean
    if loss == "absolute":
        return pred.median
    if isinstance(loss, Pinball):
        return pred.quantile(loss.alpha)
    if loss == "ape":
        p = pred.pmf_values[1:]
        if p.size == 0 or p.sum() <= 0:
            raise InputError("APE forecast undefined: predictive puts all mass at zero")
        g = p / np.arange(1, p.size + 1)
        cg = np.cumsum(g) / g.sum()
        return int(np.searchsorted(cg, 0.5, side="left")) + 1
    if isinstance(loss, Zape):
        cands = np.arange(pred.support_max + 1)
        costs = [expected_zape(pred, float(f), loss) for f in cands]
        return int(cands[int(np.argmin(costs))])
    raise InputError(f"unknown loss {loss!r}")
