"""State moments, block-structured model specifications and design vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import numpy as np

from ..errors import ConfigError, InputError, NumericalError

LINKS = ("logit", "log", "identity")
BLOCK_KINDS = ("level", "trend", "regression", "fourier", "random_effect")

PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class StateMoments:
    """Mean vector and covariance matrix of a state vector.

    Used for both posterior ``(m, C)`` and evolved prior ``(a, R)`` moments.
    The covariance is symmetrised on construction and must be positive
    semi-definite up to ``1e-10 * trace``.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ConfigError(f"covariance shape {cov.shape} does not match mean length {d}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NumericalError("state moments contain non-finite values", mean=mean, cov=cov)
        scale = max(1.0, float(np.max(np.abs(cov)))) if d else 1.0
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-8 * scale:
            raise NumericalError("covariance is not symmetric", cov=cov)
        cov = 0.5 * (cov + cov.T)
        if d:
            if np.any(np.diag(cov) < 0.0):
                raise NumericalError("negative variance on the diagonal", diag=np.diag(cov))
            lo = float(np.linalg.eigvalsh(cov)[0])
            if lo < -PSD_TOL * max(float(np.trace(cov)), 1e-300):
                raise NumericalError("covariance is not positive semi-definite", min_eigenvalue=lo)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def __eq__(self, other):
        if not isinstance(other, StateMoments):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)

    def __repr__(self):
        return f"StateMoments(mean={self.mean!r}, cov={self.cov!r})"


@dataclass(frozen=True)
class Block:
    """One component of a state vector.

    Build blocks with the class constructors, e.g. ``Block.level(0.99)``,
    ``Block.regression("log_price", discount=0.99)`` or
    ``Block.fourier(7, discount=0.99)``.
    """

    kind: str
    discount: float = 1.0
    names: tuple = ()
    period: float | None = None
    harmonics: int | None = None

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ConfigError(f"unknown block kind {self.kind!r}")
        if not (0.0 < self.discount <= 1.0):
            raise ConfigError(f"discount factor must lie in (0, 1], got {self.discount}")
        if self.kind == "regression" and not self.names:
            raise ConfigError("a regression block needs at least one predictor name")
        if self.kind == "random_effect" and self.discount != 1.0:
            raise ConfigError("random-effect blocks are not discounted; set the model re_discount instead")
        if self.kind == "fourier":
            if self.period is None or self.period <= 1:
                raise ConfigError("fourier block needs a period > 1")
            full = int(math.floor(self.period / 2))
            h = full if self.harmonics is None else int(self.harmonics)
            if not (1 <= h <= full):
                raise ConfigError(f"harmonics must lie in [1, {full}] for period {self.period}")
            object.__setattr__(self, "harmonics", h)
        object.__setattr__(self, "names", tuple(self.names))

    @classmethod
    def level(cls, discount=1.0):
        return cls("level", discount)

    @classmethod
    def trend(cls, discount=1.0):
        """Local linear trend: level and slope."""
        return cls("trend", discount)

    @classmethod
    def regression(cls, *names, discount=1.0):
        return cls("regression", discount, names=tuple(names))

    @classmethod
    def fourier(cls, period, harmonics=None, discount=1.0):
        return cls("fourier", discount, period=period, harmonics=harmonics)

    @classmethod
    def random_effect(cls):
        return cls("random_effect", 1.0)

    @property
    def has_nyquist(self) -> bool:
        return (
            self.kind == "fourier"
            and float(self.period).is_integer()
            and int(self.period) % 2 == 0
            and self.harmonics == int(self.period) // 2
        )

    @property
    def dim(self) -> int:
        if self.kind in ("level", "random_effect"):
            return 1
        if self.kind == "trend":
            return 2
        if self.kind == "regression":
            return len(self.names)
        return 2 * self.harmonics - (1 if self.has_nyquist else 0)

    def evolution_matrix(self) -> np.ndarray:
        if self.kind in ("level", "regression"):
            return np.eye(self.dim)
        if self.kind == "random_effect":
            return np.zeros((1, 1))
        if self.kind == "trend":
            return np.array([[1.0, 1.0], [0.0, 1.0]])
        G = np.zeros((self.dim, self.dim))
        for j in range(1, self.harmonics + 1):
            i = 2 * (j - 1)
            if self.has_nyquist and j == self.harmonics:
                G[i, i] = -1.0
            else:
                G[i : i + 2, i : i + 2] = harmonic_rotation(self.period, j)
        return G

    def design_template(self) -> np.ndarray:
        if self.kind in ("level", "random_effect"):
            return np.ones(1)
        if self.kind == "trend":
            return np.array([1.0, 0.0])
        if self.kind == "regression":
            return np.zeros(self.dim)
        F = np.zeros(self.dim)
        F[0::2] = 1.0
        return F

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "discount": self.discount}
        if self.names:
            out["names"] = list(self.names)
        if self.kind == "fourier":
            out["period"] = self.period
            out["harmonics"] = self.harmonics
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "Block":
        return cls(
            d["kind"],
            float(d.get("discount", 1.0)),
            names=tuple(d.get("names", ())),
            period=d.get("period"),
            harmonics=d.get("harmonics"),
        )


def harmonic_rotation(period: float, j: int) -> np.ndarray:
    """2x2 rotation advancing harmonic ``j`` of a period-``period`` cycle by one step."""
    w = 2.0 * math.pi * j / period
    c, s = math.cos(w), math.sin(w)
    return np.array([[c, s], [-s, c]])


@dataclass(frozen=True)
class ModelSpec:
    """Declarative DGLM: ordered blocks, link and random-effect discount.

    ``re_discount`` (rho) inflates the linear-predictor variance q to q/rho
    before conjugate matching. A ``random_effect`` block is optional
    bookkeeping: it adds a state element with F = 1 and G = 0, so it never
    carries information from one time to the next.
    """

    blocks: tuple
    link: str = "log"
    re_discount: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.link not in LINKS:
            raise ConfigError(f"unknown link {self.link!r}; expected one of {LINKS}")
        if not self.blocks:
            raise ConfigError("a model needs at least one block")
        if not (0.0 < self.re_discount <= 1.0):
            raise ConfigError(f"random-effect discount must lie in (0, 1], got {self.re_discount}")
        seen = set()
        for b in self.blocks:
            for n in b.names:
                if n in seen:
                    raise ConfigError(f"predictor {n!r} appears in more than one block")
                seen.add(n)

    @cached_property
    def slices(self) -> tuple:
        out, start = [], 0
        for b in self.blocks:
            out.append(slice(start, start + b.dim))
            start += b.dim
        return tuple(out)

    @cached_property
    def dim(self) -> int:
        return sum(b.dim for b in self.blocks)

    @cached_property
    def G(self) -> np.ndarray:
        G = np.zeros((self.dim, self.dim))
        for b, sl in zip(self.blocks, self.slices):
            G[sl, sl] = b.evolution_matrix()
        G.setflags(write=False)
        return G

    @cached_property
    def G_is_identity(self) -> bool:
        return bool(np.array_equal(self.G, np.eye(self.dim)))

    @cached_property
    def discount_scale(self) -> np.ndarray:
        """Elementwise multiplier taking P = G C G' to R (1/delta on diagonal blocks)."""
        D = np.ones((self.dim, self.dim))
        for b, sl in zip(self.blocks, self.slices):
            D[sl, sl] = 1.0 / b.discount
        D.setflags(write=False)
        return D

    @cached_property
    def F_template(self) -> np.ndarray:
        F = np.concatenate([b.design_template() for b in self.blocks])
        F.setflags(write=False)
        return F

    @cached_property
    def predictor_slots(self) -> dict:
        """Map predictor name -> index into the state vector."""
        out = {}
        for b, sl in zip(self.blocks, self.slices):
            for k, n in enumerate(b.names):
                out[n] = sl.start + k
        return out

    @property
    def predictors(self) -> tuple:
        return tuple(self.predictor_slots)

    def design(self, covariates: Mapping[str, float] | None = None) -> np.ndarray:
        """Regression vector F for the given covariate values."""
        F = self.F_template.copy()
        slots = self.predictor_slots
        if slots:
            if covariates is None:
                raise InputError(f"missing covariates {sorted(slots)}")
            for name, idx in slots.items():
                try:
                    F[idx] = float(covariates[name])
                except KeyError:
                    raise InputError(f"missing covariate {name!r}") from None
        return F

    def block_index(self, kind: str, period=None) -> int:
        for i, b in enumerate(self.blocks):
            if b.kind == kind and (period is None or b.period == period):
                return i
        raise ConfigError(f"model has no {kind} block" + (f" with period {period}" if period else ""))

    def replace(self, **changes) -> "ModelSpec":
        d = {"blocks": self.blocks, "link": self.link, "re_discount": self.re_discount}
        d.update(changes)
        return ModelSpec(**d)

    def to_dict(self) -> dict:
        return {
            "blocks": [b.to_dict() for b in self.blocks],
            "link": self.link,
            "re_discount": self.re_discount,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        return cls(
            tuple(Block.from_dict(b) for b in d["blocks"]),
            link=d.get("link", "log"),
            re_discount=float(d.get("re_discount", 1.0)),
        )


def build_design(spec: ModelSpec, covariates: Mapping[str, float] | None = None):
    """Return ``(F, G)`` for one time step."""
    return spec.design(covariates), np.array(spec.G)


def seasonal_functional(spec: ModelSpec, day: int, period=None) -> np.ndarray:
    """Vector L with L' theta_t equal to the seasonal effect ``day`` steps after t.

    ``day = 0`` is the effect at the current time. For a full Fourier
    representation the ``period`` factors obtained for ``day = 0..period-1``
    sum to zero.
    """
    i = spec.block_index("fourier", period)
    b, sl = spec.blocks[i], spec.slices[i]
    Gb = b.evolution_matrix()
    Lb = np.linalg.matrix_power(Gb, int(day)).T @ b.design_template()
    L = np.zeros(spec.dim)
    L[sl] = Lb
    return L


def seasonal_factor(state: StateMoments, spec: ModelSpec, day: int = 0, period=None):
    """Mean and variance of the seasonal effect ``day`` steps ahead of ``state``."""
    L = seasonal_functional(spec, day, period)
    return float(L @ state.mean), float(L @ state.cov @ L)
