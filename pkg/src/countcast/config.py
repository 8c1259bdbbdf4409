"""Run configuration for the batch driver (JSON on disk)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .dglm.model import Block, ModelSpec
from .errors import ConfigError
from .multiscale.aggregate import FACTOR_NAME, aggregate_model


def series_model(predictors=(), discount=0.99, link="log", seasonal=True, factor=None, factor_discount=None):
    """Level, optional regression, optional full weekly Fourier block and optional factor loading."""
    blocks = [Block.level(discount)]
    if predictors:
        blocks.append(Block.regression(*predictors, discount=discount))
    if seasonal:
        blocks.append(Block.fourier(7, discount=discount))
    if factor:
        blocks.append(Block.regression(factor, discount=discount if factor_discount is None else factor_discount))
    return ModelSpec(tuple(blocks), link=link)


@dataclass
class RunConfig:
    """Everything a run needs besides the data.

    Model entries hold ``ModelSpec.to_dict`` dictionaries; when omitted they
    are built from ``predictors`` and the two discount factors.
    """

    predictors: list = field(default_factory=list)
    binary_discount: float = 0.999
    positive_discount: float = 0.99
    binary_model: dict | None = None
    positive_model: dict | None = None
    aggregate_model: dict | None = None
    aggregate_predictors: list = field(default_factory=list)
    vol_discount: float = 0.999
    aggregate_offset: float = 0.5
    re_discount: float = 1.0
    rho_grid: list = field(default_factory=lambda: [0.4, 0.6, 0.8, 1.0])
    warmup: int = 21
    train: int = 0
    eval_window: int | None = None
    horizon: int = 14
    samples: int = 5000
    seed: int = 0
    threads: int = 1
    metrics: list = field(default_factory=lambda: ["smse", "mad", "mrps", "coverage", "pit", "calibration"])
    coverage_levels: list = field(default_factory=lambda: [0.5, 0.8, 0.9, 0.95])
    contiguous_hpd: bool = False
    calibration_bins: int = 10
    factor_name: str = FACTOR_NAME
    factor_replaces_seasonal: bool = True
    factor_discount: float | None = None
    pin_factor_loading: bool = False
    ridge: float = 1.0
    record_filtered: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.warmup < 1:
            raise ConfigError("warmup must be >= 1")
        if self.train < 0:
            raise ConfigError("train must be >= 0")
        for name in ("binary_discount", "positive_discount", "vol_discount", "re_discount"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")
        if not self.rho_grid or any(not (0.0 < r <= 1.0) for r in self.rho_grid):
            raise ConfigError(f"rho_grid entries must lie in (0, 1], got {self.rho_grid}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.factor_discount is not None and not (0.0 < self.factor_discount <= 1.0):
            raise ConfigError("factor_discount must lie in (0, 1]")
        # build once to surface bad model dictionaries early
        self.binary_spec()
        self.positive_spec()

    def _spec(self, given, discount, link, multiscale):
        if given is not None:
            try:
                spec = ModelSpec.from_dict(given)
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"malformed model specification: {exc}") from None
            if multiscale:
                blocks = tuple(b for b in spec.blocks if not (self.factor_replaces_seasonal and b.kind == "fourier"))
                fd = discount if self.factor_discount is None else self.factor_discount
                spec = spec.replace(blocks=blocks + (Block.regression(self.factor_name, discount=fd),))
            return spec
        return series_model(
            tuple(self.predictors),
            discount,
            link,
            seasonal=not (multiscale and self.factor_replaces_seasonal),
            factor=self.factor_name if multiscale else None,
            factor_discount=self.factor_discount,
        )

    def binary_spec(self, multiscale: bool = False) -> ModelSpec:
        return self._spec(self.binary_model, self.binary_discount, "logit", multiscale)

    def positive_spec(self, multiscale: bool = False) -> ModelSpec:
        return self._spec(self.positive_model, self.positive_discount, "log", multiscale)

    def m0_spec(self) -> ModelSpec:
        if self.aggregate_model is not None:
            return ModelSpec.from_dict(self.aggregate_model)
        return aggregate_model(tuple(self.aggregate_predictors))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: configuration must be a JSON object")
        return cls.from_dict(d)

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
