"""Rolling-origin evaluation and the multi-scale forecast/update loop.

Each series is an independent task. Everything random is drawn from streams
keyed by ``(seed, series id, purpose)``, or by ``(seed, "aggregate", day)``
for the shared factor draws, so results do not depend on the worker count.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .dcmm.core import DcmmState, forecast_marginals, step
from .dglm.model import ModelSpec, StateMoments, seasonal_functional
from .dglm.prior import dcmm_warmup_priors
from .errors import CountcastError, InputError, NumericalError
from .evaluation import (
    DiscretePredictive,
    ForecastRecord,
    binary_calibration,
    coverage,
    mad,
    mrps,
    pit_order_statistics,
    randomized_pit,
    smse,
)
from .io import SeriesData
from .multiscale.aggregate import FactorDraws, aggregate_series, fit_aggregate, sample_factor_paths
from .multiscale.series import MultiscaleSeriesModel, factor_marginal_forecasts, recoupled_update
from .special import RngStream

THREADS_ENV = "COUNTCAST_THREADS"
METRIC_FUNCS = {"smse": smse, "mad": mad, "mrps": mrps}


def resolve_threads(flag: int | None, cfg: RunConfig) -> int:
    """Worker count: command-line flag, else the environment variable, else the config."""
    if flag is not None:
        n = flag
    elif os.environ.get(THREADS_ENV):
        try:
            n = int(os.environ[THREADS_ENV])
        except ValueError:
            raise InputError(f"{THREADS_ENV} must be an integer") from None
    else:
        n = cfg.threads
    return max(1, int(n))


def parallel_map(fn, tasks, threads: int):
    """Ordered map over a process pool (in-process when ``threads == 1``)."""
    tasks = list(tasks)
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as ex:
        return list(ex.map(fn, tasks, chunksize=1))


def rho_key(rho: float) -> str:
    return repr(float(rho))


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------


def baseline_state(series: SeriesData, cfg: RunConfig, rho: float) -> DcmmState:
    """Prior state at the end of the warmup window."""
    bspec, pspec = cfg.binary_spec(), cfg.positive_spec()
    w = _check_length(series, cfg)
    b, p = dcmm_warmup_priors(bspec, pspec, series.y[:w], series.covariate_rows(0, w), ridge=cfg.ridge)
    return DcmmState(bspec, b, pspec, p, float(rho))


def _check_length(series, cfg):
    if len(series) <= cfg.warmup:
        raise InputError(f"series {series.series_id} has {len(series)} days, warmup needs more than {cfg.warmup}")
    return cfg.warmup


def _embed_zero(m: StateMoments, extra: int) -> StateMoments:
    d = m.dim
    mean = np.concatenate([m.mean, np.zeros(extra)])
    cov = np.zeros((d + extra, d + extra))
    cov[:d, :d] = m.cov
    return StateMoments(mean, cov)


def multiscale_state(series: SeriesData, cfg: RunConfig, rho: float, source: "FactorSource") -> MultiscaleSeriesModel:
    """Prior for the factor-loading model at the end of warmup.

    Warmup covariates use the filtered mean factor of each day. A pinned
    loading is fixed at zero with zero variance, which makes the model
    identical to the same model without the factor block.
    """
    bspec, pspec = cfg.binary_spec(multiscale=True), cfg.positive_spec(multiscale=True)
    w = _check_length(series, cfg)
    name = cfg.factor_name
    covs = [dict(c or {}, **{name: source.mean(t)}) for t, c in enumerate(series.covariate_rows(0, w))]
    if cfg.pin_factor_loading:
        rb = bspec.replace(blocks=bspec.blocks[:-1])
        rp = pspec.replace(blocks=pspec.blocks[:-1])
        b, p = dcmm_warmup_priors(rb, rp, series.y[:w], covs, ridge=cfg.ridge)
        b, p = _embed_zero(b, 1), _embed_zero(p, 1)
    else:
        b, p = dcmm_warmup_priors(bspec, pspec, series.y[:w], covs, ridge=cfg.ridge)
    return MultiscaleSeriesModel(DcmmState(bspec, b, pspec, p, float(rho)), name)


# ---------------------------------------------------------------------------
# shared factor
# ---------------------------------------------------------------------------


@dataclass
class FactorSource:
    """Filtered aggregate-model states and on-demand factor draws for each origin day."""

    spec: ModelSpec
    states: list
    seed: int
    horizon: int
    samples: int
    period: float = 7
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def fit(cls, series_list, cfg: RunConfig) -> "FactorSource":
        # missing days count as zero in the total
        y, _ = aggregate_series([np.nan_to_num(s.y, nan=0.0) for s in series_list], cfg.aggregate_offset)
        spec = cfg.m0_spec()
        covs = None
        if cfg.aggregate_predictors:
            covs = [
                {n: float(np.mean([s.covariates[n][t] for s in series_list])) for n in cfg.aggregate_predictors}
                for t in range(len(y))
            ]
        fitted = fit_aggregate(spec, y, covs, vol_discount=cfg.vol_discount)
        return cls(spec, [st for st, _ in fitted], cfg.seed, cfg.horizon, cfg.samples)

    def mean(self, t: int) -> float:
        L = seasonal_functional(self.spec, 0, self.period)
        return float(L @ self.states[t].mean)

    def draws(self, t: int, k: int | None = None) -> FactorDraws:
        """Draws of the factor on days ``t+1 .. t+k+1`` given data up to day ``t``.

        Draws are generated step by step from the day's stream, so the first
        column does not depend on ``k``.
        """
        k = self.horizon if k is None else k
        hit = self._cache.get((t, k))
        if hit is None:
            hit = sample_factor_paths(
                self.states[t], self.spec, k, self.samples, RngStream(self.seed, "aggregate", (t,)), self.period, origin=t
            )
            self._cache[(t, k)] = hit
        return hit

    def next_values(self, t: int) -> np.ndarray:
        """Draws of the factor on day ``t+1`` only."""
        hit = self._cache.get((t, self.horizon))
        return (hit if hit is not None else self.draws(t, 0)).draws[:, 0]

    def __getstate__(self):
        d = dict(self.__dict__)
        d["_cache"] = {}
        return d


# ---------------------------------------------------------------------------
# rolling evaluation
# ---------------------------------------------------------------------------


def eval_origins(T: int, cfg: RunConfig) -> range:
    first = cfg.warmup - 1 + cfg.train
    last = T - 2
    if cfg.eval_window is not None:
        last = min(last, first + cfg.eval_window - 1)
    return range(first, last + 1)


@dataclass
class RunResult:
    series_id: str
    model: str
    rho: float
    records: dict
    pit: np.ndarray
    calib_prob: np.ndarray
    calib_outcome: np.ndarray
    filtered: list
    state: object
    seconds: float


def _history_means(y):
    obs = ~np.isnan(y)
    csum = np.cumsum(np.where(obs, y, 0.0))
    cnt = np.cumsum(obs)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, csum / np.maximum(cnt, 1), 0.0)


def _snapshot(state):
    st = state.dcmm if isinstance(state, MultiscaleSeriesModel) else state
    return (st.binary.mean.copy(), st.binary.cov.copy(), st.positive.mean.copy(), st.positive.cov.copy())


def rolling_run(series: SeriesData, cfg: RunConfig, rho: float, model: str = "baseline", source=None, record_filtered=False):
    """Filter a series from the end of warmup, issuing 1..k step forecasts from each evaluation origin.

    Filtering stops after the last origin unless ``record_filtered`` asks for
    the full trajectory.
    """
    t0 = time.perf_counter()
    T, k = len(series), cfg.horizon
    y = series.y
    covs = series.covariate_rows()
    ybar = _history_means(y)
    origins = eval_origins(T, cfg)
    if model == "baseline":
        state = baseline_state(series, cfg, rho)
    else:
        state = multiscale_state(series, cfg, rho, source)
    pit_rng = RngStream(cfg.seed, series.series_id, ("pit", model, rho_key(rho)))
    records = {h: [] for h in range(1, k + 1)}
    pit, cp, co, filtered = [], [], [], []
    stop = T - 1 if record_filtered or not origins else min(T - 1, origins[-1] + 1)
    for t in range(cfg.warmup - 1, stop):
        if t in origins:
            kh = min(k, T - 1 - t)
            path = covs[t + 1 : t + 1 + kh]
            if model == "baseline":
                fcs = forecast_marginals(state, kh, path)
            else:
                fcs = factor_marginal_forecasts(state, source.draws(t), kh, path)
            for h, fc in enumerate(fcs, start=1):
                yt = y[t + h]
                if np.isnan(yt):
                    continue
                pred = DiscretePredictive.from_forecast(fc)
                rec = ForecastRecord(t, h, pred, int(yt), float(ybar[t]), series.series_id)
                records[h].append(rec)
                if h == 1:
                    pit.append(randomized_pit(pred, int(yt), pit_rng))
                    cp.append(1.0 - pred.pmf(0))
                    co.append(int(yt > 0))
        yn = y[t + 1]
        obs = None if np.isnan(yn) else int(yn)
        if model == "baseline":
            state = step(state, obs, covs[t + 1])[0]
        else:
            state = recoupled_update(state, obs, source.next_values(t), covs[t + 1])[0]
        if record_filtered:
            filtered.append((t + 1, _snapshot(state)))
    return RunResult(
        series.series_id,
        model,
        float(rho),
        records,
        np.array(pit),
        np.array(cp),
        np.array(co),
        filtered,
        state,
        time.perf_counter() - t0,
    )


def summarize(run: RunResult, cfg: RunConfig) -> dict:
    """Table rows (metrics, coverage, pit, calibration) for one run."""
    base = {"series_id": run.series_id, "model": run.model, "rho": run.rho}
    out = {"metrics": [], "coverage": [], "pit": [], "calibration": []}
    for h, recs in run.records.items():
        if not recs:
            continue
        for name in ("smse", "mad", "mrps"):
            if name in cfg.metrics:
                r = METRIC_FUNCS[name](recs)
                out["metrics"].append({**base, "horizon": h, "metric": name, "value": r.value, "n": r.n, "excluded": r.excluded})
        if "coverage" in cfg.metrics:
            for row in coverage(recs, cfg.coverage_levels, cfg.contiguous_hpd):
                out["coverage"].append(
                    {**base, "horizon": h, "level": row.level, "n": row.n, "covered": row.covered, "coverage": row.coverage}
                )
    if "pit" in cfg.metrics and run.pit.size:
        q, u = pit_order_statistics(run.pit)
        for i, (a, b) in enumerate(zip(q, u)):
            out["pit"].append({**base, "index": i, "uniform_quantile": a, "pit": b})
    if "calibration" in cfg.metrics and run.calib_prob.size:
        tab = binary_calibration(run.calib_prob, run.calib_outcome, cfg.calibration_bins)
        for b in tab.bins:
            out["calibration"].append(
                {**base, "bin_lo": b.lo, "bin_hi": b.hi, "n": b.n, "frequency": b.frequency, "ci_lo": b.ci_lo, "ci_hi": b.ci_hi}
            )
    return out


@dataclass
class SeriesTask:
    series: SeriesData
    cfg: RunConfig
    models: tuple
    source: FactorSource | None = None
    record_filtered: bool = False


@dataclass
class SeriesOutcome:
    series_id: str
    status: str
    message: str = ""
    tables: dict = field(default_factory=dict)
    filtered: list = field(default_factory=list)
    seconds: float = 0.0


def run_series_task(task: SeriesTask) -> SeriesOutcome:
    """All models and ``rho`` values for one series; errors are caught and reported per series."""
    sid = task.series.series_id
    tables = {"metrics": [], "coverage": [], "pit": [], "calibration": []}
    filtered = []
    t0 = time.perf_counter()
    try:
        for model in task.models:
            for rho in task.cfg.rho_grid:
                run = rolling_run(task.series, task.cfg, rho, model, task.source, task.record_filtered)
                for name, rows in summarize(run, task.cfg).items():
                    tables[name].extend(rows)
                for day, snap in run.filtered:
                    filtered.append((model, float(rho), day, snap))
    except NumericalError as exc:
        return SeriesOutcome(sid, "numerical", str(exc), seconds=time.perf_counter() - t0)
    except CountcastError as exc:
        return SeriesOutcome(sid, "input", str(exc), seconds=time.perf_counter() - t0)
    return SeriesOutcome(sid, "ok", "", tables, filtered, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# cross-run tables
# ---------------------------------------------------------------------------


def rho_selection(metric_rows):
    """Best (lowest) value over the ``rho`` grid per (series, model, metric, horizon)."""
    best = {}
    for r in metric_rows:
        if r["value"] != r["value"]:  # NaN
            continue
        key = (r["series_id"], r["model"], r["metric"], r["horizon"])
        if key not in best or r["value"] < best[key]["value"]:
            best[key] = {"series_id": key[0], "model": key[1], "metric": key[2], "horizon": key[3], "best_rho": r["rho"], "value": r["value"]}
    return [best[k] for k in sorted(best)]


def comparison(selection_rows, base="baseline", other="multiscale"):
    """Percentage change of the best-over-grid metric, ``100 * (other - base) / base``."""
    idx = {(r["series_id"], r["model"], r["metric"], r["horizon"]): r["value"] for r in selection_rows}
    out = []
    for (sid, model, metric, h), v in sorted(idx.items()):
        if model != base or (sid, other, metric, h) not in idx:
            continue
        w = idx[(sid, other, metric, h)]
        pct = 100.0 * (w - v) / v if v != 0 else (0.0 if w == v else float("inf"))
        out.append({"series_id": sid, "metric": metric, "horizon": h, base: v, other: w, "pct_change": pct})
    return out
