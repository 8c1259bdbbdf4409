"""Command-line batch driver.

Exit codes: 0 on success, 2 for input or configuration errors, 3 for
numerical failures. When only some series fail, the healthy ones are still
written and ``failures.json`` lists the rest.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .config import RunConfig
from .dcmm.core import DcmmState, step
from .dcmm.paths import forecast_path
from .dglm.prior import dcmm_warmup_priors
from .errors import ConfigError, CountcastError, InputError, NumericalError
from .evaluation import DiscretePredictive, ForecastRecord, randomized_pit
from .io import (
    SeriesData,
    read_checkpoint,
    read_json,
    read_samples,
    read_series_table,
    write_checkpoint,
    write_json,
    write_samples,
    write_series_table,
    write_table,
)
from .multiscale.aggregate import FactorDraws
from .multiscale.series import MultiscaleSeriesModel, multiscale_forecast
from .pipeline import (
    FactorSource,
    RunResult,
    SeriesTask,
    baseline_state,
    comparison,
    parallel_map,
    resolve_threads,
    rho_key,
    rho_selection,
    run_series_task,
    summarize,
)
from .special import RngStream
from .synthetic import PanelConfig, generate_panel, write_truth

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3
SUMMARY_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)

METRIC_COLUMNS = ("series_id", "model", "rho", "horizon", "metric", "value", "n", "excluded")
COVERAGE_COLUMNS = ("series_id", "model", "rho", "horizon", "level", "n", "covered", "coverage")
PIT_COLUMNS = ("series_id", "model", "rho", "index", "uniform_quantile", "pit")
CALIBRATION_COLUMNS = ("series_id", "model", "rho", "bin_lo", "bin_hi", "n", "frequency", "ci_lo", "ci_hi")
SELECTION_COLUMNS = ("series_id", "model", "metric", "horizon", "best_rho", "value")
COMPARISON_COLUMNS = ("series_id", "metric", "horizon", "baseline", "multiscale", "pct_change")
SUMMARY_COLUMNS = ("series_id", "horizon", "mean") + tuple(f"q{int(round(100 * a)):02d}" for a in SUMMARY_QUANTILES)


def _log(msg: str):
    print(msg, file=sys.stderr)


def _log_series(sid, msg):
    msg = str(msg)
    _log(msg if repr(sid) in msg else f"series {sid!r}: {msg}")


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = int(args.seed)
    return cfg


def _out_dir(args) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return args.out_dir


def _path(out, name):
    return os.path.join(out, name)


def _read_data(path, cfg: RunConfig, extra=()):
    series, failures = read_series_table(path, tuple(cfg.predictors) + tuple(extra))
    if failures:
        for sid, msgs in failures.items():
            for m in msgs:
                _log(f"series {sid!r}: {m}")
    return series, {sid: {"status": "input", "messages": msgs} for sid, msgs in failures.items()}


def _finish(out, failures: dict) -> int:
    """Write the failure manifest (if any) and pick the exit code."""
    path = _path(out, "failures.json")
    if failures:
        write_json(path, dict(sorted(failures.items())))
    elif os.path.exists(path):
        os.remove(path)
    statuses = {f["status"] for f in failures.values()}
    if "numerical" in statuses:
        return EXIT_NUMERICAL
    if statuses:
        return EXIT_INPUT
    return EXIT_OK


def _timing_report(name, seconds, path=None):
    if not seconds:
        return
    pct = np.percentile(np.asarray(seconds), [50, 90, 99, 100])
    report = {"series": len(seconds), "total_seconds": float(np.sum(seconds)), "p50": pct[0], "p90": pct[1], "p99": pct[2], "max": pct[3]}
    _log(f"{name}: {len(seconds)} series, per-series seconds p50={pct[0]:.4f} p90={pct[1]:.4f} p99={pct[2]:.4f} max={pct[3]:.4f}")
    if path:
        write_json(path, {k: float(v) for k, v in report.items()})


def _write_tables(out, tables: dict):
    write_table(_path(out, "metrics.csv"), METRIC_COLUMNS, tables["metrics"])
    write_table(_path(out, "coverage.csv"), COVERAGE_COLUMNS, tables["coverage"])
    write_table(_path(out, "pit.csv"), PIT_COLUMNS, tables["pit"])
    write_table(_path(out, "calibration.csv"), CALIBRATION_COLUMNS, tables["calibration"])
    sel = rho_selection(tables["metrics"])
    write_table(_path(out, "rho_selection.csv"), SELECTION_COLUMNS, sel)
    return sel


def _merge_tables(outcomes):
    tables = {"metrics": [], "coverage": [], "pit": [], "calibration": []}
    for o in sorted(outcomes, key=lambda o: o.series_id):
        for name in tables:
            tables[name].extend(o.tables.get(name, []))
    return tables


def _write_filtered(path, outcomes):
    with open(path, "w") as fh:
        for o in sorted(outcomes, key=lambda o: o.series_id):
            for model, rho, day, (bm, bc, pm, pc) in o.filtered:
                rec = {
                    "series_id": o.series_id,
                    "model": model,
                    "rho": rho,
                    "day": day,
                    "binary_mean": bm.tolist(),
                    "binary_cov": bc.tolist(),
                    "positive_mean": pm.tolist(),
                    "positive_cov": pc.tolist(),
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


@dataclass
class _FitTask:
    series: SeriesData
    cfg: RunConfig
    multiscale: bool


def _fit_one(task: _FitTask):
    s, cfg = task.series, task.cfg
    t0 = time.perf_counter()
    try:
        if task.multiscale:
            bspec, pspec = cfg.binary_spec(multiscale=True), cfg.positive_spec(multiscale=True)
            if len(s) <= cfg.warmup:
                raise InputError(f"series {s.series_id} has {len(s)} days, warmup needs more than {cfg.warmup}")
            b, p = dcmm_warmup_priors(bspec, pspec, s.y[: cfg.warmup], s.covariate_rows(0, cfg.warmup), ridge=cfg.ridge)
            state = DcmmState(bspec, b, pspec, p, cfg.re_discount)
        else:
            state = baseline_state(s, cfg, cfg.re_discount)
        covs = s.covariate_rows()
        for t in range(cfg.warmup, len(s)):
            y = s.y[t]
            state = step(state, None if np.isnan(y) else int(y), covs[t])[0]
    except NumericalError as exc:
        return s.series_id, "numerical", str(exc), None, time.perf_counter() - t0
    except CountcastError as exc:
        return s.series_id, "input", str(exc), None, time.perf_counter() - t0
    observed = s.y[~np.isnan(s.y)]
    entry = {
        "state": state,
        "last_date": s.dates[-1],
        "n_days": len(s),
        "history_mean": float(observed.mean()) if observed.size else 0.0,
    }
    return s.series_id, "ok", "", entry, time.perf_counter() - t0


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    extra = (cfg.factor_name,) if args.multiscale else ()
    series, failures = _read_data(args.data, cfg, extra)
    threads = resolve_threads(args.threads, cfg)
    results = parallel_map(_fit_one, [_FitTask(s, cfg, args.multiscale) for s in series.values()], threads)
    entries, seconds = {}, []
    for sid, status, msg, entry, sec in results:
        seconds.append(sec)
        if status == "ok":
            entries[sid] = entry
        else:
            failures[sid] = {"status": status, "messages": [msg]}
            _log_series(sid, msg)
    checkpoint = args.checkpoint or _path(out, "checkpoint.json")
    write_checkpoint(checkpoint, entries, {"version": __version__, "seed": cfg.seed, "config": cfg.to_dict()})
    _timing_report("fit", seconds, args.timing_file)
    return _finish(out, failures)


# ---------------------------------------------------------------------------
# forecast
# ---------------------------------------------------------------------------


def _future_covariates(sid, entry, future, k, needed):
    """Covariate rows for the ``k`` days after the checkpoint, or ``None`` rows when nothing is needed."""
    if not needed:
        return [None] * k
    if future is None or sid not in future:
        raise InputError(f"series {sid!r}: no future covariates supplied for {sorted(needed)}")
    s = future[sid]
    last = _dt.date.fromisoformat(entry["last_date"])
    want = [(last + _dt.timedelta(days=j)).isoformat() for j in range(1, k + 1)]
    # the file may hold history too; dates are contiguous, so locate the first forecast day
    lo = s.dates.index(want[0]) if want[0] in s.dates else -1
    if lo < 0 or s.dates[lo : lo + k] != want:
        raise InputError(f"series {sid!r}: future covariates must cover {want[0]}..{want[-1]}")
    missing = [n for n in needed if n not in s.covariates]
    if missing:
        raise InputError(f"series {sid!r}: future covariates lack {missing}")
    return [{n: float(s.covariates[n][lo + j]) for n in needed} for j in range(k)]


def summary_rows(sid, samples: np.ndarray):
    rows = []
    for j in range(samples.shape[1]):
        col = samples[:, j]
        qs = np.quantile(col, SUMMARY_QUANTILES, method="inverted_cdf")
        row = {"series_id": sid, "horizon": j + 1, "mean": float(col.mean())}
        row.update({c: int(q) for c, q in zip(SUMMARY_COLUMNS[3:], qs)})
        rows.append(row)
    return rows


def cmd_forecast(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    entries, meta = read_checkpoint(args.checkpoint)
    k = int(args.horizon or cfg.horizon)
    S = int(args.samples or cfg.samples)
    draws = FactorDraws.from_csv(args.factor_draws) if args.factor_draws else None
    if draws is not None:
        if draws.draws.shape[1] < k:
            raise InputError(f"factor draws cover {draws.draws.shape[1]} steps, horizon is {k}")
        S = draws.S
    future = None
    if args.covariates:
        future, bad = read_series_table(args.covariates)
        if bad:
            raise InputError(f"{args.covariates}: malformed rows for series {sorted(bad)}")
    samples, summaries, failures, origins = {}, [], {}, {}
    for sid, entry in entries.items():
        state = entry["state"]
        try:
            slots = set(state.binary_spec.predictor_slots) | set(state.positive_spec.predictor_slots)
            factor_slot = cfg.factor_name in slots
            needed = slots - {cfg.factor_name} if (factor_slot and draws is not None) else slots
            path = _future_covariates(sid, entry, future, k, needed)
            rng = RngStream(cfg.seed, sid, ("forecast",))
            if factor_slot and draws is not None:
                ps = multiscale_forecast(MultiscaleSeriesModel(state, cfg.factor_name), draws, k, path, rng)
            else:
                ps = forecast_path(state, k, S, path, rng)
        except NumericalError as exc:
            failures[sid] = {"status": "numerical", "messages": [str(exc)]}
            continue
        except CountcastError as exc:
            failures[sid] = {"status": "input", "messages": [str(exc)]}
            _log_series(sid, exc)
            continue
        samples[sid] = ps.samples
        summaries.extend(summary_rows(sid, ps.samples))
        origins[sid] = entry["last_date"]
    write_samples(_path(out, "samples.csv"), samples)
    write_table(_path(out, "summary.csv"), SUMMARY_COLUMNS, summaries)
    write_json(
        _path(out, "forecast_manifest.json"),
        {
            "model": "multiscale" if draws is not None else "baseline",
            "rho": {sid: entries[sid]["state"].re_discount for sid in samples},
            "origin_date": origins,
            "horizon": k,
            "samples": S,
            "seed": cfg.seed,
            "factor_draws": os.path.basename(args.factor_draws) if args.factor_draws else None,
        },
    )
    return _finish(out, failures)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _evaluate_dir(fdir, data, cfg):
    manifest = read_json(os.path.join(fdir, "forecast_manifest.json"))
    samples = read_samples(os.path.join(fdir, "samples.csv"))
    model = manifest.get("model", "baseline")
    tables = {"metrics": [], "coverage": [], "pit": [], "calibration": []}
    failures = {}
    for sid in sorted(samples):
        try:
            if sid not in data:
                raise InputError(f"series {sid!r} has forecasts but no realized data")
            s = data[sid]
            origin = manifest["origin_date"].get(sid)
            if origin is None:
                raise InputError(f"series {sid!r} missing from the forecast manifest")
            rho = float(manifest["rho"][sid])
            try:
                t0 = s.dates.index(origin)
            except ValueError:
                raise InputError(f"series {sid!r}: origin {origin} not in realized data") from None
            obs = s.y[: t0 + 1]
            obs = obs[~np.isnan(obs)]
            ybar = float(obs.mean()) if obs.size else 0.0
            a = samples[sid]
            if t0 + a.shape[1] >= len(s):
                raise InputError(f"series {sid!r}: realized data end before horizon {a.shape[1]}")
            records = {h: [] for h in range(1, a.shape[1] + 1)}
            pit, cp, co = [], [], []
            rng = RngStream(cfg.seed, sid, ("pit", model, rho_key(rho)))
            for h in range(1, a.shape[1] + 1):
                y = s.y[t0 + h]
                if np.isnan(y):
                    continue
                pred = DiscretePredictive.from_samples(a[:, h - 1])
                records[h].append(ForecastRecord(t0, h, pred, int(y), ybar, sid))
                if h == 1:
                    pit.append(randomized_pit(pred, int(y), rng))
                    cp.append(1.0 - pred.pmf(0))
                    co.append(int(y > 0))
        except CountcastError as exc:
            failures[sid] = {"status": "input", "messages": [f"{fdir}: {exc}"]}
            continue
        run = RunResult(sid, model, rho, records, np.array(pit), np.array(cp), np.array(co), [], None, 0.0)
        for name, rows in summarize(run, cfg).items():
            tables[name].extend(rows)
    return tables, failures


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    data, failures = _read_data(args.data, cfg)
    tables = {"metrics": [], "coverage": [], "pit": [], "calibration": []}
    for fdir in args.forecasts:
        t, f = _evaluate_dir(fdir, data, cfg)
        for name in tables:
            tables[name].extend(t[name])
        failures.update(f)
    key = lambda r: (r["series_id"], r["model"], r["rho"])  # noqa: E731
    for name in tables:
        tables[name].sort(key=key)
    _write_tables(out, tables)
    return _finish(out, failures)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    d = read_json(args.config) if args.config else {}
    if not isinstance(d, dict):
        raise ConfigError("generator configuration must be a JSON object")
    if args.seed is not None:
        d = dict(d, seed=int(args.seed))
    cfg = PanelConfig.from_dict(d)
    series, truth = generate_panel(cfg)
    write_series_table(_path(out, "series.csv"), series)
    write_truth(_path(out, "truth.json"), truth)
    return EXIT_OK


# ---------------------------------------------------------------------------
# backtest / multiscale
# ---------------------------------------------------------------------------


def _run_backtest(args, models):
    cfg = _load_config(args)
    if args.record_filtered:
        cfg.record_filtered = True
    out = _out_dir(args)
    series, failures = _read_data(args.data, cfg)
    if not series:
        raise InputError(f"{args.data}: no valid series")
    threads = resolve_threads(args.threads, cfg)
    source = None
    if "multiscale" in models:
        lengths = {len(s) for s in series.values()}
        starts = {s.dates[0] for s in series.values()}
        if len(lengths) != 1 or len(starts) != 1:
            raise InputError("the aggregate model needs series covering the same dates")
        source = FactorSource.fit(list(series.values()), cfg)
    tasks = [SeriesTask(s, cfg, models, source, cfg.record_filtered) for s in series.values()]
    outcomes = parallel_map(run_series_task, tasks, threads)
    ok = []
    for o in outcomes:
        if o.status == "ok":
            ok.append(o)
        else:
            failures[o.series_id] = {"status": o.status, "messages": [o.message]}
            _log_series(o.series_id, o.message)
    tables = _merge_tables(ok)
    sel = _write_tables(out, tables)
    if "multiscale" in models:
        write_table(_path(out, "comparison.csv"), COMPARISON_COLUMNS, comparison(sel))
        first = next(iter(series.values()))
        factor_rows = [{"date": d, "factor_mean": source.mean(t)} for t, d in enumerate(first.dates)]
        write_table(_path(out, "aggregate_factor.csv"), ("date", "factor_mean"), factor_rows)
        source.draws(len(first) - 1).to_csv(_path(out, "factor_draws.csv"))
    if cfg.record_filtered:
        _write_filtered(_path(out, "filtered_moments.jsonl"), ok)
    write_json(
        _path(out, "run_manifest.json"),
        {
            "version": __version__,
            "models": list(models),
            "seed": cfg.seed,
            "series_ok": sorted(o.series_id for o in ok),
            "series_failed": sorted(failures),
            "config": cfg.to_dict(),
        },
    )
    _timing_report(args.command, [o.seconds for o in outcomes], args.timing_file)
    return _finish(out, failures)


def cmd_backtest(args) -> int:
    return _run_backtest(args, ("baseline",))


def cmd_multiscale(args) -> int:
    return _run_backtest(args, ("baseline", "multiscale"))


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="countcast", description="Dynamic count mixture forecasting batch driver.")
    p.add_argument("--version", action="version", version=f"countcast {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        if data:
            sp.add_argument("--data", required=True, help="long-format series CSV (series_id, date, count, covariates...)")
        sp.add_argument("--config", help="run configuration JSON")
        sp.add_argument("--out-dir", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--threads", type=int, help="worker processes (overrides COUNTCAST_THREADS and the config)")
        sp.add_argument("--timing-file", help="write per-series timing percentiles here")

    sp = sub.add_parser("fit", help="filter each series and write a state checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", help="checkpoint path (default OUT_DIR/checkpoint.json)")
    sp.add_argument("--multiscale", action="store_true", help="include a factor-loading block fed by the data's factor column")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("forecast", help="simulate forecast paths from a checkpoint")
    common(sp, data=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--covariates", help="series CSV with covariates for the forecast days")
    sp.add_argument("--factor-draws", help="factor draws CSV (s, horizon, value) for multi-scale forecasting")
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--samples", type=int)
    sp.set_defaults(func=cmd_forecast)

    sp = sub.add_parser("evaluate", help="score forecast sample files against realized data")
    common(sp)
    sp.add_argument("--forecasts", nargs="+", required=True, help="directories written by 'forecast'")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("simulate", help="generate a synthetic panel")
    sp.add_argument("--config", help="generator configuration JSON")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_simulate)

    for name, fn, text in (
        ("backtest", cmd_backtest, "rolling-origin evaluation of the baseline model"),
        ("multiscale", cmd_multiscale, "aggregate factor model plus baseline and multi-scale rolling evaluation"),
    ):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--record-filtered", action="store_true", help="write filtered_moments.jsonl")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        _log(f"numerical failure: {exc}")
        out = getattr(args, "out_dir", None)
        if out:
            os.makedirs(out, exist_ok=True)
            write_json(_path(out, "failures.json"), {"": {"status": "numerical", "messages": [str(exc)]}})
        return EXIT_NUMERICAL
    except (InputError, ConfigError, OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
