"""CSV and JSON readers and writers for series, checkpoints, forecasts and metrics.

Floats are written with ``repr`` so every file re-reads bit-identically.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dcmm.core import DcmmState
from .dglm.model import ModelSpec, StateMoments
from .errors import InputError

MISSING = "missing"
SERIES_COLUMNS = ("series_id", "date", "count")


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))


@dataclass
class SeriesData:
    """One series: ISO dates, counts (NaN where missing) and covariate columns."""

    series_id: str
    dates: list
    y: np.ndarray
    covariates: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.dates)

    def covariate_rows(self, lo: int = 0, hi: int | None = None) -> list:
        hi = len(self) if hi is None else hi
        names = list(self.covariates)
        if not names:
            return [None] * (hi - lo)
        return [{n: float(self.covariates[n][t]) for n in names} for t in range(lo, hi)]


def _parse_date(s):
    return _dt.date.fromisoformat(s.strip())


def read_series_table(path, required_covariates=()):
    """Read a long-format series table.

    Returns ``(series, failures)``: ``series`` maps id to :class:`SeriesData`
    for every valid series; ``failures`` maps id to a list of row-level
    messages for series that were rejected. Problems with the file itself
    (missing columns) raise :class:`InputError`.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise InputError(f"{path}: empty file")
        missing = [c for c in SERIES_COLUMNS if c not in header]
        if missing:
            raise InputError(f"{path}: missing required columns {missing}")
        cov_names = [c for c in header if c not in SERIES_COLUMNS]
        absent = [c for c in required_covariates if c not in cov_names]
        if absent:
            raise InputError(f"{path}: missing covariate columns {absent}")
        rows: dict = {}
        failures: dict = {}
        for line, row in enumerate(reader, start=2):
            sid = (row.get("series_id") or "").strip()
            if not sid:
                failures.setdefault("", []).append(f"line {line}: empty series_id")
                continue
            try:
                date = _parse_date(row["date"] or "")
            except ValueError:
                failures.setdefault(sid, []).append(f"line {line}: bad date {row['date']!r}")
                continue
            raw = (row["count"] or "").strip()
            if raw == MISSING:
                y = math.nan
            else:
                try:
                    y = int(raw)
                    if y < 0:
                        raise ValueError
                except ValueError:
                    failures.setdefault(sid, []).append(f"line {line}: count must be a non-negative integer or '{MISSING}', got {raw!r}")
                    continue
            cov = {}
            bad = False
            for c in cov_names:
                try:
                    cov[c] = float(row[c])
                    if not math.isfinite(cov[c]):
                        raise ValueError
                except (TypeError, ValueError):
                    failures.setdefault(sid, []).append(f"line {line}: covariate {c} is not a finite number: {row[c]!r}")
                    bad = True
            if bad:
                continue
            rows.setdefault(sid, []).append((date, y, cov, line))
    series = {}
    for sid, items in rows.items():
        if sid in failures:
            continue
        items.sort(key=lambda r: r[0])
        errs = []
        for a, b in zip(items, items[1:]):
            gap = (b[0] - a[0]).days
            if gap == 0:
                errs.append(f"line {b[3]}: duplicate date {b[0].isoformat()}")
            elif gap > 1:
                errs.append(f"line {b[3]}: gap of {gap - 1} day(s) before {b[0].isoformat()}; mark missing days explicitly")
        if errs:
            failures[sid] = errs
            continue
        series[sid] = SeriesData(
            sid,
            [r[0].isoformat() for r in items],
            np.array([r[1] for r in items], dtype=float),
            {c: np.array([r[2][c] for r in items]) for c in cov_names},
        )
    return dict(sorted(series.items())), dict(sorted(failures.items()))


def write_series_table(path, series):
    """Write :class:`SeriesData` objects (iterable or dict) in long format."""
    items = list(series.values()) if isinstance(series, dict) else list(series)
    names = sorted({n for s in items for n in s.covariates})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*SERIES_COLUMNS, *names])
        for s in sorted(items, key=lambda s: s.series_id):
            for t, d in enumerate(s.dates):
                y = s.y[t]
                w.writerow([s.series_id, d, MISSING if math.isnan(y) else int(y), *(fmt(s.covariates[n][t]) for n in names)])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _moments_to_json(m: StateMoments) -> dict:
    return {"mean": m.mean.tolist(), "cov": m.cov.tolist()}


def _moments_from_json(d) -> StateMoments:
    return StateMoments(np.array(d["mean"], dtype=float), np.array(d["cov"], dtype=float))


def state_to_json(state: DcmmState) -> dict:
    return {
        "re_discount": state.re_discount,
        "binary_spec": state.binary_spec.to_dict(),
        "positive_spec": state.positive_spec.to_dict(),
        "binary": _moments_to_json(state.binary),
        "positive": _moments_to_json(state.positive),
    }


def state_from_json(d) -> DcmmState:
    return DcmmState(
        ModelSpec.from_dict(d["binary_spec"]),
        _moments_from_json(d["binary"]),
        ModelSpec.from_dict(d["positive_spec"]),
        _moments_from_json(d["positive"]),
        float(d["re_discount"]),
    )


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def write_checkpoint(path, entries: dict, meta: dict):
    """``entries`` maps series id to a dict with a ``state`` (:class:`DcmmState`) plus plain metadata."""
    out = {"meta": meta, "series": {}}
    for sid in sorted(entries):
        e = dict(entries[sid])
        e["state"] = state_to_json(e["state"])
        out["series"][sid] = e
    write_json(path, out)


def read_checkpoint(path):
    d = read_json(path)
    try:
        series = {}
        for sid, e in d["series"].items():
            e = dict(e)
            e["state"] = state_from_json(e["state"])
            series[sid] = e
        return series, d.get("meta", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed checkpoint ({exc})") from None


# ---------------------------------------------------------------------------
# forecasts and tables
# ---------------------------------------------------------------------------

SAMPLE_COLUMNS = ("series_id", "sample", "horizon", "value")


def write_samples(path, samples: dict):
    """``samples`` maps series id to an ``S x k`` integer array."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SAMPLE_COLUMNS)
        for sid in sorted(samples):
            a = np.asarray(samples[sid])
            for s in range(a.shape[0]):
                for j in range(a.shape[1]):
                    w.writerow([sid, s, j + 1, int(a[s, j])])


def read_samples(path) -> dict:
    acc: dict = {}
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if r.fieldnames is None or list(r.fieldnames) != list(SAMPLE_COLUMNS):
            raise InputError(f"{path}: expected columns {list(SAMPLE_COLUMNS)}")
        for line, row in enumerate(r, start=2):
            try:
                s, h, v = int(row["sample"]), int(row["horizon"]), int(row["value"])
            except (TypeError, ValueError):
                raise InputError(f"{path}:{line}: malformed sample row") from None
            if v < 0 or h < 1 or s < 0:
                raise InputError(f"{path}:{line}: out-of-range sample row")
            acc.setdefault(row["series_id"], []).append((s, h, v))
    out = {}
    for sid, rows in acc.items():
        a = np.array(rows)
        S, k = a[:, 0].max() + 1, a[:, 1].max()
        if len(rows) != S * k:
            raise InputError(f"{path}: series {sid} has {len(rows)} rows, expected {S}x{k}")
        m = np.full((S, k), -1, dtype=np.int64)
        m[a[:, 0], a[:, 1] - 1] = a[:, 2]
        if (m < 0).any():
            raise InputError(f"{path}: series {sid} has duplicate (sample, horizon) rows")
        out[sid] = m
    return dict(sorted(out.items()))


def write_table(path, columns, rows):
    """Write dict rows with a fixed column order; floats via ``repr``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow(["" if row.get(c) is None else (fmt(row[c]) if isinstance(row[c], (float, int, np.floating, np.integer)) and not isinstance(row[c], bool) else str(row[c])) for c in columns])


def read_table(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
