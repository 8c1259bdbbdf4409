import json
import math

import numpy as np
import pytest

from countcast.config import RunConfig
from countcast.dcmm import DcmmState
from countcast.dglm import Block, ModelSpec, StateMoments
from countcast.errors import ConfigError, InputError
from countcast.io import (
    SeriesData,
    read_checkpoint,
    read_samples,
    read_series_table,
    read_table,
    write_checkpoint,
    write_samples,
    write_series_table,
    write_table,
)
from countcast.synthetic import PanelConfig, generate_panel


def _write(path, text):
    path.write_text(text)
    return path


class TestSeriesTable:
    def test_round_trip(self, tmp_path):
        series, _ = generate_panel(PanelConfig(n_series=3, days=30, seed=4))
        series[1].y[5] = np.nan
        write_series_table(tmp_path / "s.csv", series)
        back, failures = read_series_table(tmp_path / "s.csv", ["log_price"])
        assert failures == {}
        assert list(back) == [s.series_id for s in series]
        for s in series:
            b = back[s.series_id]
            assert b.dates == s.dates
            np.testing.assert_array_equal(b.y, s.y)
            np.testing.assert_array_equal(b.covariates["log_price"], s.covariates["log_price"])
        write_series_table(tmp_path / "t.csv", back)
        assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "t.csv").read_bytes()

    def test_missing_marker(self, tmp_path):
        p = _write(tmp_path / "s.csv", "series_id,date,count\nA,2020-01-01,1\nA,2020-01-02,missing\nA,2020-01-03,0\n")
        series, _ = read_series_table(p)
        assert math.isnan(series["A"].y[1])

    def test_row_errors_isolate_series(self, tmp_path):
        p = _write(
            tmp_path / "s.csv",
            "series_id,date,count,price\n"
            "A,2020-01-01,1,0.1\nA,2020-01-02,-3,0.1\n"
            "B,2020-01-01,2,0.2\nB,2020-01-02,0,0.2\n"
            "C,2020-01-01,1,x\n"
            "D,2020-01-01,1,0.1\nD,2020-01-03,1,0.1\n"
            "E,2020-01-01,1,0.1\nE,2020-01-01,2,0.1\n",
        )
        series, failures = read_series_table(p)
        assert list(series) == ["B"]
        assert set(failures) == {"A", "C", "D", "E"}
        assert "line 3" in failures["A"][0]
        assert "gap" in failures["D"][0]
        assert "duplicate" in failures["E"][0]

    def test_schema_errors(self, tmp_path):
        with pytest.raises(InputError):
            read_series_table(_write(tmp_path / "a.csv", "id,date,count\n"))
        with pytest.raises(InputError):
            read_series_table(_write(tmp_path / "b.csv", "series_id,date,count\n"), ["price"])
        with pytest.raises(InputError):
            read_series_table(_write(tmp_path / "c.csv", ""))

    def test_unsorted_rows_are_ordered(self, tmp_path):
        p = _write(tmp_path / "s.csv", "series_id,date,count\nA,2020-01-02,5\nA,2020-01-01,1\n")
        series, _ = read_series_table(p)
        np.testing.assert_array_equal(series["A"].y, [1, 5])


class TestCheckpoint:
    def test_bit_identical_round_trip(self, tmp_path):
        spec = ModelSpec((Block.level(0.99), Block.fourier(7, discount=0.999)))
        rng = np.random.default_rng(0)
        A = rng.normal(size=(7, 7))
        state = DcmmState(spec, StateMoments(rng.normal(size=7), A @ A.T / 3), spec, StateMoments(rng.normal(size=7), A @ A.T / 7), 0.6)
        write_checkpoint(tmp_path / "c.json", {"X": {"state": state, "last_date": "2020-02-01"}}, {"seed": 1})
        entries, meta = read_checkpoint(tmp_path / "c.json")
        back = entries["X"]["state"]
        np.testing.assert_array_equal(back.positive.cov, state.positive.cov)
        np.testing.assert_array_equal(back.binary.mean, state.binary.mean)
        assert back.positive_spec == spec and back.re_discount == 0.6
        assert meta == {"seed": 1}
        write_checkpoint(tmp_path / "d.json", entries, meta)
        assert (tmp_path / "c.json").read_bytes() == (tmp_path / "d.json").read_bytes()

    def test_malformed(self, tmp_path):
        with pytest.raises(InputError):
            read_checkpoint(_write(tmp_path / "c.json", "{not json"))
        with pytest.raises(InputError):
            read_checkpoint(_write(tmp_path / "d.json", json.dumps({"series": {"A": {"state": {}}}})))


class TestSamplesAndTables:
    def test_samples_round_trip(self, tmp_path):
        s = {"B": np.arange(6).reshape(3, 2), "A": np.zeros((1, 4), dtype=int)}
        write_samples(tmp_path / "s.csv", s)
        back = read_samples(tmp_path / "s.csv")
        assert list(back) == ["A", "B"]
        np.testing.assert_array_equal(back["B"], s["B"])

    def test_samples_rejects_incomplete(self, tmp_path):
        p = _write(tmp_path / "s.csv", "series_id,sample,horizon,value\nA,0,1,1\nA,1,2,3\n")
        with pytest.raises(InputError):
            read_samples(p)
        p = _write(tmp_path / "t.csv", "series_id,sample,horizon,value\nA,0,1,-1\n")
        with pytest.raises(InputError):
            read_samples(p)

    def test_table_floats_exact(self, tmp_path):
        rows = [{"a": 0.1 + 0.2, "b": None, "c": "x", "d": 3}]
        write_table(tmp_path / "t.csv", ("a", "b", "c", "d"), rows)
        back = read_table(tmp_path / "t.csv")
        assert float(back[0]["a"]) == 0.1 + 0.2
        assert back[0]["b"] == "" and back[0]["c"] == "x" and back[0]["d"] == "3"


class TestRunConfig:
    def test_shipped_defaults(self):
        cfg = RunConfig()
        assert cfg.binary_discount == 0.999 and cfg.positive_discount == 0.99
        assert cfg.rho_grid == [0.4, 0.6, 0.8, 1.0]
        assert cfg.samples == 5000 and cfg.horizon == 14

    def test_round_trip(self, tmp_path):
        cfg = RunConfig(predictors=["log_price"], horizon=7, rho_grid=[0.5, 1.0])
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg.to_dict()))
        back = RunConfig.load(p)
        assert back == cfg
        assert back.binary_spec() == cfg.binary_spec()

    @pytest.mark.parametrize(
        "bad",
        [{"horizon": 0}, {"samples": 0}, {"binary_discount": 1.2}, {"rho_grid": [0.0]}, {"threads": 0}, {"nonsense": 1}],
    )
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad)

    def test_multiscale_spec(self):
        cfg = RunConfig()
        spec = cfg.positive_spec(multiscale=True)
        assert spec.blocks[-1].names == (cfg.factor_name,)
        assert all(b.kind != "fourier" for b in spec.blocks)
        keep = RunConfig(factor_replaces_seasonal=False).positive_spec(multiscale=True)
        assert any(b.kind == "fourier" for b in keep.blocks)


class TestGenerator:
    def test_panel_shape(self):
        series, truth = generate_panel(PanelConfig(n_series=17, days=60))
        assert len(series) == 17 and len(truth["factor"]) == 60
        assert all(len(s) == 60 for s in series)
        assert all(np.all(s.y >= 0) for s in series)

    def test_zero_fraction_monotone_in_shift(self):
        fracs = []
        for shift in (0.0, 1.0, 2.0, 3.0):
            series, _ = generate_panel(PanelConfig(n_series=8, days=300, zero_shift=shift, seed=2))
            fracs.append(np.mean([np.mean(s.y == 0) for s in series]))
        assert np.all(np.diff(fracs) > 0)

    def test_single_constant_rate_series(self):
        cfg = PanelConfig(n_series=1, days=2000, shared_factor=False, level_drift=0.0, with_price=False, log_rate_range=(1.0, 1.0), logit_range=(0.0, 0.0))
        series, truth = generate_panel(cfg)
        y = series[0].y
        assert abs(np.mean(y == 0) - 0.5) < 0.04
        assert (y[y > 0] - 1).mean() == pytest.approx(math.e, rel=0.06)
        assert truth["series"]["S000"]["base_log_rate"] == 1.0

    def test_rejects_unknown_keys(self):
        with pytest.raises(ConfigError):
            PanelConfig.from_dict({"bogus": 1})

    def test_series_data_rows(self):
        s = SeriesData("A", ["2020-01-01", "2020-01-02"], np.array([1.0, 2.0]), {"p": np.array([0.5, 0.25])})
        assert s.covariate_rows(1) == [{"p": 0.25}]
        assert SeriesData("B", ["2020-01-01"], np.array([1.0])).covariate_rows() == [None]
