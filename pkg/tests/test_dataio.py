"""Tests for dataset parsing, grouping configuration and serialization."""
import datetime as dt

import pytest

from csgemos.dataio import (
    Dataset,
    ForecastCase,
    parse_dataset,
    parse_grouping,
    write_dataset,
    write_tuning_table,
)
from csgemos.emos import WindowScore
from csgemos.errors import DataError, GroupingError

COMPLETE = """date,station,obs,m1,m2
2021-01-01,A,0.0,1.5,2.5
2021-01-01,B,1.2,0.0,3.25
2021-01-01,C,4.0,2.0,2.0
2021-01-02,A,0.5,1.0,1.0
2021-01-02,B,0.0,0.5,0.25
2021-01-02,C,2.5,3.0,1.0
"""


class TestParseDataset:
    def test_complete(self):
        ds, log = parse_dataset(COMPLETE)
        assert len(ds.cases) == 6
        assert log == []
        assert ds.member_names == ("m1", "m2")
        assert ds.dates == (dt.date(2021, 1, 1), dt.date(2021, 1, 2))
        assert ds.stations == ("A", "B", "C")

    def test_date_drop_policy(self):
        text = COMPLETE.replace("2021-01-02,B,0.0,0.5,0.25", "2021-01-02,B,0.0,NA,0.25")
        ds, log = parse_dataset(text, policy="date-drop")
        assert len(ds.cases) == 3  # the whole second date goes
        assert len(log) == 3
        assert all(e.date == "2021-01-02" for e in log)
        assert any("missing member m1" in e.reason for e in log)
        assert ds.dates == (dt.date(2021, 1, 1),)

    def test_row_drop_policy(self):
        text = COMPLETE.replace("2021-01-02,B,0.0,0.5,0.25", "2021-01-02,B,0.0,NA,0.25")
        ds, log = parse_dataset(text, policy="row-drop")
        assert len(ds.cases) == 5
        assert len(log) == 1
        assert log[0].station == "B"

    def test_row_drop_never_drops_more(self):
        text = COMPLETE.replace("2021-01-01,B,1.2,0.0,3.25", "2021-01-01,B,,0.0,3.25")
        by_date, _ = parse_dataset(text, policy="date-drop")
        by_row, _ = parse_dataset(text, policy="row-drop")
        assert len(by_row.cases) >= len(by_date.cases)

    def test_accounting_exact(self):
        text = COMPLETE.replace("2021-01-02,B,0.0,0.5,0.25", "2021-01-02,B,NA,0.5,0.25")
        for policy in ("date-drop", "row-drop"):
            ds, log = parse_dataset(text, policy=policy)
            assert len(ds.cases) + len(log) == 6

    def test_missing_obs_allowed_for_prediction(self):
        text = COMPLETE.replace("2021-01-02,B,0.0,0.5,0.25", "2021-01-02,B,NA,0.5,0.25")
        ds, log = parse_dataset(text, require_obs=False)
        assert len(ds.cases) == 6
        assert log == []
        missing = [c for c in ds.cases if c.observation is None]
        assert len(missing) == 1

    def test_negative_value_hard_error(self):
        text = COMPLETE.replace("2021-01-02,A,0.5,1.0,1.0", "2021-01-02,A,-0.5,1.0,1.0")
        with pytest.raises(DataError, match="row 5"):
            parse_dataset(text)

    def test_bad_date(self):
        text = COMPLETE.replace("2021-01-02,A", "01/02/2021,A", 1)
        with pytest.raises(DataError, match="unparseable date"):
            parse_dataset(text)

    def test_malformed_header(self):
        with pytest.raises(DataError, match="malformed header"):
            parse_dataset("when,where,obs,m1\n2021-01-01,A,1.0,2.0\n")

    def test_inconsistent_member_count(self):
        text = COMPLETE.replace("2021-01-02,C,2.5,3.0,1.0", "2021-01-02,C,2.5,3.0")
        with pytest.raises(DataError, match="inconsistent member count"):
            parse_dataset(text)

    def test_duplicate_case(self):
        text = COMPLETE + "2021-01-02,C,1.0,1.0,1.0\n"
        with pytest.raises(DataError, match="duplicate"):
            parse_dataset(text)

    def test_non_finite_rejected(self):
        text = COMPLETE.replace("2021-01-02,A,0.5,1.0,1.0", "2021-01-02,A,inf,1.0,1.0")
        with pytest.raises(DataError, match="non-finite"):
            parse_dataset(text)


class TestRoundTrip:
    def test_write_parse_identity(self):
        ds, _ = parse_dataset(COMPLETE)
        text = write_dataset(ds)
        ds2, log = parse_dataset(text)
        assert log == []
        assert ds2 == ds

    def test_values_decimal_faithful(self):
        awkward = "date,station,obs,m1\n2021-01-01,A,0.1,2.675\n"
        ds, _ = parse_dataset(awkward)
        again, _ = parse_dataset(write_dataset(ds))
        assert again.cases[0].observation == 0.1
        assert again.cases[0].members == (2.675,)

    def test_missing_obs_round_trip(self):
        ds = Dataset(
            ("m1",),
            (ForecastCase(dt.date(2021, 1, 1), "A", (1.0,), None),),
        )
        again, _ = parse_dataset(write_dataset(ds), require_obs=False)
        assert again == ds


class TestParseGrouping:
    def test_singletons(self):
        text = '{"g1": ["m1"], "g2": ["m2"]}'
        g = parse_grouping(text, ["m1", "m2"])
        assert g.n_groups == 2
        assert g.group_sizes == (1, 1)

    def test_control_perturbed(self):
        members = ["ctrl"] + [f"p{i}" for i in range(1, 11)]
        text = (
            '{"control": ["ctrl"], "perturbed": ["p1","p2","p3","p4","p5",'
            '"p6","p7","p8","p9","p10"]}'
        )
        g = parse_grouping(text, members)
        assert g.n_groups == 2
        assert g.group_sizes == (1, 10)

    def test_overlap_rejected(self):
        with pytest.raises(GroupingError, match="more than one group"):
            parse_grouping('{"a": ["m1"], "b": ["m1", "m2"]}', ["m1", "m2"])

    def test_omission_rejected(self):
        with pytest.raises(GroupingError, match="not assigned"):
            parse_grouping('{"a": ["m1"]}', ["m1", "m2"])

    def test_unknown_member(self):
        with pytest.raises(GroupingError, match="unknown member"):
            parse_grouping('{"a": ["m1", "mX"]}', ["m1", "m2"])

    def test_invalid_json(self):
        with pytest.raises(DataError):
            parse_grouping("{not json", ["m1"])


class TestTuningTable:
    def test_format(self):
        rows = [WindowScore(20, 1.25, 1.5), WindowScore(25, 1.0, 1.25)]
        text = write_tuning_table(rows)
        lines = text.strip().splitlines()
        assert lines[0] == "n,mean_crps,mae"
        assert lines[1] == "20,1.25,1.5"
        assert len(lines) == 3
