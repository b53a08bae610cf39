import datetime as dt

import numpy as np
import pytest

from stormwarn.io import (
    InputError, config_digest, format_time, parse_time, read_digest, read_features_csv, read_labels_csv,
    read_matrix_csv, read_rain_grid, read_snapshots, read_strikes_csv, write_features_csv,
    write_labels_csv, write_matrix_csv, write_rain_grid, write_snapshots, write_strikes_csv,
)
from stormwarn.labeling import LightningRecord, RainGrid
from stormwarn.verify import LabelSeries


def test_digest_ignores_key_order():
    a = {"score": "wtss", "window": 3, "grid": {"g0": 0.8, "g1": 0.99}}
    b = {"grid": {"g1": 0.99, "g0": 0.8}, "window": 3, "score": "wtss"}
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest({**a, "window": 4})


def test_time_round_trip():
    t = dt.datetime(2019, 10, 3, 15, 7, 1, 250000)
    assert parse_time(format_time(t)) == t
    assert format_time(np.datetime64("2019-10-03T15:00:00")) == "2019-10-03T15:00:00Z"
    assert parse_time("2019-10-03T17:00:00+02:00") == dt.datetime(2019, 10, 3, 15)


def test_labels_round_trip(tmp_path):
    s = LabelSeries.hourly([0, 1, 0, 1], mask=[True, True, False, True])
    write_labels_csv(tmp_path / "l.csv", s, [False, False, False, True], digest="abc")
    back, rain = read_labels_csv(tmp_path / "l.csv")
    assert np.array_equal(back.values, s.values) and np.array_equal(back.mask, s.mask)
    assert np.array_equal(back.timestamps, s.timestamps)
    assert list(rain) == [False, False, False, True]
    assert read_digest(tmp_path / "l.csv") == "abc"


def test_malformed_label_row_names_file_and_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("timestamp,value,mask\n2019-01-01T00:00:00Z,0,1\n2019-01-01T01:00:00Z,7,1\n")
    with pytest.raises(InputError, match=r"bad\.csv:3"):
        read_labels_csv(p)
    p.write_text("timestamp,value,mask\n2019-01-01T00:00:00Z,0\n")
    with pytest.raises(InputError, match=r"bad\.csv:2"):
        read_labels_csv(p)


def test_matrix_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    probs = rng.random((3, 5))
    ids = [f"s{i}" for i in range(5)]
    write_matrix_csv(tmp_path / "m.csv", ids, probs)
    got_ids, got = read_matrix_csv(tmp_path / "m.csv")
    assert got_ids == ids and np.array_equal(got, probs)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "sample_id,epoch_1,epoch_2,epoch_3"


def test_matrix_rejects_out_of_range(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("sample_id,epoch_1\na,0.5\nb,1.5\n")
    with pytest.raises(InputError, match="m.csv:3"):
        read_matrix_csv(p)


@pytest.mark.parametrize("fmt", ["csv", "f32"])
def test_rain_grid_round_trip(tmp_path, fmt):
    v = np.zeros((4, 5))
    v[1, 2] = 60.5
    v[3, 4] = np.nan
    g = RainGrid(v, 44.0, 8.5, 0.01, 0.02, dt.datetime(2019, 10, 3, 15))
    back = read_rain_grid(write_rain_grid(tmp_path, "h", g, fmt))
    assert np.array_equal(back.values, v, equal_nan=True)
    assert back.timestamp == g.timestamp and (back.lat0, back.dlon) == (44.0, 0.02)


def test_rain_grid_cell_outside(tmp_path):
    g = RainGrid(np.zeros((2, 2)), 44.0, 8.5, 0.01, 0.02, dt.datetime(2019, 10, 3, 15))
    head = write_rain_grid(tmp_path, "h", g, "csv")
    (tmp_path / "h.csv").write_text("row,col,value\n0,0,1.0\n5,0,2.0\n")
    with pytest.raises(InputError, match="h.csv:3"):
        read_rain_grid(head)


def test_strikes_sorted_on_read(tmp_path):
    t = dt.datetime(2019, 10, 3, 15)
    s = [LightningRecord(t + dt.timedelta(minutes=m), 44.0, 8.0) for m in (5, 1, 3)]
    write_strikes_csv(tmp_path / "s.csv", s)
    back = read_strikes_csv(tmp_path / "s.csv")
    assert [r.time.minute for r in back] == [1, 3, 5]


def test_features_round_trip(tmp_path):
    stamps = np.datetime64("2019-01-01T00:00:00") + np.arange(3) * np.timedelta64(1, "h")
    x = np.random.default_rng(1).normal(size=(3, 2))
    write_features_csv(tmp_path / "f.csv", stamps, x)
    s, y = read_features_csv(tmp_path / "f.csv")
    assert np.array_equal(s, stamps) and np.array_equal(x, y)


def test_snapshots_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    snaps = [{"w1": rng.normal(size=(2, 3)), "b2": rng.normal(size=1)} for _ in range(3)]
    write_snapshots(tmp_path / "run", snaps, seed=5, digest="d")
    back = read_snapshots(tmp_path / "run.json")
    assert all(np.array_equal(a[k], b[k]) for a, b in zip(snaps, back) for k in a)
