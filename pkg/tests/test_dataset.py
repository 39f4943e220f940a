"""Tests for CSV ingestion, calendar alignment and window enumeration.

Tags: [DERIVED] hand-computed oracle, [TRIVIAL] forced by definition.
"""

import datetime as dt

import numpy as np
import pytest

from crosscast.dataset import (cumulative_to_incidence, diff_cumulative, load_incidence_csv,
                               load_static_features, make_windows, train_val_split,
                               write_long_csv)
from crosscast.errors import ConfigError, DataError, DataFormatError

LONG = """region,date,value
alpha,2020-03-01,1
alpha,2020-03-02,2
alpha,2020-03-03,3
beta,2020-03-01,10
beta,2020-03-02,20
beta,2020-03-03,30
"""

WIDE = """state,3/1/20,3/2/20,3/3/20
Alabama,1,3,6
Alaska,0,2,2
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_long_csv(tmp_path):
    # [TRIVIAL] direct parse: 2 regions x 3 days
    ds = load_incidence_csv(write(tmp_path, "d.csv", LONG))
    assert ds.n_regions == 2 and ds.n_days == 3
    assert ds.regions == ["alpha", "beta"]
    assert ds.start_date == dt.date(2020, 3, 1)
    assert np.array_equal(ds.values, [[1, 2, 3], [10, 20, 30]])


def test_load_wide_csv_stores_raw(tmp_path):
    # [TRIVIAL] wide cumulative rows pass through; conversion is deferred
    ds = load_incidence_csv(write(tmp_path, "w.csv", WIDE))
    assert np.array_equal(ds.values, [[1, 3, 6], [0, 2, 2]])
    inc = cumulative_to_incidence(ds)
    assert np.array_equal(inc.values, [[1, 2, 3], [0, 2, 0]])


def test_load_empty_file(tmp_path):
    with pytest.raises(DataFormatError):
        load_incidence_csv(write(tmp_path, "e.csv", ""))


def test_load_duplicate_entry(tmp_path):
    bad = LONG + "alpha,2020-03-01,9\n"
    with pytest.raises(DataError):
        load_incidence_csv(write(tmp_path, "dup.csv", bad))


def test_load_unparseable_reports_line(tmp_path):
    bad = "region,date,value\nalpha,2020-03-01,xyz\n"
    with pytest.raises(DataFormatError, match="line 2"):
        load_incidence_csv(write(tmp_path, "bad.csv", bad))


def test_zero_fill_missing_days(tmp_path):
    text = "region,date,value\na,2020-03-01,1\na,2020-03-03,3\nb,2020-03-02,5\n"
    ds = load_incidence_csv(write(tmp_path, "gap.csv", text))
    assert np.array_equal(ds.values, [[1, 0, 3], [0, 5, 0]])
    assert ds.report.zero_filled == 3


def test_diff_cumulative_oracles():
    # [DERIVED] hand differencing
    out, n = diff_cumulative([0, 2, 5, 5])
    assert np.array_equal(out, [0, 2, 3, 0]) and n == 0
    # [DERIVED] clamp rule: one negative dip clamped and counted
    out, n = diff_cumulative([3, 2])
    assert np.array_equal(out, [3, 0]) and n == 1
    # [TRIVIAL] constant cumulative series
    out, n = diff_cumulative([4, 4, 4])
    assert np.array_equal(out, [4, 0, 0]) and n == 0


def test_diff_cumulative_reconstruction():
    # [TRIVIAL] absent clamps, cumulative sum reconstructs the input exactly
    c = np.cumsum(np.random.default_rng(0).random(30))
    out, n = diff_cumulative(c)
    assert n == 0
    assert np.abs(np.cumsum(out) - c).max() <= 1e-12


def make_dataset(n, days):
    import crosscast.dataset as d
    values = np.arange(n * days, dtype=float).reshape(n, days)
    return d.Dataset([f"r{i}" for i in range(n)], dt.date(2020, 3, 1), values)


def test_make_windows_oracles():
    # [DERIVED] N=2, T=20, l=7, H=7, k=1 -> t in [7, 13], 14 pairs
    w = make_windows(make_dataset(2, 20), 7, 7, 1, 20)
    assert len(w.pairs) == 14
    assert {t for _, t in w.pairs} == set(range(7, 14))
    # [TRIVIAL] empty interval
    assert make_windows(make_dataset(1, 10), 7, 7, 1, 10).pairs == []
    # [DERIVED] k=4: T - kH = 7, a single end day per region
    w = make_windows(make_dataset(3, 35), 7, 7, 4, 35)
    assert len(w.pairs) == 3 and all(t == 7 for _, t in w.pairs)


def test_make_windows_count_formula():
    # [TRIVIAL] pair count = N * max(0, T - kH - l + 1)
    ds = make_dataset(4, 60)
    for l, k, T in [(7, 1, 60), (14, 2, 50), (7, 4, 40)]:
        got = len(make_windows(ds, l, 7, k, T).pairs)
        assert got == 4 * max(0, T - 7 * k - l + 1)


def test_make_windows_invalid_params():
    with pytest.raises(ConfigError):
        make_windows(make_dataset(2, 20), 1, 7, 1, 20)
    with pytest.raises(ConfigError):
        make_windows(make_dataset(2, 20), 7, 7, 1, 25)


def test_train_val_split():
    # [PAPER] the last 7 days are kept for validation
    train_end, val_days = train_val_split(make_dataset(2, 100))
    assert train_end == 93 and val_days == list(range(94, 101))
    # [TRIVIAL] minimal legal split and the degenerate error
    train_val_split(make_dataset(1, 15), l=7)
    with pytest.raises(ConfigError):
        train_val_split(make_dataset(1, 7), l=7)


def test_long_csv_round_trip(tmp_path):
    # [TRIVIAL] load -> serialize -> load is stable; second write is byte-identical
    ds = load_incidence_csv(write(tmp_path, "d.csv", LONG))
    p1, p2 = tmp_path / "out1.csv", tmp_path / "out2.csv"
    write_long_csv(ds, p1)
    again = load_incidence_csv(p1)
    assert np.array_equal(ds.values, again.values)
    assert ds.regions == again.regions and ds.start_date == again.start_date
    write_long_csv(again, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_static_features(tmp_path):
    ds = load_incidence_csv(write(tmp_path, "d.csv", LONG))
    feats = write(tmp_path, "f.csv", "region,pop,density\nalpha,100,5\nbeta,300,1\n")
    u = load_static_features(feats, ds)
    assert u.shape == (2, 2)
    # z-scored per feature: mean 0
    assert np.abs(u.mean(axis=0)).max() <= 1e-12
    missing = write(tmp_path, "g.csv", "region,pop\nalpha,100\n")
    with pytest.raises(DataError):
        load_static_features(missing, ds)


def test_truncated_view():
    ds = make_dataset(2, 10)
    cut = ds.truncated(6)
    assert cut.n_days == 6
    assert np.array_equal(cut.values, ds.values[:, :6])
    with pytest.raises(ConfigError):
        ds.truncated(11)


def test_calendar_arithmetic():
    ds = make_dataset(1, 5)
    assert ds.date_of_day(1) == dt.date(2020, 3, 1)
    assert ds.date_of_day(5) == dt.date(2020, 3, 5)
    assert ds.day_of_date(dt.date(2020, 3, 4)) == 4


def test_fingerprint_changes_with_data():
    a, b = make_dataset(2, 10), make_dataset(2, 10)
    assert a.fingerprint() == b.fingerprint()
    b.values[0, 0] += 1
    assert a.fingerprint() != b.fingerprint()
