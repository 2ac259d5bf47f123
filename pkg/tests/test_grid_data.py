import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ember.errors import CountMismatchError, DataError, DuplicateKeyError, OrphanEventError
from ember.grid_data import (FireEventList, PixelDayTable, attach_marks, load_fire_events,
                             load_pixel_days, transform_moderate_mark, write_fire_events,
                             write_pixel_days)

HEADER = "cell_id,day_index,year,month,x_km,y_km,fwi,fa,count,volume\n"


def _write(tmp_path, text, name="pixel_days.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _table(counts, fwi=None):
    n = len(counts)
    return PixelDayTable(cell_id=np.arange(n), day_index=np.zeros(n, int), year=np.full(n, 2010),
                         month=np.full(n, 7), x_km=np.zeros(n), y_km=np.zeros(n),
                         fwi=np.ones(n) if fwi is None else fwi, fa=np.full(n, 50.0),
                         count=counts, volume=np.full(n, 64.0))


def test_load_three_rows(tmp_path):
    p = _write(tmp_path, HEADER + "1,10,2010,7,0.0,0.0,12.5,40,0,64\n"
                                  "2,10,2010,7,8.0,0.0,3.0,0,1,64\n"
                                  "1,11,2010,7,0.0,0.0,0.0,100,2,64\n")
    t = load_pixel_days(p)
    assert len(t) == 3
    assert t.count.tolist() == [0, 1, 2]
    assert t.row_of(1, 11) == 2


def test_duplicate_key(tmp_path):
    p = _write(tmp_path, HEADER + "5,10,2010,7,0,0,1,1,0,64\n5,10,2010,7,0,0,1,1,0,64\n")
    with pytest.raises(DuplicateKeyError) as e:
        load_pixel_days(p)
    assert e.value.line == 3


def test_fa_out_of_range_names_field(tmp_path):
    p = _write(tmp_path, HEADER + "5,10,2010,7,0,0,1,120,0,64\n")
    with pytest.raises(DataError) as e:
        load_pixel_days(p)
    assert e.value.field == "fa"
    assert "fa" in str(e.value)


def test_month_outside_season(tmp_path):
    p = _write(tmp_path, HEADER + "5,10,2010,3,0,0,1,10,0,64\n")
    with pytest.raises(DataError, match="season"):
        load_pixel_days(p)
    # a wider season accepts it
    assert len(load_pixel_days(p, season=range(1, 13))) == 1


def test_malformed_row_reports_line(tmp_path):
    p = _write(tmp_path, HEADER + "5,10,2010,7,0,0,1,10,0,64\n6,10,2010,7,zero,0,1,10,0,64\n")
    with pytest.raises(DataError) as e:
        load_pixel_days(p)
    assert e.value.line == 3


def test_attach_marks_boundary():
    t = _table([1, 1])
    ev = FireEventList([0, 1], [0, 1], [0, 0], [100.0, 79.0])
    md = attach_marks(t, ev, 79.0)
    assert md.exceed.tolist() == [1, 0]


def test_attach_marks_count_mismatch():
    t = _table([2, 0])
    ev = FireEventList([0], [0], [0], [5.0])
    with pytest.raises(CountMismatchError):
        attach_marks(t, ev, 79.0)


def test_attach_marks_orphan():
    t = _table([1])
    ev = FireEventList([0, 1], [0, 9], [0, 0], [5.0, 6.0])
    with pytest.raises(OrphanEventError):
        attach_marks(t, ev, 79.0)


def test_burnt_area_floor():
    with pytest.raises(DataError):
        FireEventList([0], [0], [0], [1.0])


def test_transform_examples():
    assert transform_moderate_mark(40.0, 79.0) == 0.5
    assert transform_moderate_mark(79.0, 79.0) == 1 - 1e-6
    assert transform_moderate_mark(1.000001, 79.0) == 1e-6
    for bad in (1.0, 79.5):
        with pytest.raises(DataError):
            transform_moderate_mark(bad, 79.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1.0001, 79.0), min_size=2, max_size=20, unique=True))
def test_transform_monotone(ys):
    ys = np.sort(ys)
    z = (ys - 1) / 78.0
    assert np.all(np.diff(z) > 0)
    zt = transform_moderate_mark(ys, 79.0)
    assert np.all(np.diff(zt) >= 0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1e3, allow_subnormal=False), st.floats(0, 100),
                          st.integers(0, 5), st.floats(1e-3, 1e4)), min_size=1, max_size=15))
def test_round_trip(tmp_path_factory, rows):
    n = len(rows)
    fwi, fa, cnt, vol = map(np.array, zip(*rows))
    rng = np.random.default_rng(n)
    t = PixelDayTable(cell_id=np.arange(n), day_index=np.arange(n) * 3, year=np.full(n, 2001),
                      month=rng.integers(6, 11, n), x_km=rng.normal(size=n) * 1e3,
                      y_km=rng.normal(size=n) / 7, fwi=fwi, fa=fa, count=cnt, volume=vol)
    p = tmp_path_factory.mktemp("rt") / "pd.csv"
    write_pixel_days(t, p)
    assert load_pixel_days(p).equals(t)


def test_fire_round_trip(tmp_path):
    ev = FireEventList([3, 1], [0, 2], [5, 6], [1.1, 1234.5678901234])
    write_fire_events(ev, tmp_path / "f.csv")
    back = load_fire_events(tmp_path / "f.csv")
    assert np.array_equal(back.burnt_area, ev.burnt_area)
    assert back.fire_id.tolist() == [3, 1]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=30), st.floats(1.5, 200))
def test_event_count_identity(counts, u):
    t = _table(counts)
    rows = np.repeat(np.arange(len(counts)), counts)
    rng = np.random.default_rng(len(rows))
    ev = FireEventList(np.arange(len(rows)), rows, np.zeros(len(rows), int),
                       1.0 + rng.exponential(50.0, len(rows)) + 1e-9)
    md = attach_marks(t, ev, u)
    assert md.exceed.sum() + (1 - md.exceed).sum() == t.count.sum()
    assert np.all((md.burnt_area > u) == (md.exceed == 1))
