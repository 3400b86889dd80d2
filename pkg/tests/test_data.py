import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajoutlier.data import (
    SECONDS_PER_DAY,
    Label,
    StayPoint,
    day_pattern_set,
    format_labels,
    load_checkins,
    load_dataset,
    load_labels,
    segment_daily,
    weekday_of,
    write_checkins,
    write_labels,
)
from trajoutlier.errors import DataError

ORIGIN = 1704067200  # Monday 2024-01-01 UTC


def sp(day, hour, cat="Home", x=0.5, y=0.5):
    return StayPoint(x, y, ORIGIN + day * SECONDS_PER_DAY + int(hour * 3600), cat)


def test_day_pattern_set_examples():
    assert day_pattern_set(3, 7, 21) == {10, 17}
    assert day_pattern_set(10, 7, 21) == {3, 17}
    assert day_pattern_set(3, 7, 7) == set()
    assert day_pattern_set(1, 1, 3) == {2, 3}


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 7), st.integers(1, 60), st.data())
def test_day_pattern_set_properties(f, D, data):
    d = data.draw(st.integers(1, D))
    out = day_pattern_set(d, f, D)
    assert d not in out
    assert all(1 <= x <= D and (x - d) % f == 0 for x in out)
    # every same-phase day is present
    assert len(out) == len([x for x in range(1, D + 1) if (x - d) % f == 0]) - 1


def test_weekday_of_origin():
    assert weekday_of(ORIGIN) == 0
    assert weekday_of(ORIGIN + 5 * SECONDS_PER_DAY) == 5


def test_segment_daily_calendar_alignment_and_cutoff():
    stream = [sp(0, h) for h in range(1, 21)] + [sp(2, 9, "Workplace")]
    ds = segment_daily({"u": stream}, cutoff_len=16, origin=ORIGIN, split_day=2, n_days=4)
    days = ds.daily["u"]
    assert [d.day_index for d in days] == [0, 1, 2, 3]
    assert days[0].valid_len == 16 and days[0].n_dropped == 4
    assert days[1].valid_len == 0
    assert days[2].points[0].category == "Workplace"
    assert days[2].weekday == 2
    assert days[0].mask.sum() == 16 and not days[1].mask.any()
    assert [d.day_index for d in ds.train_days("u")] == [0, 1]
    assert [d.day_index for d in ds.test_days("u")] == [2, 3]
    assert ds.vocabulary == {"Home", "Workplace"}


def test_segment_daily_keeps_first_points_in_time_order():
    stream = [sp(0, h / 2) for h in range(40)]
    ds = segment_daily({"u": stream}, cutoff_len=5, origin=ORIGIN)
    assert [p.t for p in ds.daily["u"][0].points] == [p.t for p in stream[:5]]


def test_segment_daily_unsorted_raises():
    with pytest.raises(DataError, match="not sorted"):
        segment_daily({"u": [sp(0, 5), sp(0, 3)]}, origin=ORIGIN)


def test_segment_daily_before_origin_raises():
    with pytest.raises(DataError, match="precedes"):
        segment_daily({"u": [sp(-1, 5)]}, origin=ORIGIN)


def test_segment_daily_beyond_n_days_raises():
    with pytest.raises(DataError, match="beyond"):
        segment_daily({"u": [sp(5, 5)]}, origin=ORIGIN, n_days=3)


def test_segment_daily_infers_origin():
    ds = segment_daily({"u": [sp(1, 5)], "v": [sp(2, 1)]})
    assert ds.origin == ORIGIN + SECONDS_PER_DAY
    assert ds.n_days == 2


def test_checkin_file_roundtrip(tmp_path):
    streams = {"b": [sp(0, 8, "Home", 10.0, 20.0), sp(0, 9, "Pub", 30.0, 40.0)],
               "a": [sp(1, 12, "Restaurant", 20.0, 30.0)]}
    path = tmp_path / "c.jsonl"
    write_checkins(path, streams, bbox=(10.0, 20.0, 30.0, 40.0), epoch_weekday=0, origin=ORIGIN,
                   split_day=1, n_days=2, meta={"cutoff_len": 16, "config_hash": "h"})
    cf = load_checkins(path)
    assert cf.meta["config_hash"] == "h"
    assert cf.streams["b"][1].x == 1.0 and cf.streams["b"][0].y == 0.0
    ds = load_dataset(path)
    assert ds.users == ["a", "b"] and ds.split_day == 1 and ds.n_days == 2
    assert load_dataset(path, split_day=0).split_day == 0


def test_checkin_file_bad_line_reports_line_number(tmp_path):
    path = tmp_path / "c.jsonl"
    write_checkins(path, {"u": [sp(0, 1)]}, origin=ORIGIN, n_days=1)
    with open(path, "a") as fh:
        fh.write('{"user": "u", "t": "noon", "x": 0.1, "y": 0.1, "category": "Home"}\n')
    with pytest.raises(DataError, match=":3:"):
        load_checkins(path)


def test_checkin_file_unknown_fields_counted(tmp_path, caplog):
    path = tmp_path / "c.jsonl"
    write_checkins(path, {"u": [sp(0, 1)]}, origin=ORIGIN, n_days=1)
    with open(path, "a") as fh:
        fh.write(json.dumps({"user": "u", "t": ORIGIN + 7200, "x": 0.1, "y": 0.1,
                             "category": "Home", "speed": 3}) + "\n")
    assert load_checkins(path).unknown_fields == 1


def test_checkin_outside_bbox(tmp_path):
    path = tmp_path / "c.jsonl"
    write_checkins(path, {"u": [sp(0, 1, x=2.0)]}, origin=ORIGIN, n_days=1)
    with pytest.raises(DataError, match="outside"):
        load_checkins(path)


def test_label_invariants():
    Label(True, "hunger", "red")
    with pytest.raises(DataError):
        Label(False, "hunger", "red")
    with pytest.raises(DataError):
        Label(True, "none", "none")
    with pytest.raises(DataError):
        Label(True, "sleep", "red")


def test_labels_roundtrip_with_comments(tmp_path):
    table = {"a": Label(True, "work", "orange"), "b": Label(False)}
    path = tmp_path / "labels.csv"
    write_labels(path, table, comments=["config_hash=abc"])
    assert load_labels(path) == table
    text = "# provenance\nuser_id,is_outlier,outlier_type,intensity\n" + format_labels(table)
    path.write_text(text)
    assert load_labels(path) == table


def test_labels_bad_flag(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("a,2,work,red\n")
    with pytest.raises(DataError, match=":1:"):
        load_labels(path)


def test_mask_is_prefix():
    ds = segment_daily({"u": [sp(0, h) for h in range(5)]}, cutoff_len=8, origin=ORIGIN)
    m = ds.daily["u"][0].mask
    assert np.array_equal(m, [True] * 5 + [False] * 3)
