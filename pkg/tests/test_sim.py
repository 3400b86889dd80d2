from dataclasses import replace

import numpy as np
import pytest

from trajoutlier.data import SECONDS_PER_DAY, load_dataset, load_labels
from trajoutlier.errors import ConfigError
from trajoutlier.sim import (
    DayPlan,
    SimConfig,
    generate_map,
    inject,
    simulate,
    write_simulation,
)

SMALL = SimConfig(seed=3, n_agents=30, n_normal_days=14, n_outlier_days=7)


@pytest.fixture(scope="module")
def small():
    return simulate(SMALL)


def _by_day(stream, cfg):
    out = {}
    for p in stream:
        out.setdefault((p.t - cfg.origin) // SECONDS_PER_DAY, []).append(p)
    return out


def test_outlier_counts(small):
    labs = small.labels
    assert len(labs) == 30
    outl = [lab for lab in labs.values() if lab.is_outlier]
    assert len(outl) == 20
    kinds = {k: sum(lab.outlier_type == k for lab in outl) for k in ("hunger", "social", "work")}
    assert kinds == {"hunger": 12, "social": 4, "work": 4}
    hunger_int = sorted(lab.intensity for lab in outl if lab.outlier_type == "hunger")
    assert hunger_int == ["orange"] * 4 + ["red"] * 4 + ["yellow"] * 4


def test_streams_sorted_in_unit_square(small):
    for stream in small.streams.values():
        ts = [p.t for p in stream]
        assert ts == sorted(ts) and len(set(ts)) == len(ts)
        assert all(0.0 <= p.x <= 1.0 and 0.0 <= p.y <= 1.0 for p in stream)
        assert all(p.t < SMALL.origin + SMALL.n_days * SECONDS_PER_DAY for p in stream)


def test_every_day_has_checkins(small):
    for stream in small.streams.values():
        assert len(_by_day(stream, SMALL)) == SMALL.n_days


def test_deterministic():
    a, b = simulate(SMALL), simulate(SMALL)
    assert a.streams == b.streams and a.labels == b.labels


def test_threads_do_not_change_output(small):
    assert simulate(SMALL, threads=2).streams == small.streams


def test_seed_changes_output(small):
    assert simulate(replace(SMALL, seed=4)).streams != small.streams


def test_inject_log_only_for_outliers_and_test_days(small):
    for u, log in small.inject_log.items():
        assert small.labels[u].is_outlier
        assert [d for d, _ in log] == list(range(SMALL.split_day, SMALL.n_days))
    red = [u for u, lab in small.labels.items() if lab.intensity == "red"]
    assert all(all(f for _, f in small.inject_log[u]) for u in red)


def test_inject_semantics():
    plan = DayPlan(0, 1, True, 5.0, (1, 2), (1, 2, 3, 4))
    assert inject("work", "red", plan, 0.99).works is False
    assert inject("work", "yellow", plan, 0.5) is plan
    assert inject("work", "yellow", plan, 0.1).works is False
    assert inject("hunger", "orange", plan, 0.3, hunger_factor=2.5).hunger_period == 2.0
    assert inject("social", "red", plan, 0.0).rec_pool == (1, 2, 3, 4)
    assert inject("none", "none", plan, 0.0) is plan
    with pytest.raises(ConfigError):
        inject("sleep", "red", plan, 0.0)


def test_hunger_red_eats_more_after_onset(small):
    u = next(u for u, lab in small.labels.items() if lab.outlier_type == "hunger" and lab.intensity == "red")
    days = _by_day(small.streams[u], SMALL)
    before = np.mean([len(days[d]) for d in range(SMALL.split_day)])
    after = np.mean([len(days[d]) for d in range(SMALL.split_day, SMALL.n_days)])
    assert after > before + 2


def test_work_red_stops_working(small):
    users = [u for u, lab in small.labels.items() if lab.outlier_type == "work" and lab.intensity == "red"]
    for u in users:
        days = _by_day(small.streams[u], SMALL)
        cats_after = {p.category for d in range(SMALL.split_day, SMALL.n_days) for p in days[d]}
        cats_before = {p.category for d in range(SMALL.split_day) for p in days[d]}
        assert "Workplace" in cats_before and "Workplace" not in cats_after


def test_social_red_visits_new_places(small):
    pm = generate_map(SMALL)
    users = [u for u, lab in small.labels.items() if lab.outlier_type == "social" and lab.intensity == "red"]
    new_places = 0
    for u in users:
        fav = {(pm.x[i], pm.y[i]) for i in small.profiles[u].favorite_recreation}
        days = _by_day(small.streams[u], SMALL)

        def venues(rng_days):
            return {(p.x, p.y) for d in rng_days for p in days[d] if p.category in ("Recreation", "Pub")}

        assert venues(range(SMALL.split_day)) <= fav
        new_places += len(venues(range(SMALL.split_day, SMALL.n_days)) - fav)
    assert new_places > 0


def test_normal_test_days_keep_train_split(small):
    ext = simulate(replace(SMALL, test_normal_days=7))
    cut = SMALL.origin + SMALL.split_day * SECONDS_PER_DAY
    for u in small.streams:
        a = [p for p in small.streams[u] if p.t < cut]
        b = [p for p in ext.streams[u] if p.t < cut]
        assert a == b
    onset = replace(SMALL, test_normal_days=7).onset_day
    assert all(log[0][0] == onset for log in ext.inject_log.values())


@pytest.mark.parametrize("kw", [
    {"n_agents": 0}, {"n_agents": 10}, {"n_outlier_days": 0}, {"hunger_factor": 0.0},
    {"n_pubs": 0}, {"origin": 5}, {"test_normal_days": -1},
])
def test_validate_rejects(kw):
    with pytest.raises(ConfigError):
        replace(SMALL, **kw).validate()


def test_write_simulation(tmp_path, small):
    write_simulation(small, SMALL, tmp_path, {"config_hash": "abc"})
    ds = load_dataset(tmp_path / "checkins.jsonl")
    assert ds.users == sorted(small.streams)
    assert ds.split_day == SMALL.split_day and ds.n_days == SMALL.n_days
    assert ds.epoch_weekday == 0
    assert load_labels(tmp_path / "labels.csv") == small.labels
    first = (tmp_path / "checkins.jsonl").read_bytes()
    write_simulation(simulate(SMALL), SMALL, tmp_path, {"config_hash": "abc"})
    assert (tmp_path / "checkins.jsonl").read_bytes() == first
