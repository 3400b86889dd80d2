"""Patterns-of-life generator with injected hunger/social/work outliers.

Agents live on a synthetic map of POIs in the unit square. Each day an
agent wakes at home, works on weekdays, eats whenever its hunger clock runs
out, sometimes goes out in the evening (and on weekend afternoons), and
sleeps at home. From ``onset_day`` on, outlier agents perturb their daily
plan with a per-day probability set by their intensity.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import SECONDS_PER_DAY, Label, StayPoint, format_labels, write_checkins
from .errors import ConfigError
from .numerics import seeded_rng

log = logging.getLogger(__name__)

CATEGORIES = ("Home", "Workplace", "Restaurant", "Recreation", "Pub")
RECREATION = ("Recreation", "Pub")
KINDS = ("hunger", "social", "work")
INTENSITY_RATE = {"red": 1.0, "orange": 0.5, "yellow": 0.2}
GRID_SECONDS = 900
# 2024-01-01T00:00:00Z, a Monday
DEFAULT_ORIGIN = 1704067200


@dataclass
class SimConfig:
    seed: int = 0
    n_agents: int = 200
    n_normal_days: int = 63
    n_outlier_days: int = 14
    # normal days scored as test before outlier onset
    test_normal_days: int = 0
    hunger_red: int = 4
    hunger_orange: int = 4
    hunger_yellow: int = 4
    social_red: int = 2
    social_orange: int = 1
    social_yellow: int = 1
    work_red: int = 2
    work_orange: int = 1
    work_yellow: int = 1
    n_homes: int = 100
    n_workplaces: int = 20
    n_restaurants: int = 30
    n_recreation: int = 20
    n_pubs: int = 10
    hunger_factor: float = 3.0
    evening_rec_prob: float = 0.5
    weekend_outing_prob: float = 0.5
    eat_out_prob: float = 0.3
    hunger_min_hours: float = 4.5
    hunger_max_hours: float = 6.5
    origin: int = DEFAULT_ORIGIN

    @property
    def split_day(self):
        return self.n_normal_days

    @property
    def onset_day(self):
        return self.n_normal_days + self.test_normal_days

    @property
    def n_days(self):
        return self.n_normal_days + self.test_normal_days + self.n_outlier_days

    def outlier_counts(self):
        return {(k, i): getattr(self, f"{k}_{i}") for k in KINDS for i in INTENSITY_RATE}

    def validate(self):
        if self.n_agents < 1:
            raise ConfigError("sim.agents must be >= 1")
        if self.n_normal_days < 1:
            raise ConfigError("sim.normal_days must be >= 1")
        if self.n_outlier_days < 1:
            raise ConfigError("sim.outlier_days must be >= 1")
        if self.test_normal_days < 0:
            raise ConfigError("sim.test_normal_days must be >= 0")
        counts = self.outlier_counts()
        if any(c < 0 for c in counts.values()):
            raise ConfigError("outlier counts must be >= 0")
        if sum(counts.values()) > self.n_agents:
            raise ConfigError(f"{sum(counts.values())} outliers requested for {self.n_agents} agents")
        for name in ("n_homes", "n_workplaces", "n_restaurants", "n_recreation", "n_pubs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"sim.{name[2:]} must be >= 1")
        if not 0 < self.hunger_min_hours <= self.hunger_max_hours:
            raise ConfigError("hunger period bounds must satisfy 0 < min <= max")
        if self.hunger_factor <= 0:
            raise ConfigError("sim.hunger_factor must be > 0")
        if self.origin % SECONDS_PER_DAY:
            raise ConfigError("sim.origin must be a UTC midnight")


@dataclass(frozen=True)
class PoiMap:
    x: np.ndarray
    y: np.ndarray
    category: tuple
    seed: int

    def __len__(self):
        return len(self.category)

    def ids(self, cat):
        return [i for i, c in enumerate(self.category) if c == cat]

    def nearest(self, candidates, x, y, k):
        cand = np.asarray(candidates)
        d = np.hypot(self.x[cand] - x, self.y[cand] - y)
        return tuple(int(i) for i in cand[np.argsort(d, kind="stable")[:k]])


def generate_map(config):
    counts = dict(zip(CATEGORIES, (config.n_homes, config.n_workplaces, config.n_restaurants,
                                   config.n_recreation, config.n_pubs)))
    for cat, n in counts.items():
        if n < 1:
            raise ConfigError(f"map needs at least one {cat} POI, got {n}")
    rng = seeded_rng(config.seed, "map")
    cats = [c for c in CATEGORIES for _ in range(counts[c])]
    xy = rng.uniform(0.0, 1.0, size=(len(cats), 2))
    return PoiMap(xy[:, 0].copy(), xy[:, 1].copy(), tuple(cats), config.seed)


@dataclass(frozen=True)
class AgentProfile:
    user_id: str
    home_poi: int
    work_poi: int
    favorite_recreation: tuple
    lunch_spots: tuple
    dinner_spots: tuple
    hunger_period_hours: float
    wake_hour: float
    work_start: float
    work_hours: float
    outlier: tuple = ("none", "none", None)


@dataclass
class DayPlan:
    day: int
    weekday: int
    works: bool
    hunger_period: float
    rec_pool: tuple
    all_recreation: tuple = field(default=(), repr=False)


def make_profile(user_id, poimap, config, outlier=("none", "none", None)):
    rng = seeded_rng(config.seed, f"profile/{user_id}")
    homes, works = poimap.ids("Home"), poimap.ids("Workplace")
    rests = poimap.ids("Restaurant")
    recs = [i for i, c in enumerate(poimap.category) if c in RECREATION]
    home = int(rng.choice(homes))
    work = int(rng.choice(works))
    hx, hy = poimap.x[home], poimap.y[home]
    wx, wy = poimap.x[work], poimap.y[work]
    near_rec = poimap.nearest(recs, hx, hy, min(8, len(recs)))
    fav = tuple(sorted(int(i) for i in rng.choice(near_rec, size=min(3, len(near_rec)), replace=False)))
    return AgentProfile(
        user_id=user_id, home_poi=home, work_poi=work, favorite_recreation=fav,
        lunch_spots=poimap.nearest(rests, wx, wy, min(3, len(rests))),
        dinner_spots=poimap.nearest(rests, hx, hy, min(3, len(rests))),
        hunger_period_hours=float(rng.uniform(config.hunger_min_hours, config.hunger_max_hours)),
        wake_hour=float(rng.uniform(6.0, 8.0)),
        work_start=float(rng.uniform(8.0, 10.0)),
        work_hours=float(rng.uniform(7.0, 9.0)),
        outlier=outlier)


def inject(kind, intensity, plan, u, hunger_factor=3.0):
    """Apply one outlier perturbation to a day plan.

    ``u`` is a uniform draw in [0, 1); the perturbation fires when
    ``u < rate(intensity)``.
    """
    if kind == "none" and intensity == "none":
        return plan
    if kind not in KINDS:
        raise ConfigError(f"unknown outlier type {kind!r}")
    if intensity not in INTENSITY_RATE:
        raise ConfigError(f"unknown outlier intensity {intensity!r}")
    if u >= INTENSITY_RATE[intensity]:
        return plan
    if kind == "work":
        return replace(plan, works=False)
    if kind == "hunger":
        return replace(plan, hunger_period=plan.hunger_period / hunger_factor)
    return replace(plan, rec_pool=plan.all_recreation)


def _day_visits(profile, plan, config, rng):
    """Return a list of (hour, poi) for one day, in time order."""
    wake = profile.wake_hour + rng.normal(0.0, 0.25)
    blocks = []
    if plan.works:
        ws = profile.work_start + rng.normal(0.0, 0.25)
        we = ws + profile.work_hours + rng.normal(0.0, 0.25)
        blocks.append((ws, we, profile.work_poi, True))
    if plan.weekday >= 5 and rng.random() < config.weekend_outing_prob:
        start = 13.0 + rng.normal(0.0, 0.5)
        blocks.append((start, start + rng.uniform(1.5, 3.0), int(rng.choice(plan.rec_pool)), False))
    if rng.random() < config.evening_rec_prob:
        start = max(19.5 + rng.normal(0.0, 0.5), blocks[-1][1] + 0.5 if blocks else 0.0)
        blocks.append((start, start + rng.uniform(1.0, 2.5), int(rng.choice(plan.rec_pool)), False))
    sleep = 23.5

    visits = [(wake, profile.home_poi)]
    state = {"next_meal": wake + plan.hunger_period, "t": wake}

    def meals_until(limit, at_home, spots):
        while state["next_meal"] < limit:
            h = max(state["next_meal"], state["t"] + 0.25)
            if h >= limit:
                break
            if at_home and rng.random() < config.eat_out_prob:
                visits.append((h, int(rng.choice(profile.dinner_spots))))
                visits.append((h + 0.75, profile.home_poi))
                h += 0.75
            elif at_home:
                visits.append((h, profile.home_poi))
            else:
                visits.append((h, int(rng.choice(spots))))
            state["t"] = h
            state["next_meal"] = h + plan.hunger_period * rng.uniform(0.85, 1.15)

    for start, end, poi, is_work in blocks:
        meals_until(start - 0.25, True, ())
        start = max(start, state["t"] + 0.25)
        visits.append((start, poi))
        state["t"] = start
        if is_work:
            meals_until(end, False, profile.lunch_spots)
        elif state["next_meal"] < end:
            # eats at the venue
            state["next_meal"] = end + plan.hunger_period * rng.uniform(0.5, 1.0)
        end = max(end, state["t"] + 0.25)
        visits.append((end, profile.home_poi))
        state["t"] = end
    meals_until(sleep, True, ())
    return visits


def _to_staypoints(visits, day, poimap, config):
    base = config.origin + day * SECONDS_PER_DAY
    out, last = [], -1
    for hour, poi in visits:
        sec = int(round(hour * 3600.0 / GRID_SECONDS)) * GRID_SECONDS
        sec = max(sec, last + GRID_SECONDS, 0)
        if sec >= SECONDS_PER_DAY:
            break
        last = sec
        out.append(StayPoint(float(poimap.x[poi]), float(poimap.y[poi]), base + sec, poimap.category[poi]))
    return out


def simulate_agent(profile, poimap, config):
    """Staypoint stream and inject log (one (day, fired) per test day) for one agent."""
    rng = seeded_rng(config.seed, f"agent/{profile.user_id}")
    inj = seeded_rng(config.seed, f"inject/{profile.user_id}")
    all_rec = tuple(i for i, c in enumerate(poimap.category) if c in RECREATION)
    weekday0 = (config.origin // SECONDS_PER_DAY + 3) % 7
    kind, intensity, onset = profile.outlier
    stream, fired = [], []
    for day in range(config.n_days):
        weekday = (weekday0 + day) % 7
        plan = DayPlan(day, weekday, weekday < 5, profile.hunger_period_hours,
                       profile.favorite_recreation, all_rec)
        if kind != "none" and day >= onset:
            u = float(inj.random())
            new = inject(kind, intensity, plan, u, config.hunger_factor)
            fired.append((day, new is not plan))
            plan = new
        stream.extend(_to_staypoints(_day_visits(profile, plan, config, rng), day, poimap, config))
    return stream, fired


@dataclass
class SimResult:
    streams: dict
    labels: dict
    profiles: dict
    inject_log: dict


def assign_outliers(config):
    users = [f"a{i:05d}" for i in range(config.n_agents)]
    rng = seeded_rng(config.seed, "assign")
    order = [users[i] for i in rng.permutation(len(users))]
    assigned, pos = {}, 0
    for (kind, intensity), n in config.outlier_counts().items():
        for u in order[pos:pos + n]:
            assigned[u] = (kind, intensity)
        pos += n
    return users, assigned


def _simulate_one(args):
    profile, poimap, config = args
    return simulate_agent(profile, poimap, config)


def simulate(config, poimap=None, threads=1):
    config.validate()
    if poimap is None:
        poimap = generate_map(config)
    users, assigned = assign_outliers(config)
    profiles, labels = {}, {}
    for u in users:
        kind, intensity = assigned.get(u, ("none", "none"))
        onset = config.onset_day if kind != "none" else None
        profiles[u] = make_profile(u, poimap, config, (kind, intensity, onset))
        labels[u] = Label(kind != "none", kind, intensity)
    jobs = [(profiles[u], poimap, config) for u in users]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_simulate_one, jobs, chunksize=8))
    else:
        results = [_simulate_one(j) for j in jobs]
    streams = {u: r[0] for u, r in zip(users, results)}
    inject_log = {u: r[1] for u, r in zip(users, results) if r[1]}
    return SimResult(streams, labels, profiles, inject_log)


def write_simulation(result, config, out_dir, provenance=None):
    """Write ``checkins.jsonl``, ``labels.csv`` and ``manifest.json`` into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    prov = provenance or {}
    write_checkins(os.path.join(out_dir, "checkins.jsonl"), result.streams,
                   bbox=(0.0, 0.0, 1.0, 1.0),
                   epoch_weekday=(config.origin // SECONDS_PER_DAY + 3) % 7,
                   origin=config.origin, split_day=config.split_day, n_days=config.n_days,
                   meta={"cutoff_len": 16, **prov})
    comments = [f"{k}={v}" for k, v in sorted(prov.items()) if k == "config_hash"]
    with open(os.path.join(out_dir, "labels.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_labels(result.labels, comments))
    manifest = {
        "users": sorted(result.streams),
        "n_users": len(result.streams),
        "n_checkins": sum(len(s) for s in result.streams.values()),
        "n_outliers": sum(lab.is_outlier for lab in result.labels.values()),
        "split_day": config.split_day,
        "onset_day": config.onset_day,
        "n_days": config.n_days,
        "sim_config": asdict(config),
        **prov,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return out_dir
