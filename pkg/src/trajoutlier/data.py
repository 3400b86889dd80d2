"""Semantic-trajectory domain model, daily segmentation and file I/O.

Check-in files are JSON Lines: a header record first, then one record per
staypoint. Label files are CSV rows ``user_id,is_outlier,type,intensity``.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400
OUTLIER_TYPES = ("hunger", "social", "work", "none")
INTENSITIES = ("red", "orange", "yellow", "none")
CHECKIN_FIELDS = ("user", "t", "x", "y", "category")


@dataclass(frozen=True)
class StayPoint:
    x: float
    y: float
    t: int
    category: str


@dataclass(frozen=True)
class DailyTrajectory:
    user_id: str
    day_index: int
    weekday: int
    points: tuple
    cutoff_len: int
    n_dropped: int = 0

    @property
    def valid_len(self):
        return len(self.points)

    @property
    def mask(self):
        m = np.zeros(self.cutoff_len, dtype=bool)
        m[: self.valid_len] = True
        return m


@dataclass
class Dataset:
    daily: dict
    vocabulary: frozenset
    split_day: int
    epoch_weekday: int
    origin: int
    cutoff_len: int = 16
    n_days: int = 0

    @property
    def users(self):
        return sorted(self.daily)

    def train_days(self, user):
        return [d for d in self.daily[user] if d.day_index < self.split_day]

    def test_days(self, user):
        return [d for d in self.daily[user] if d.day_index >= self.split_day]

    def with_split(self, split_day):
        return Dataset(self.daily, self.vocabulary, int(split_day), self.epoch_weekday,
                       self.origin, self.cutoff_len, self.n_days)

    def checkins(self):
        """Flatten back to per-user staypoint streams (kept points only)."""
        return {u: [p for d in self.daily[u] for p in d.points] for u in self.users}

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.daily == other.daily and self.vocabulary == other.vocabulary
                and self.split_day == other.split_day
                and self.epoch_weekday == other.epoch_weekday
                and self.origin == other.origin and self.cutoff_len == other.cutoff_len
                and self.n_days == other.n_days)


@dataclass(frozen=True)
class Label:
    is_outlier: bool
    outlier_type: str = "none"
    intensity: str = "none"

    def __post_init__(self):
        if self.outlier_type not in OUTLIER_TYPES:
            raise DataError(f"unknown outlier type {self.outlier_type!r}")
        if self.intensity not in INTENSITIES:
            raise DataError(f"unknown intensity {self.intensity!r}")
        if not self.is_outlier and (self.outlier_type != "none" or self.intensity != "none"):
            raise DataError("normal users must have type=none and intensity=none")
        if self.is_outlier and (self.outlier_type == "none" or self.intensity == "none"):
            raise DataError("outliers need a concrete type and intensity")


@dataclass
class CheckinFile:
    streams: dict
    bbox: tuple = (0.0, 0.0, 1.0, 1.0)
    epoch_weekday: int | None = None
    origin: int | None = None
    split_day: int | None = None
    n_days: int | None = None
    meta: dict = field(default_factory=dict)
    unknown_fields: int = 0


def day_pattern_set(d, f, D_u):
    """Days sharing ``d``'s phase: ``{d + f*q : q != 0, 1 <= d + f*q <= D_u}``."""
    if f < 1:
        raise ValueError("f must be >= 1")
    first = d - ((d - 1) // f) * f
    return {x for x in range(first, D_u + 1, f) if x != d}


def weekday_of(origin):
    return _dt.datetime.fromtimestamp(origin, tz=_dt.timezone.utc).weekday()


def segment_daily(checkins, cutoff_len=16, *, origin=None, epoch_weekday=None,
                  split_day=None, n_days=None):
    """Partition per-user check-in streams into calendar-day trajectories.

    Day 0 starts at ``origin`` (UTC midnight, defaults to the day of the
    earliest check-in). Every user gets one trajectory for each day in
    ``[0, n_days)``; days without check-ins are empty. Each day keeps its
    first ``cutoff_len`` points in time order.
    """
    if cutoff_len < 1:
        raise ValueError("cutoff_len must be >= 1")
    for user, stream in checkins.items():
        for prev, cur in zip(stream, stream[1:]):
            if cur.t < prev.t:
                raise DataError(f"check-ins of user {user!r} are not sorted by time at t={cur.t}")
    nonempty = [s for s in checkins.values() if s]
    if origin is None:
        if not nonempty:
            return Dataset({}, frozenset(), split_day or 0, epoch_weekday or 0, 0, cutoff_len, 0)
        tmin = min(s[0].t for s in nonempty)
        origin = (tmin // SECONDS_PER_DAY) * SECONDS_PER_DAY
    if epoch_weekday is None:
        epoch_weekday = weekday_of(origin)
    last_day = max((s[-1].t - origin) // SECONDS_PER_DAY for s in nonempty) if nonempty else -1
    if n_days is None:
        n_days = last_day + 1
    elif last_day >= n_days:
        raise DataError(f"check-ins extend to day {last_day}, beyond n_days={n_days}")
    if split_day is None:
        split_day = n_days

    vocab = set()
    daily = {}
    for user, stream in checkins.items():
        by_day = {}
        for p in stream:
            day = (p.t - origin) // SECONDS_PER_DAY
            if day < 0:
                raise DataError(f"check-in of user {user!r} at t={p.t} precedes the dataset origin")
            by_day.setdefault(day, []).append(p)
            vocab.add(p.category)
        days = []
        for day in range(n_days):
            pts = by_day.get(day, [])
            days.append(DailyTrajectory(
                user_id=user, day_index=day, weekday=(day + epoch_weekday) % 7,
                points=tuple(pts[:cutoff_len]), cutoff_len=cutoff_len,
                n_dropped=max(len(pts) - cutoff_len, 0)))
        daily[user] = days
    return Dataset(daily, frozenset(vocab), int(split_day), int(epoch_weekday), int(origin),
                   cutoff_len, int(n_days))


# -- check-in files ---------------------------------------------------------

def _fmt_header(bbox, epoch_weekday, origin, split_day, n_days, meta):
    rec = {"type": "header", "bbox": list(bbox), "epoch_weekday": epoch_weekday,
           "origin": origin, "split_day": split_day, "n_days": n_days}
    rec.update(meta or {})
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def _fmt_point(user, p):
    return json.dumps({"user": user, "t": int(p.t), "x": float(p.x), "y": float(p.y),
                       "category": p.category}, separators=(",", ":"), ensure_ascii=False)


def write_checkins(path, streams, *, bbox=(0.0, 0.0, 1.0, 1.0), epoch_weekday=0, origin=0,
                   split_day=None, n_days=None, meta=None):
    """Write per-user streams sorted by (user, t). Coordinates are written raw."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_fmt_header(bbox, epoch_weekday, origin, split_day, n_days, meta) + "\n")
        for user in sorted(streams):
            for p in sorted(streams[user], key=lambda p: p.t):
                fh.write(_fmt_point(user, p) + "\n")


def write_dataset(ds, path, meta=None):
    write_checkins(path, ds.checkins(), epoch_weekday=ds.epoch_weekday, origin=ds.origin,
                   split_day=ds.split_day, n_days=ds.n_days,
                   meta=dict(meta or {}, cutoff_len=ds.cutoff_len))


def load_checkins(path):
    """Parse a check-in file; coordinates are min-max normalized to the header bbox."""
    streams = {}
    unknown = 0
    header = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{lineno}: record is not an object")
            if header is None:
                if rec.get("type") != "header":
                    raise DataError(f"{path}:{lineno}: first record must be the header")
                header = rec
                continue
            try:
                user = str(rec["user"])
                t = rec["t"]
                x, y = float(rec["x"]), float(rec["y"])
                cat = rec["category"]
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad or missing field {exc}") from None
            if not isinstance(t, int) or isinstance(t, bool):
                raise DataError(f"{path}:{lineno}: t must be an integer")
            if not isinstance(cat, str) or not cat:
                raise DataError(f"{path}:{lineno}: category must be a nonempty string")
            unknown += len(set(rec) - set(CHECKIN_FIELDS))
            streams.setdefault(user, []).append((t, x, y, cat, lineno))
    if header is None:
        return CheckinFile({})
    try:
        xmin, ymin, xmax, ymax = (float(v) for v in header.get("bbox", (0, 0, 1, 1)))
    except (TypeError, ValueError):
        raise DataError(f"{path}:1: bbox must be four numbers") from None
    if unknown:
        log.warning("%s: ignored %d unknown field(s)", path, unknown)
    sx = xmax - xmin if xmax > xmin else 1.0
    sy = ymax - ymin if ymax > ymin else 1.0
    out = {}
    for user, recs in streams.items():
        pts = []
        for t, x, y, cat, lineno in recs:
            nx, ny = (x - xmin) / sx, (y - ymin) / sy
            if not (0.0 <= nx <= 1.0 and 0.0 <= ny <= 1.0):
                raise DataError(f"{path}:{lineno}: coordinate ({x}, {y}) outside header bbox")
            pts.append(StayPoint(nx, ny, t, cat))
        out[user] = pts
    known = {"type", "bbox", "epoch_weekday", "origin", "split_day", "n_days"}
    return CheckinFile(
        streams=out, bbox=(xmin, ymin, xmax, ymax),
        epoch_weekday=header.get("epoch_weekday"), origin=header.get("origin"),
        split_day=header.get("split_day"), n_days=header.get("n_days"),
        meta={k: v for k, v in header.items() if k not in known}, unknown_fields=unknown)


def load_dataset(path, cutoff_len=None, split_day=None):
    """Load and segment a check-in file using the split/origin stored in its header."""
    cf = load_checkins(path)
    if cutoff_len is None:
        cutoff_len = int(cf.meta.get("cutoff_len", 16))
    for user, stream in cf.streams.items():
        for prev, cur in zip(stream, stream[1:]):
            if cur.t < prev.t:
                raise DataError(f"{path}: check-ins of user {user!r} are not sorted by time at t={cur.t}")
    return segment_daily(cf.streams, cutoff_len, origin=cf.origin, epoch_weekday=cf.epoch_weekday,
                         split_day=split_day if split_day is not None else cf.split_day,
                         n_days=cf.n_days)


# -- label files ------------------------------------------------------------

def load_labels(path):
    table = {}
    first = True
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            row = next(csv.reader([line]))
            if first and row and row[0] == "user_id":
                first = False
                continue
            first = False
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            user, flag, kind, intensity = (c.strip() for c in row)
            if flag not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: is_outlier must be 0 or 1")
            try:
                table[user] = Label(flag == "1", kind, intensity)
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return table


def format_labels(table, comments=()):
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    for user in sorted(table):
        lab = table[user]
        buf.write(f"{user},{int(lab.is_outlier)},{lab.outlier_type},{lab.intensity}\n")
    return buf.getvalue()


def write_labels(path, table, comments=()):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_labels(table, comments))
