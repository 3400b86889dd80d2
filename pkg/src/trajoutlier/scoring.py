"""Cross-time and cross-population outlier scores and their fused ranking."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .numerics import normalize_rows

log = logging.getLogger(__name__)

POPULATION_MODES = ("closest", "paper-eq11")
CHANNELS = ("cross_time", "cross_population", "fused")
_NORM_EPS = 1e-12


@dataclass
class UserScore:
    user_id: str
    cross_time: float
    cross_population: float
    fused: float = 0.0
    rank: int = 0

    def channel(self, name):
        return getattr(self, name)


def mean_day_embedding(z, weekdays, pattern):
    """Normalized mean of the rows of ``z`` whose weekday is ``pattern``.

    Returns ``None`` when no row matches or the mean is (numerically) zero.
    """
    z = np.asarray(z, dtype=np.float64)
    sel = z[np.asarray(weekdays) == pattern]
    if not len(sel):
        return None
    h = sel.mean(axis=0)
    n = np.linalg.norm(h)
    if n < _NORM_EPS:
        return None
    return h / n


def pattern_means(z, weekdays, f=7):
    """``{pattern: h}`` for every pattern present in ``z``."""
    out = {}
    for d in range(f):
        h = mean_day_embedding(z, weekdays, d)
        if h is not None:
            out[d] = h
    return out


def cross_time(hist, cur):
    """``1 - mean_d cos(h_d, ĥ_d)`` over patterns present in both; NaN if none."""
    common = sorted(set(hist) & set(cur))
    if not common:
        return math.nan
    sims = [float(np.clip(hist[d] @ cur[d], -1.0, 1.0)) for d in common]
    return 1.0 - sum(sims) / len(sims)


def cross_population(cur, centroids, mode="closest"):
    """Per pattern, ``1 - cos`` to the centroids (min over k, or max in
    ``paper-eq11`` mode); the user's score is the max over patterns."""
    if mode not in POPULATION_MODES:
        raise ConfigError(f"unknown cross-population mode {mode!r}")
    if not cur:
        return math.nan
    b = normalize_rows(np.asarray(centroids, dtype=np.float64))
    h = np.stack([cur[d] for d in sorted(cur)])
    dis = 1.0 - np.clip(h @ b.T, -1.0, 1.0)
    per_day = dis.min(axis=1) if mode == "closest" else dis.max(axis=1)
    return float(per_day.max())


def _minmax(v):
    v = np.asarray(v, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi - lo <= 0:
        return np.zeros_like(v), True
    return (v - lo) / (hi - lo), False


def fuse(scores, w_time=0.5, w_pop=0.5):
    """Min-max normalize both channels, weight, and rank (descending, ties by id).

    Users with an undefined cross-time score use their normalized
    cross-population value alone. Returns new ``UserScore`` objects sorted
    by rank.
    """
    if len(scores) < 2:
        raise DataError("fusion needs at least two scored users")
    if not (w_time >= 0 and w_pop >= 0 and abs(w_time + w_pop - 1.0) < 1e-9):
        raise ConfigError(f"fusion weights must be nonnegative and sum to 1, got {w_time}, {w_pop}")
    ct = np.array([s.cross_time for s in scores], dtype=np.float64)
    cp = np.array([s.cross_population for s in scores], dtype=np.float64)
    if np.isnan(cp).any():
        raise DataError("cross-population score missing for some user")
    defined = ~np.isnan(ct)
    nct = np.zeros_like(ct)
    flat_t = True
    if defined.any():
        nct[defined], flat_t = _minmax(ct[defined])
    ncp, flat_p = _minmax(cp)
    if flat_t and flat_p:
        log.warning("all scores are equal; fused scores are all zero")
    fused = np.where(defined, w_time * nct + w_pop * ncp, ncp)
    order = sorted(range(len(scores)), key=lambda i: (-fused[i], scores[i].user_id))
    return [UserScore(scores[i].user_id, scores[i].cross_time, scores[i].cross_population,
                      float(fused[i]), r + 1) for r, i in enumerate(order)]


def score_embeddings(users, z, weekday, split_day, centroids, mode="closest", f=7,
                     w_time=0.5, w_pop=0.5):
    """Score every user from day embeddings ``z`` [users, days, d]."""
    weekday = np.asarray(weekday) % f
    out = []
    for i, u in enumerate(users):
        hist = pattern_means(z[i, :split_day], weekday[:split_day], f)
        cur = pattern_means(z[i, split_day:], weekday[split_day:], f)
        ct = cross_time(hist, cur)
        if math.isnan(ct):
            log.warning("user %s has no weekday pattern in both splits; cross-time undefined", u)
        out.append(UserScore(u, ct, cross_population(cur, centroids, mode)))
    return fuse(out, w_time, w_pop)


def score_dataset(model, table, mode="closest", w_time=0.5, w_pop=0.5):
    z = model.embed_table(table)
    return score_embeddings(table.users, z, table.weekday, table.split_day,
                            model.params["centroids"].data, mode, 7, w_time, w_pop)


def ranking(scores, channel="fused"):
    """User ids ordered by one channel, descending; ties by id; NaN last."""
    if channel not in CHANNELS:
        raise ConfigError(f"unknown score channel {channel!r}")

    def key(s):
        v = s.channel(channel)
        return (math.isnan(v), -v if not math.isnan(v) else 0.0, s.user_id)

    return [s.user_id for s in sorted(scores, key=key)]


def _fmt(v):
    return "nan" if math.isnan(v) else repr(float(v))


def format_scores(scores, comments=()):
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    buf.write("user_id,cross_time,cross_population,fused,rank\n")
    for s in sorted(scores, key=lambda s: s.rank):
        buf.write(f"{s.user_id},{_fmt(s.cross_time)},{_fmt(s.cross_population)},{_fmt(s.fused)},{s.rank}\n")
    return buf.getvalue()


def write_scores(path, scores, comments=()):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_scores(scores, comments))


def load_scores(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("user_id,"):
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            try:
                out.append(UserScore(parts[0], float(parts[1]), float(parts[2]), float(parts[3]),
                                     int(parts[4])))
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed number") from None
    if not out:
        raise DataError(f"{path}: no scores found")
    return out
