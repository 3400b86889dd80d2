"""Ranking metrics, per-type breakdowns, a travel-distance baseline and reports."""

from __future__ import annotations

import json
import math

import numpy as np

from .data import INTENSITIES, OUTLIER_TYPES
from .errors import DataError
from .model import TrajectoryTable
from .scoring import CHANNELS, ranking, score_dataset


def _binary(labels):
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise DataError("metrics need at least one positive and one negative label")
    return y, n_pos


def top_k_hits(ranked_users, labels, k):
    """Number of labeled outliers among the first ``k`` of ``ranked_users``."""
    if k < 0 or k > len(ranked_users):
        raise ValueError(f"K={k} outside [0, {len(ranked_users)}]")
    return sum(1 for u in ranked_users[:k] if labels[u].is_outlier)


def average_precision(scores, labels):
    """Mean over positives of precision at that positive's score threshold.

    Precision at a score ``s`` counts every item scoring ``>= s``, so tied
    items share one precision value.
    """
    s = np.asarray(scores, dtype=np.float64)
    y, n_pos = _binary(labels)
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    # last index of each tie group
    ends = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), len(s_sorted) - 1]
    cum_pos = np.cumsum(y_sorted)
    group_end = np.repeat(ends, np.diff(np.r_[-1, ends]))
    prec = cum_pos[group_end] / (group_end + 1.0)
    return float(prec[y_sorted].sum() / n_pos)


def roc_auc(scores, labels):
    """Mann-Whitney AUC; a tied (positive, negative) pair counts one half."""
    s = np.asarray(scores, dtype=np.float64)
    y, n_pos = _binary(labels)
    n_neg = len(y) - n_pos
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s))
    s_sorted = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def breakdown(ranked_users, labels, k):
    """Top-K hits per ``(type, intensity)`` cell for every outlier cell."""
    cells = {(t, i): 0 for t in OUTLIER_TYPES if t != "none" for i in INTENSITIES if i != "none"}
    for u in ranked_users[:k]:
        lab = labels[u]
        if lab.is_outlier:
            cells[(lab.outlier_type, lab.intensity)] += 1
    return cells


def type_totals(labels):
    out = {}
    for lab in labels.values():
        if lab.is_outlier:
            out[lab.outlier_type] = out.get(lab.outlier_type, 0) + 1
    return out


def detection_rates(ranked_users, labels, k):
    """Fraction of each outlier type found in the top ``k``."""
    cells = breakdown(ranked_users, labels, k)
    totals = type_totals(labels)
    return {t: sum(v for (tt, _), v in cells.items() if tt == t) / n for t, n in totals.items()}


def scaled_k(n_users):
    return max(1, math.ceil(0.1 * n_users))


def _aligned(scores, labels, channel):
    users = [s.user_id for s in scores]
    missing = [u for u in users if u not in labels]
    if missing:
        raise DataError(f"no label for user(s): {', '.join(missing[:5])}")
    vals = np.array([s.channel(channel) for s in scores], dtype=np.float64)
    # an undefined score ranks as least anomalous
    if np.isnan(vals).any():
        vals = np.where(np.isnan(vals), np.nanmin(vals) - 1.0 if (~np.isnan(vals)).any() else 0.0, vals)
    y = np.array([labels[u].is_outlier for u in users])
    return users, vals, y


def channel_metrics(scores, labels, channel, ks=(10, 20)):
    users, vals, y = _aligned(scores, labels, channel)
    ranked = ranking(scores, channel)
    out = {"auc": roc_auc(vals, y), "ap": average_precision(vals, y)}
    n = len(users)
    for k in sorted(set(list(ks) + [scaled_k(n)])):
        if k <= n:
            out[f"top{k}"] = top_k_hits(ranked, labels, k)
    out["scaled_k"] = scaled_k(n)
    return out


def evaluate(scores, labels, ks=(10, 20), breakdown_k=None):
    """Metrics for every channel plus the best channel by AUC."""
    report = {"channels": {}}
    for ch in CHANNELS:
        report["channels"][ch] = channel_metrics(scores, labels, ch, ks)
    best = max(CHANNELS, key=lambda c: (report["channels"][c]["auc"], -CHANNELS.index(c)))
    report["best_channel"] = best
    report["best_auc"] = report["channels"][best]["auc"]
    k = breakdown_k or max(ks)
    ranked = ranking(scores, best)
    cells = breakdown(ranked, labels, k)
    report["breakdown_k"] = k
    report["breakdown"] = {f"{t}/{i}": v for (t, i), v in sorted(cells.items())}
    report["detection_rates"] = detection_rates(ranked, labels, k)
    report["n_users"] = len(scores)
    report["n_outliers"] = sum(1 for s in scores if labels[s.user_id].is_outlier)
    return report


# -- travel-distance baseline -------------------------------------------------

def daily_distance(dataset, user):
    """Total straight-line path length of each day, in day order."""
    out = []
    for day in dataset.daily[user]:
        pts = day.points
        out.append(sum(math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(pts, pts[1:])))
    return np.asarray(out)


def distance_baseline(dataset, eps=1e-6):
    """``|mean test distance - mean train distance| / (train std + eps)`` per user."""
    out = {}
    for u in dataset.users:
        dist = daily_distance(dataset, u)
        train, test = dist[:dataset.split_day], dist[dataset.split_day:]
        if not len(train) or not len(test):
            out[u] = 0.0
            continue
        out[u] = float(abs(test.mean() - train.mean()) / (train.std() + eps))
    return out


def baseline_metrics(dataset, labels, ks=(10, 20)):
    base = distance_baseline(dataset)
    users = sorted(base)
    vals = np.array([base[u] for u in users])
    y = np.array([labels[u].is_outlier for u in users])
    ranked = sorted(users, key=lambda u: (-base[u], u))
    out = {"auc": roc_auc(vals, y), "ap": average_precision(vals, y)}
    for k in sorted(set(list(ks) + [scaled_k(len(users))])):
        if k <= len(users):
            out[f"top{k}"] = top_k_hits(ranked, labels, k)
    return out


def write_report(path, report):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, sort_keys=True, indent=1, allow_nan=True)
        fh.write("\n")


def load_report(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def transfer_eval(model, dataset, labels, mode="closest", ks=(10, 20)):
    """Score ``dataset`` with a trained model as-is (no updates) and evaluate."""
    table = TrajectoryTable(dataset, model.embedder)
    scores = score_dataset(model, table, mode)
    return scores, evaluate(scores, labels, ks)
