"""Consistency and clustering losses, pair sampling and the two-phase trainer."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .modality import align_loss, spatial_embed, temporal_embed
from .numerics import AdamState, Tensor, adam_step, lr_at, no_grad, seeded_rng
from .numerics import tensor as T

log = logging.getLogger(__name__)

CLUSTER_MODES = ("softmin", "paper")
_MASKED = -1e9


@dataclass
class TrainConfig:
    epochs: int = 200
    batch: int = 128
    temperature: float = 0.1
    beta: float = 0.1
    n_centroids: int = 10
    f: int = 7
    negatives: int = 16
    max_positives: int = 4
    cluster_temp: float = 0.1
    cluster_mode: str = "softmin"
    align_temp: float = 0.1
    align_batch: int = 128
    align_points_per_user: int = 8
    joint: bool = False
    lambda_align: float = 1.0
    anchors_per_user: int = 1
    lr: float = 5e-3
    lr_decay: float = 0.9
    lr_every: int = 50
    seed: int = 0

    @property
    def align_epochs(self):
        return 0 if self.joint else self.epochs // 4

    def validate(self):
        for name in ("epochs", "batch", "n_centroids", "f", "negatives", "max_positives",
                     "align_batch", "align_points_per_user", "lr_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be >= 1")
        for name in ("temperature", "cluster_temp", "align_temp", "lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"train.{name} must be > 0")
        if self.beta < 0 or self.lambda_align < 0:
            raise ConfigError("train.beta and train.lambda_align must be >= 0")
        if self.anchors_per_user < 0:
            raise ConfigError("train.anchors_per_user must be >= 0 (0 means every train day)")
        if self.cluster_mode not in CLUSTER_MODES:
            raise ConfigError(f"train.cluster_mode must be one of {', '.join(CLUSTER_MODES)}")


# -- losses -------------------------------------------------------------------

def _sims(a, b):
    """Cosine similarities between rows of ``a`` [.., d] and ``b`` [.., n, d]."""
    return T.tsum(T.l2_normalize(a)[..., None, :] * T.l2_normalize(b), axis=-1)


def consistency_loss(z_anchor, z_pos, z_neg, temperature=0.1):
    """``-log(s_pos / (s_pos + s_neg))`` for one anchor.

    ``z_anchor`` is ``[d]``, ``z_pos`` ``[p, d]``, ``z_neg`` ``[m, d]``.
    Returns ``None`` when either set is empty.
    """
    if temperature <= 0:
        raise ConfigError(f"consistency temperature must be > 0, got {temperature}")
    if z_pos.shape[0] == 0 or z_neg.shape[0] == 0:
        return None
    lp = _sims(z_anchor, z_pos) * (1.0 / temperature)
    ln = _sims(z_anchor, z_neg) * (1.0 / temperature)
    return T.logsumexp(T.concat([lp, ln], axis=0), axis=0) - T.logsumexp(lp, axis=0)


def batch_consistency_loss(z, anchors, pos, pos_mask, neg, temperature=0.1):
    """Mean consistency loss over anchors using rows of ``z``.

    ``pos`` is ``[A, P]`` with validity ``pos_mask``; ``neg`` is ``[A, m]``.
    Every anchor must have at least one valid positive.
    """
    za = T.take(z, anchors)
    lp = _sims(za, T.take(z, pos.reshape(-1)).reshape(pos.shape + (z.shape[-1],)))
    ln = _sims(za, T.take(z, neg.reshape(-1)).reshape(neg.shape + (z.shape[-1],)))
    bias = np.where(pos_mask, 0.0, _MASKED)
    lp = lp * (1.0 / temperature) + bias
    ln = ln * (1.0 / temperature)
    per = T.logsumexp(T.concat([lp, ln], axis=1), axis=1) - T.logsumexp(lp, axis=1)
    return per.mean()


def cluster_weights(dist, mode="softmin", cluster_temp=0.1):
    """Soft assignment δ ``[N, K]`` from squared distances ``[N, K]``."""
    dist = T.as_tensor(dist)
    k = dist.shape[-1]
    if mode == "softmin":
        return T.softmax(dist * (-1.0 / cluster_temp), axis=-1)
    if mode != "paper":
        raise ConfigError(f"unknown clustering mode {mode!r}")
    tot = dist.data.sum(axis=-1, keepdims=True)
    degenerate = tot < 1e-12
    safe = T.where(degenerate, np.ones_like(dist.data), dist)
    w = safe / T.tsum(safe, axis=-1, keepdims=True)
    return T.where(degenerate, np.full(dist.shape, 1.0 / k), w)


def sq_distances(z, centroids):
    diff = T.as_tensor(z)[:, None, :] - T.as_tensor(centroids)[None, :, :]
    return T.tsum(diff * diff, axis=-1)


def clustering_loss(z, centroids, mode="softmin", cluster_temp=0.1, reduce="sum"):
    """Σ_batch Σ_k δ_k ℓ(z, b_k) with ℓ the squared Euclidean distance."""
    dist = sq_distances(z, centroids)
    per = T.tsum(cluster_weights(dist, mode, cluster_temp) * dist, axis=-1)
    return per.mean() if reduce == "mean" else per.sum()


def total_loss(consistency, clustering, beta):
    """Consistency + β · clustering (both already batch means)."""
    if beta == 0 or clustering is None:
        return consistency
    return consistency + clustering * beta


# -- sampling -----------------------------------------------------------------

def pattern_days(d, f, n_train):
    """Train days sharing ``d``'s phase mod ``f``, excluding ``d``."""
    return [x for x in range(d % f, n_train, f) if x != d]


def sample_pairs(n_users, n_train, anchor, cfg, rng):
    """Positives and negatives for one anchor ``(u, d)``.

    Positives are up to ``max_positives`` same-user days of the same phase.
    Negatives are ``negatives`` days of other users whose phase differs.
    Returns ``None`` when the anchor has no positive day.
    """
    u, d = anchor
    cands = pattern_days(d, cfg.f, n_train)
    if not cands or n_users < 2:
        return None
    take = min(cfg.max_positives, len(cands))
    pos = [(u, int(x)) for x in rng.choice(cands, size=take, replace=False)]
    neg = []
    while len(neg) < cfg.negatives:
        v = int(rng.integers(n_users - 1))
        v += v >= u
        dn = int(rng.integers(n_train))
        if dn % cfg.f != d % cfg.f:
            neg.append((v, dn))
    return pos, neg


@dataclass
class TrainStats:
    skipped_anchors: int = 0
    skipped_align_batches: int = 0


@dataclass
class TrainResult:
    records: list
    timings: list
    stats: TrainStats


def _anchor_list(n_users, n_train, cfg, rng):
    if cfg.anchors_per_user == 0:
        anchors = [(u, d) for u in range(n_users) for d in range(n_train)]
    else:
        k = min(cfg.anchors_per_user, n_train)
        anchors = [(u, int(d)) for u in range(n_users)
                   for d in rng.choice(n_train, size=k, replace=False)]
    return [anchors[i] for i in rng.permutation(len(anchors))]


def _check_finite(value, epoch, batch, what):
    if not math.isfinite(value):
        raise NumericalError(f"non-finite {what} loss at epoch {epoch + 1}, batch {batch}")


def _apply(model, names, loss, opt):
    params = [model.params[n] for n in names]
    for p in params:
        p.grad = None
    loss.backward()
    adam_step(params, [p.grad for p in params], opt)


def init_centroids(model, table, seed):
    """Centroids start at the embeddings of K random train days."""
    rng = seeded_rng(seed, "centroids")
    k = model.config.n_centroids
    n_train = table.split_day
    total = table.n_users * n_train
    picks = rng.choice(total, size=k, replace=total < k)
    u, d = np.divmod(picks, n_train)
    with no_grad():
        z = model.encode_rows(table, table.rows(u, d)).data
    model.params["centroids"] = Tensor(z.copy(), requires_grad=True, name="centroids")


def _align_epoch(model, table, cfg, epoch, opt, names, stats):
    rng = seeded_rng(cfg.seed, f"align/{epoch}")
    pts = table.train_points()
    by_user = np.split(pts, np.flatnonzero(np.diff(pts[:, 0])) + 1) if len(pts) else []
    chosen = []
    for grp in by_user:
        k = min(cfg.align_points_per_user, len(grp))
        chosen.append(grp[rng.choice(len(grp), size=k, replace=False)])
    if not chosen:
        return float("nan")
    sel = np.concatenate(chosen)
    sel = sel[rng.permutation(len(sel))]
    losses = []
    for b, start in enumerate(range(0, len(sel), cfg.align_batch)):
        part = sel[start:start + cfg.align_batch]
        loss = _point_align_loss(model, table, part, cfg)
        if loss is None:
            stats.skipped_align_batches += 1
            continue
        _check_finite(loss.item(), epoch, b, "alignment")
        _apply(model, names, loss, opt)
        losses.append(loss.item())
    return float(np.mean(losses)) if losses else float("nan")


def _point_align_loss(model, table, part, cfg):
    u, d, s = part[:, 0], part[:, 1], part[:, 2]
    sem = table.semantic[table.cat[u, d, s]]
    d_s = spatial_embed(model.params, table.xy[u, d, s])
    d_t = temporal_embed(model.params, table.tfeat[u, d, s])
    return align_loss(sem, d_s, d_t, cfg.align_temp)


def _consistency_batch(model, table, anchors, cfg, rng, stats, mapper_grad):
    rows, index = [], {}

    def row(u, d):
        r = u * table.n_days + d
        if r not in index:
            index[r] = len(rows)
            rows.append(r)
        return index[r]

    a_idx, pos, pmask, neg = [], [], [], []
    for anchor in anchors:
        pairs = sample_pairs(table.n_users, table.split_day, anchor, cfg, rng)
        if pairs is None:
            stats.skipped_anchors += 1
            continue
        p, n = pairs
        a_idx.append(row(*anchor))
        prow = [row(*x) for x in p]
        pos.append(prow + [prow[0]] * (cfg.max_positives - len(prow)))
        pmask.append([True] * len(prow) + [False] * (cfg.max_positives - len(prow)))
        neg.append([row(*x) for x in n])
    if not a_idx:
        return None, None
    z = model.encode_rows(table, np.asarray(rows), mapper_grad=mapper_grad)
    loss = batch_consistency_loss(z, np.asarray(a_idx), np.asarray(pos), np.asarray(pmask),
                                  np.asarray(neg), cfg.temperature)
    return loss, T.take(z, np.asarray(a_idx))


def train(model, table, cfg, log_path=None, timing_path=None, progress=None):
    """Two-phase training in place on ``model``.

    Phase 1 fits the spatial/temporal mappers and the fusion projection with
    the alignment loss for ``epochs // 4`` epochs. Phase 2 freezes the
    mappers and fits fusion, encoder and centroids with consistency +
    β · clustering. With ``cfg.joint`` there is a single phase that adds
    ``lambda_align`` times the alignment loss and trains everything.

    Returns a ``TrainResult`` with per-epoch log records and wall times.
    """
    cfg.validate()
    if table.split_day < 1 or table.n_users < 1:
        raise ConfigError("training needs a nonempty train split")
    if cfg.n_centroids != model.config.n_centroids:
        raise ConfigError(f"train.centroids={cfg.n_centroids} but the model has {model.config.n_centroids}")
    if cfg.n_centroids > max(table.n_users / 5, 1):
        log.warning("K=%d centroids is not much smaller than %d users", cfg.n_centroids, table.n_users)
    stats = TrainStats()
    records, timings = [], []
    mapper = model.names("mapper")
    fusion = model.names("fusion")
    phase2 = fusion + model.names("encoder") + model.names("centroids")
    if cfg.joint:
        phase2 = mapper + phase2
    opt1 = AdamState.init([model.params[n] for n in mapper + fusion], lr=cfg.lr)
    opt2 = None

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_at(epoch, cfg.lr, cfg.lr_decay, cfg.lr_every)
        rec = {"epoch": epoch + 1, "lr": lr, "mean_align": None,
               "mean_consistency": None, "mean_clustering": None}
        if epoch < cfg.align_epochs:
            rec["phase"] = 1
            opt1.lr = lr
            rec["mean_align"] = _align_epoch(model, table, cfg, epoch, opt1, mapper + fusion, stats)
        else:
            rec["phase"] = 2
            if opt2 is None:
                init_centroids(model, table, cfg.seed)
                opt2 = AdamState.init([model.params[n] for n in phase2], lr=cfg.lr)
            opt2.lr = lr
            rng = seeded_rng(cfg.seed, f"pairs/{epoch}")
            anchors = _anchor_list(table.n_users, table.split_day, cfg, rng)
            cons, clus, aligns = [], [], []
            for b, start in enumerate(range(0, len(anchors), cfg.batch)):
                loss_c, za = _consistency_batch(model, table, anchors[start:start + cfg.batch],
                                                cfg, rng, stats, cfg.joint)
                if loss_c is None:
                    continue
                loss_k = clustering_loss(za, model.params["centroids"], cfg.cluster_mode,
                                         cfg.cluster_temp, reduce="mean")
                loss = total_loss(loss_c, loss_k, cfg.beta)
                if cfg.joint and cfg.lambda_align > 0:
                    pts = table.train_points()
                    part = pts[rng.choice(len(pts), size=min(cfg.align_batch, len(pts)), replace=False)]
                    la = _point_align_loss(model, table, part, cfg)
                    if la is not None:
                        aligns.append(la.item())
                        loss = loss + la * cfg.lambda_align
                _check_finite(loss.item(), epoch, b, "training")
                _apply(model, phase2, loss, opt2)
                cons.append(loss_c.item())
                clus.append(loss_k.item())
            rec["mean_consistency"] = float(np.mean(cons)) if cons else None
            rec["mean_clustering"] = float(np.mean(clus)) if clus else None
            if aligns:
                rec["mean_align"] = float(np.mean(aligns))
        records.append(rec)
        timings.append({"epoch": epoch + 1, "phase": rec["phase"], "seconds": time.perf_counter() - t0})
        if progress:
            progress(rec)
    if stats.skipped_anchors:
        log.warning("%d anchor(s) skipped for lack of same-pattern train days", stats.skipped_anchors)
    if log_path:
        with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if timing_path:
        with open(timing_path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in timings:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return TrainResult(records, timings, stats)
