"""Per-staypoint embeddings: frozen semantic table, spatial/temporal mappers,
the cross-modal alignment loss, and fusion into one point embedding."""

from __future__ import annotations

import logging
import math

import numpy as np

from .data import SECONDS_PER_DAY
from .errors import ConfigError, DataError
from .numerics import Tensor, seeded_rng
from .numerics import tensor as T

log = logging.getLogger(__name__)

TEMPORAL_DIM = 11
ABLATIONS = ("none", "no-semantic", "no-spatial", "no-temporal")


class SemanticEmbedder:
    """Frozen category -> unit vector table.

    In seeded mode every category string gets its own random direction,
    drawn from ``seeded_rng(seed, category)``; unseen categories are
    generated on demand. In external mode vectors come from a file and
    unknown categories are an error.
    """

    def __init__(self, dim=64, seed=0, table=None):
        self.dim = int(dim)
        self.seed = int(seed)
        self._external = table is not None
        self._cache = {}
        if table is not None:
            for cat, vec in table.items():
                vec = np.asarray(vec, dtype=np.float64)
                if vec.shape != (self.dim,):
                    raise DataError(f"embedding for {cat!r} has shape {vec.shape}, expected ({self.dim},)")
                n = np.linalg.norm(vec)
                if n == 0:
                    raise DataError(f"embedding for {cat!r} is the zero vector")
                self._cache[cat] = vec / n

    @property
    def mode(self):
        return "external-file" if self._external else "seeded-table"

    def embed(self, category):
        if not category:
            raise DataError("category must be a nonempty string")
        vec = self._cache.get(category)
        if vec is None:
            if self._external:
                raise DataError(f"no external embedding for category {category!r}")
            raw = seeded_rng(self.seed, category).standard_normal(self.dim)
            vec = self._cache[category] = raw / np.linalg.norm(raw)
        return vec

    def matrix(self, categories):
        missing = [c for c in categories if self._external and c not in self._cache]
        if missing:
            raise DataError("no external embedding for categories: " + ", ".join(sorted(missing)))
        if not len(categories):
            return np.zeros((0, self.dim))
        return np.stack([self.embed(c) for c in categories])

    def known_categories(self):
        return sorted(self._cache)

    @classmethod
    def from_file(cls, path, dim=None):
        """Read ``category v1 ... vd`` lines; the last ``dim`` tokens are the vector."""
        table = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                tokens = line.split()
                if not tokens:
                    continue
                if dim is None:
                    dim = sum(1 for _ in _trailing_floats(tokens))
                if len(tokens) <= dim:
                    raise DataError(f"{path}:{lineno}: expected a category and {dim} values")
                try:
                    vec = [float(v) for v in tokens[-dim:]]
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-numeric embedding value") from None
                table[" ".join(tokens[:-dim])] = vec
        if not table:
            raise DataError(f"{path}: no embeddings found")
        return cls(dim=dim, table=table)

    def to_file(self, path, categories=None):
        cats = categories if categories is not None else self.known_categories()
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for c in cats:
                fh.write(c + " " + " ".join(repr(float(v)) for v in self.embed(c)) + "\n")


def _trailing_floats(tokens):
    for tok in reversed(tokens[1:]):
        try:
            float(tok)
        except ValueError:
            return
        yield tok


def temporal_features(t, origin, epoch_weekday):
    """Weekday one-hot (7) + sin/cos of time of day at 24h and 12h periods."""
    t = np.asarray(t, dtype=np.int64)
    rel = t - origin
    weekday = (rel // SECONDS_PER_DAY + epoch_weekday) % 7
    tod = (rel % SECONDS_PER_DAY) / SECONDS_PER_DAY
    out = np.zeros(t.shape + (TEMPORAL_DIM,))
    np.put_along_axis(out, weekday[..., None], 1.0, axis=-1)
    out[..., 7] = np.sin(2 * math.pi * tod)
    out[..., 8] = np.cos(2 * math.pi * tod)
    out[..., 9] = np.sin(4 * math.pi * tod)
    out[..., 10] = np.cos(4 * math.pi * tod)
    return out


def mapper_manifest(dim):
    return [
        ("spatial.w1", (2, dim)), ("spatial.b1", (dim,)),
        ("spatial.w2", (dim, dim)), ("spatial.b2", (dim,)),
        ("temporal.w1", (TEMPORAL_DIM, dim)), ("temporal.b1", (dim,)),
        ("temporal.w2", (dim, dim)), ("temporal.b2", (dim,)),
        ("fusion.w", (3 * dim, dim)), ("fusion.b", (dim,)),
    ]


# spatial inputs live in [0,1]^2; a wide first layer lets the mapper resolve
# individual POIs instead of only coarse regions
_INIT_SCALE = {"spatial.w1": 3.0}


def init_mapper_params(dim, seed):
    params = {}
    for name, shape in mapper_manifest(dim):
        if name.endswith((".b", ".b1", ".b2")):
            arr = np.zeros(shape)
        else:
            std = _INIT_SCALE.get(name, 1.0 / math.sqrt(shape[0]))
            arr = seeded_rng(seed, name).normal(0.0, std, size=shape)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return params


def spatial_embed(params, xy):
    """M_s: (x, y) -> d (unnormalized)."""
    h = T.tanh(T.matmul(2.0 * np.asarray(xy) - 1.0, params["spatial.w1"]) + params["spatial.b1"])
    return T.matmul(h, params["spatial.w2"]) + params["spatial.b2"]


def temporal_embed(params, tfeat):
    """M_t: 11-dim time features -> d (unnormalized)."""
    h = T.tanh(T.matmul(np.asarray(tfeat), params["temporal.w1"]) + params["temporal.b1"])
    return T.matmul(h, params["temporal.w2"]) + params["temporal.b2"]


def build_pairs(n_points):
    """Positive and in-batch negative index pairs for ``n_points`` staypoints.

    Positives pair each staypoint's spatio-temporal part with its own
    category; negatives pair it with every other staypoint's category.
    """
    if n_points < 2:
        return [], {}
    pos = [(i, i) for i in range(n_points)]
    neg = {i: [j for j in range(n_points) if j != i] for i in range(n_points)}
    return pos, neg


class AlignStats:
    skipped_batches = 0


def align_loss(d_c, d_s, d_t, tau=0.1):
    """Two-term InfoNCE pulling spatial and temporal embeddings toward the
    semantic embedding of the same staypoint.

    Row ``i`` scores the anchor category ``c_i`` against every staypoint's
    temporal (resp. spatial) embedding in the batch; the diagonal is the
    positive. Returns the mean over anchors of the summed terms, or ``None``
    for batches with fewer than two staypoints.
    """
    if tau <= 0:
        raise ConfigError(f"alignment temperature must be > 0, got {tau}")
    n = d_c.shape[0]
    if n < 2:
        AlignStats.skipped_batches += 1
        log.warning("alignment batch with %d staypoint(s) skipped", n)
        return None
    c = T.as_tensor(d_c)
    c = T.l2_normalize(c)
    eye = np.eye(n)
    total = None
    for other in (d_t, d_s):
        o = T.l2_normalize(T.as_tensor(other))
        logits = T.matmul(c, T.transpose(o)) * (1.0 / tau)
        term = T.logsumexp(logits, axis=1) - (logits * eye).sum(axis=1)
        total = term if total is None else total + term
    return total.mean()


def fuse_points(params, d_c, d_s, d_t, mask, ablation="none"):
    """Concatenate the three modality embeddings, project to d and normalize.

    Inputs are ``[..., d]``; padding slots (mask false) come out as zero.
    """
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}")
    d_c = T.as_tensor(d_c)
    d_s = T.l2_normalize(T.as_tensor(d_s))
    d_t = T.l2_normalize(T.as_tensor(d_t))
    if ablation == "no-semantic":
        d_c = d_c * 0.0
    elif ablation == "no-spatial":
        d_s = d_s * 0.0
    elif ablation == "no-temporal":
        d_t = d_t * 0.0
    x = T.concat([d_c, d_s, d_t], axis=-1)
    z = T.l2_normalize(T.matmul(x, params["fusion.w"]) + params["fusion.b"])
    return z * np.asarray(mask, dtype=np.float64)[..., None]
