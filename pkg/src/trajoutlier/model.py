"""Featurized trajectory table and the parameter bundle that embeds days."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .encoder import EncoderConfig, encode, init_params, parameter_manifest
from .errors import ConfigError, DataError
from .modality import (
    ABLATIONS,
    SemanticEmbedder,
    fuse_points,
    init_mapper_params,
    mapper_manifest,
    spatial_embed,
    temporal_embed,
    temporal_features,
)
from .numerics import Tensor, load_checkpoint, no_grad, save_checkpoint, seeded_rng
from .numerics import tensor as T

log = logging.getLogger(__name__)

MAPPER_PREFIXES = ("spatial.", "temporal.")


@dataclass
class ModelConfig:
    arch: str = "cnn"
    layers: int = 4
    dim: int = 64
    cutoff_len: int = 16
    heads: int = 4
    ff_dim: int = 256
    n_centroids: int = 10
    ablation: str = "none"
    embedder_seed: int = 0
    seed: int = 0

    def encoder_config(self):
        return EncoderConfig(self.arch, self.layers, self.dim, self.cutoff_len, self.heads, self.ff_dim)

    def validate(self):
        self.encoder_config().validate()
        if self.n_centroids < 1:
            raise ConfigError("model.centroids must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {', '.join(ABLATIONS)}")


class TrajectoryTable:
    """Dense ``[users, days, cutoff_len]`` arrays for one dataset.

    Days are addressed by flat row index ``u * n_days + d``.
    """

    def __init__(self, dataset, embedder):
        self.users = dataset.users
        self.n_users = len(self.users)
        self.n_days = dataset.n_days
        self.split_day = dataset.split_day
        self.cutoff_len = L = dataset.cutoff_len
        self.weekday = (np.arange(self.n_days) + dataset.epoch_weekday) % 7
        self.vocab = sorted(dataset.vocabulary)
        index = {c: i for i, c in enumerate(self.vocab)}
        self.semantic = embedder.matrix(self.vocab)
        shape = (self.n_users, self.n_days, L)
        self.cat = np.full(shape, -1, dtype=np.int64)
        self.xy = np.zeros(shape + (2,))
        t = np.full(shape, dataset.origin, dtype=np.int64)
        for ui, u in enumerate(self.users):
            for day in dataset.daily[u]:
                for j, p in enumerate(day.points):
                    self.cat[ui, day.day_index, j] = index[p.category]
                    self.xy[ui, day.day_index, j] = (p.x, p.y)
                    t[ui, day.day_index, j] = p.t
        self.mask = self.cat >= 0
        self.tfeat = temporal_features(t, dataset.origin, dataset.epoch_weekday)

    @property
    def n_rows(self):
        return self.n_users * self.n_days

    def rows(self, user_index, day):
        return np.asarray(user_index) * self.n_days + np.asarray(day)

    def gather(self, rows):
        """Raw features for flat rows: semantic vectors, xy, time features, mask."""
        rows = np.asarray(rows, dtype=np.int64)
        u, d = np.divmod(rows, self.n_days)
        cat = self.cat[u, d]
        sem = self.semantic[np.maximum(cat, 0)] if len(self.vocab) else np.zeros(cat.shape + (0,))
        return sem, self.xy[u, d], self.tfeat[u, d], self.mask[u, d]

    def train_points(self):
        """Flat indices ``(u, d, slot)`` of every valid train-split staypoint."""
        m = self.mask.copy()
        m[:, self.split_day:] = False
        return np.argwhere(m)


class Model:
    def __init__(self, config, embedder=None, params=None):
        config.validate()
        self.config = config
        self.embedder = embedder or SemanticEmbedder(config.dim, config.embedder_seed)
        if self.embedder.dim != config.dim:
            raise ConfigError(f"embedding dim {self.embedder.dim} does not match model dim {config.dim}")
        self.enc_cfg = config.encoder_config()
        if params is None:
            params = dict(init_mapper_params(config.dim, config.seed))
            params.update(init_params(self.enc_cfg, config.seed))
            rng = seeded_rng(config.seed, "empty_day")
            params["empty_day"] = Tensor(rng.normal(0.0, 1.0, config.dim), requires_grad=True, name="empty_day")
            params["centroids"] = Tensor(np.zeros((config.n_centroids, config.dim)), requires_grad=True,
                                         name="centroids")
        self.params = params

    def manifest(self):
        d = self.config.dim
        return (mapper_manifest(d) + parameter_manifest(self.enc_cfg)
                + [("empty_day", (d,)), ("centroids", (self.config.n_centroids, d))])

    def names(self, group):
        if group == "mapper":
            return [n for n, _ in mapper_manifest(self.config.dim) if n.startswith(MAPPER_PREFIXES)]
        if group == "fusion":
            return ["fusion.w", "fusion.b"]
        if group == "encoder":
            return [n for n, _ in parameter_manifest(self.enc_cfg)] + ["empty_day"]
        if group == "centroids":
            return ["centroids"]
        raise KeyError(group)

    def modalities(self, table, rows, mapper_grad=False):
        """Per-point semantic, spatial and temporal embeddings ``[N, L, d]``."""
        sem, xy, tf, mask = table.gather(rows)
        if mapper_grad:
            return sem, spatial_embed(self.params, xy), temporal_embed(self.params, tf), mask
        with no_grad():
            d_s = spatial_embed(self.params, xy)
            d_t = temporal_embed(self.params, tf)
        return sem, Tensor(d_s.data), Tensor(d_t.data), mask

    def encode_rows(self, table, rows, mapper_grad=False):
        sem, d_s, d_t, mask = self.modalities(table, rows, mapper_grad)
        x = fuse_points(self.params, sem, d_s, d_t, mask, self.config.ablation)
        return encode(self.params, self.enc_cfg, x, mask, self.params["empty_day"])

    def embed_table(self, table, chunk=1024):
        """Every day's embedding as a ``[users, days, d]`` array."""
        out = np.zeros((table.n_rows, self.config.dim))
        with no_grad():
            for start in range(0, table.n_rows, chunk):
                rows = np.arange(start, min(start + chunk, table.n_rows))
                out[rows] = self.encode_rows(table, rows).data
        return out.reshape(table.n_users, table.n_days, self.config.dim)

    # -- persistence ----------------------------------------------------------

    def metadata(self):
        return {
            "model": asdict(self.config),
            "embedder_mode": self.embedder.mode,
            "embedder_seed": self.embedder.seed,
            "embedder_dim": self.embedder.dim,
        }

    def save(self, path, extra=None):
        meta = self.metadata()
        meta.update(extra or {})
        if self.embedder.mode == "external-file":
            cats = self.embedder.known_categories()
            meta["embedder_table"] = {c: [float(v) for v in self.embedder.embed(c)] for c in cats}
        save_checkpoint(path, {n: self.params[n].data for n, _ in self.manifest()}, meta)

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        try:
            config = ModelConfig(**meta["model"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: checkpoint metadata lacks a valid model config ({exc})") from None
        if meta.get("embedder_mode") == "external-file":
            embedder = SemanticEmbedder(meta["embedder_dim"], table=meta.get("embedder_table", {}))
        else:
            embedder = SemanticEmbedder(meta.get("embedder_dim", config.dim), meta.get("embedder_seed", 0))
        model = cls(config, embedder)
        for name, shape in model.manifest():
            if name not in tensors:
                raise DataError(f"{path}: checkpoint is missing tensor {name!r}")
            if tensors[name].shape != tuple(shape):
                raise DataError(f"{path}: tensor {name!r} has shape {tensors[name].shape}, expected {shape}")
            model.params[name] = Tensor(tensors[name], requires_grad=True, name=name)
        return model, meta
