"""Daily-trajectory encoders: point-embedding sequence -> one unit vector.

All four architectures take ``X`` of shape ``[N, cutoff_len, d]`` and a
boolean ``mask`` ``[N, cutoff_len]`` whose true entries form a prefix.
Padding content never influences the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import Tensor, seeded_rng
from .numerics import tensor as T

ARCHS = ("mlp", "rnn", "cnn", "transformer")
_NEG_INF = -1e9


@dataclass
class EncoderConfig:
    arch: str = "cnn"
    layers: int = 4
    dim: int = 64
    cutoff_len: int = 16
    heads: int = 4
    ff_dim: int = 256

    def validate(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown encoder arch {self.arch!r}; choose from {', '.join(ARCHS)}")
        if self.layers < 1 or self.dim < 1 or self.cutoff_len < 1:
            raise ConfigError("encoder layers, dim and cutoff_len must be >= 1")
        if self.arch == "transformer" and self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} is not divisible by heads {self.heads}")


def parameter_manifest(cfg):
    """Ordered (name, shape) list of encoder parameters."""
    d, L = cfg.dim, cfg.layers
    out = []
    if cfg.arch == "mlp":
        for l in range(L):
            out += [(f"encoder.mlp{l}.w", (d, d)), (f"encoder.mlp{l}.b", (d,))]
    elif cfg.arch == "rnn":
        for l in range(L):
            out += [(f"encoder.rnn{l}.wx", (d, d)), (f"encoder.rnn{l}.wh", (d, d)),
                    (f"encoder.rnn{l}.b", (d,))]
    elif cfg.arch == "cnn":
        for l in range(L):
            out += [(f"encoder.conv{l}.w", (3, d, d)), (f"encoder.conv{l}.b", (d,))]
    elif cfg.arch == "transformer":
        out.append(("encoder.pos", (cfg.cutoff_len, d)))
        for l in range(L):
            p = f"encoder.block{l}"
            out += [(f"{p}.ln1.g", (d,)), (f"{p}.ln1.b", (d,)),
                    (f"{p}.attn.wq", (d, d)), (f"{p}.attn.wk", (d, d)),
                    (f"{p}.attn.wv", (d, d)), (f"{p}.attn.wo", (d, d)),
                    (f"{p}.ln2.g", (d,)), (f"{p}.ln2.b", (d,)),
                    (f"{p}.ff.w1", (d, cfg.ff_dim)), (f"{p}.ff.b1", (cfg.ff_dim,)),
                    (f"{p}.ff.w2", (cfg.ff_dim, d)), (f"{p}.ff.b2", (d,))]
        out += [("encoder.final_ln.g", (d,)), ("encoder.final_ln.b", (d,))]
    else:
        raise ConfigError(f"unknown encoder arch {cfg.arch!r}")
    return out


def _init(name, shape, seed):
    rng = seeded_rng(seed, name)
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "g":
        return np.ones(shape)
    if leaf.startswith("b"):
        return np.zeros(shape)
    if leaf == "pos":
        return rng.normal(0.0, 0.1, size=shape)
    fan_in = shape[-2] * (shape[0] if len(shape) == 3 else 1)
    gain = math.sqrt(2.0) if (".conv" in name or ".mlp" in name or leaf == "w1") else 1.0
    return rng.normal(0.0, gain / math.sqrt(fan_in), size=shape)


def init_params(cfg, seed):
    cfg.validate()
    return {name: Tensor(_init(name, shape, seed), requires_grad=True, name=name)
            for name, shape in parameter_manifest(cfg)}


def _mlp(p, cfg, x, mask):
    h = x
    for l in range(cfg.layers):
        h = T.matmul(h, p[f"encoder.mlp{l}.w"]) + p[f"encoder.mlp{l}.b"]
        if l < cfg.layers - 1:
            h = T.relu(h)
    return T.masked_mean(h, mask, axis=1)


def _rnn(p, cfg, x, mask):
    seq = [x[:, t, :] for t in range(x.shape[1])]
    n = x.shape[0]
    for l in range(cfg.layers):
        xw = T.matmul(T.stack(seq, axis=1), p[f"encoder.rnn{l}.wx"]) + p[f"encoder.rnn{l}.b"]
        h = Tensor(np.zeros((n, cfg.dim)))
        out = []
        for t in range(len(seq)):
            new = T.tanh(xw[:, t, :] + T.matmul(h, p[f"encoder.rnn{l}.wh"]))
            # padded steps carry the last valid state forward
            h = T.where(mask[:, t:t + 1], new, h)
            out.append(h)
        seq = out
    return seq[-1]


def _shift(x, k):
    """Shift along time by k (+1: x[t-1] at t), zero-filled."""
    n, t, d = x.shape
    zeros = np.zeros((n, 1, d))
    if k > 0:
        return T.concat([zeros, x[:, : t - 1, :]], axis=1)
    return T.concat([x[:, 1:, :], zeros], axis=1)


def _cnn(p, cfg, x, mask):
    m = np.asarray(mask, dtype=np.float64)[..., None]
    h = x * m
    for l in range(cfg.layers):
        w = p[f"encoder.conv{l}.w"]
        h = (T.matmul(_shift(h, 1), w[0]) + T.matmul(h, w[1]) + T.matmul(_shift(h, -1), w[2])
             + p[f"encoder.conv{l}.b"])
        if l < cfg.layers - 1:
            h = T.relu(h)
        h = h * m
    return T.masked_mean(h, mask, axis=1)


def _transformer(p, cfg, x, mask):
    n, t, d = x.shape
    heads, dh = cfg.heads, d // cfg.heads
    bias = np.where(mask, 0.0, _NEG_INF)[:, None, None, :]
    h = x + p["encoder.pos"][:t]
    scale = 1.0 / math.sqrt(dh)

    def split(a):
        return T.transpose(T.reshape(a, (n, t, heads, dh)), (0, 2, 1, 3))

    for l in range(cfg.layers):
        b = f"encoder.block{l}"
        a = T.layer_norm(h, p[f"{b}.ln1.g"], p[f"{b}.ln1.b"])
        q = split(T.matmul(a, p[f"{b}.attn.wq"]))
        k = split(T.matmul(a, p[f"{b}.attn.wk"]))
        v = split(T.matmul(a, p[f"{b}.attn.wv"]))
        att = T.softmax(T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * scale + bias, axis=-1)
        o = T.reshape(T.transpose(T.matmul(att, v), (0, 2, 1, 3)), (n, t, d))
        h = h + T.matmul(o, p[f"{b}.attn.wo"])
        f = T.layer_norm(h, p[f"{b}.ln2.g"], p[f"{b}.ln2.b"])
        f = T.relu(T.matmul(f, p[f"{b}.ff.w1"]) + p[f"{b}.ff.b1"])
        h = h + T.matmul(f, p[f"{b}.ff.w2"]) + p[f"{b}.ff.b2"]
    h = T.layer_norm(h, p["encoder.final_ln.g"], p["encoder.final_ln.b"])
    return T.masked_mean(h, mask, axis=1)


_FORWARD = {"mlp": _mlp, "rnn": _rnn, "cnn": _cnn, "transformer": _transformer}


def encode(params, cfg, x, mask, empty=None):
    """Encode ``[N, T, d]`` point embeddings to ``[N, d]`` unit vectors.

    Rows with no valid points take the learned ``empty`` vector when given,
    else the zero vector before normalization.
    """
    x = T.as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if x.ndim != 3 or x.shape[1:] != (cfg.cutoff_len, cfg.dim) or mask.shape != x.shape[:2]:
        raise ConfigError(f"encoder expects [N, {cfg.cutoff_len}, {cfg.dim}] with mask [N, "
                          f"{cfg.cutoff_len}], got {x.shape} and {mask.shape}")
    pooled = _FORWARD[cfg.arch](params, cfg, x, mask)
    if empty is not None:
        is_empty = ~mask.any(axis=1)
        if is_empty.any():
            pooled = T.where(is_empty[:, None], T.reshape(empty, (1, cfg.dim)), pooled)
    return T.l2_normalize(pooled)
