"""Flat ``key = value`` configuration with dotted sections.

Example::

    # desk-scale run
    seed = 1
    sim.agents = 200
    model.arch = cnn
    train.beta = 0.1
    score.mode = closest

Unknown keys are rejected. ``seed`` is required and seeds every stage.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .model import ModelConfig
from .objective import TrainConfig
from .sim import SimConfig


@dataclass(frozen=True)
class Key:
    name: str
    default: object
    help: str


def _sim_keys():
    rename = {"n_agents": "agents", "n_normal_days": "normal_days", "n_outlier_days": "outlier_days",
              "n_homes": "homes", "n_workplaces": "workplaces", "n_restaurants": "restaurants",
              "n_recreation": "recreation", "n_pubs": "pubs"}
    out = {}
    for f in fields(SimConfig):
        if f.name == "seed":
            continue
        out["sim." + rename.get(f.name, f.name)] = (f.name, f.default)
    return out


_SIM = _sim_keys()
_MODEL = {f"model.{f.name}": (f.name, f.default) for f in fields(ModelConfig)
          if f.name not in ("seed", "n_centroids")}
_MODEL["model.embeddings"] = (None, "")
_TRAIN = {f"train.{f.name}": (f.name, f.default) for f in fields(TrainConfig)
          if f.name not in ("seed", "n_centroids")}
_TRAIN["train.centroids"] = ("n_centroids", TrainConfig.n_centroids)
_SCORE = {"score.mode": "closest", "score.w_time": 0.5, "score.w_pop": 0.5, "score.k": "10,20"}

HELP = {
    "seed": "master seed for simulation, initialization and sampling (required)",
    "sim.agents": "number of simulated agents",
    "sim.normal_days": "days before the train/test split",
    "sim.outlier_days": "test days after outlier onset",
    "sim.test_normal_days": "normal test days between the split and outlier onset",
    "model.arch": "encoder: mlp, rnn, cnn or transformer",
    "model.ablation": "none, no-semantic, no-spatial or no-temporal",
    "model.embeddings": "external category embedding file (empty: seeded table)",
    "train.epochs": "total epochs; the first quarter fits the modality mappers",
    "train.anchors_per_user": "anchors drawn per user per epoch (0: every train day)",
    "train.temperature": "consistency temperature",
    "train.beta": "clustering weight",
    "train.cluster_mode": "softmin, or paper for distance-proportional weights",
    "score.mode": "closest or paper-eq11 cross-population",
    "score.k": "comma-separated Top-K cutoffs",
}


def all_defaults():
    out = {"seed": None}
    for table in (_SIM, _MODEL, _TRAIN):
        out.update({k: v[1] for k, v in table.items()})
    out.update(_SCORE)
    return dict(sorted(out.items()))


def _coerce(key, raw, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if isinstance(default, int) or default is None:
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None
    return raw


@dataclass
class Config:
    values: dict = field(default_factory=all_defaults)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self):
        return self.values["seed"]

    def text(self):
        """Canonical resolved text: every key, sorted."""
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(self.values.items()))

    def hash(self):
        return hashlib.sha256(self.text().encode("utf-8")).hexdigest()

    def provenance(self):
        return {"config": self.text(), "config_hash": self.hash()}

    def sim(self):
        kw = {attr: self.values[k] for k, (attr, _) in _SIM.items()}
        return SimConfig(seed=self.seed, **kw)

    def model(self):
        kw = {attr: self.values[k] for k, (attr, _) in _MODEL.items() if attr}
        return ModelConfig(seed=self.seed, n_centroids=self.values["train.centroids"], **kw)

    def train(self):
        kw = {attr: self.values[k] for k, (attr, _) in _TRAIN.items()}
        return TrainConfig(seed=self.seed, **kw)

    def ks(self):
        try:
            return tuple(int(k) for k in str(self.values["score.k"]).split(",") if k.strip())
        except ValueError:
            raise ConfigError(f"score.k must be comma-separated integers, got {self.values['score.k']!r}") from None

    def with_overrides(self, **kv):
        vals = dict(self.values)
        for k, v in kv.items():
            if v is None:
                continue
            if k not in vals:
                raise ConfigError(f"unknown config key {k!r}")
            vals[k] = v
        cfg = Config(vals)
        cfg.validate()
        return cfg

    def validate(self):
        if self.values.get("seed") is None:
            raise ConfigError("required config key 'seed' is missing")
        self.sim().validate()
        self.model().validate()
        self.train().validate()
        if self.values["score.mode"] not in ("closest", "paper-eq11"):
            raise ConfigError("score.mode must be closest or paper-eq11")
        w_t, w_p = self.values["score.w_time"], self.values["score.w_pop"]
        if w_t < 0 or w_p < 0 or abs(w_t + w_p - 1.0) > 1e-9:
            raise ConfigError("score.w_time and score.w_pop must be >= 0 and sum to 1")
        if not self.ks() or min(self.ks()) < 0:
            raise ConfigError("score.k needs at least one nonnegative cutoff")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def parse_config(text, source="<config>"):
    defaults = all_defaults()
    values = dict(defaults)
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        seen.add(key)
        values[key] = _coerce(key, raw, defaults[key])
    cfg = Config(values)
    cfg.validate()
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read(), str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None


def help_text():
    lines = []
    for k, v in all_defaults().items():
        desc = HELP.get(k, "")
        lines.append(f"  {k} = {_fmt(v) if v is not None else '<required>'}" + (f"    # {desc}" if desc else ""))
    return "\n".join(lines)
