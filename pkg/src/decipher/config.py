"""Run configuration: a JSON file whose keys map 1:1 onto ``--section.key`` flags.

Layout::

    {
      "data":      {"corpus": ..., "vocab": ..., "features": ..., "gold": ...},
      "objective": {"r_cov": 0.2, "temperature": 0.2, ...},
      "train":     {"learning_rate": 3.0, "seed": 0, "restarts": 5, ...},
      "run":       {"out_dir": "run", "snapshot_every": 0, ...}
    }

Unknown sections or keys are rejected.
"""

import json
from dataclasses import asdict, dataclass, field, fields

from decipher.errors import ConfigError
from decipher.objective import ObjectiveConfig
from decipher.training import TrainConfig


@dataclass
class DataConfig:
    corpus: str = ""
    vocab: str = ""
    features: str = ""
    gold: str = ""
    # optional file listing the lost alphabet, one character per line
    lost_alphabet: str = ""
    min_stem_len: int = 1
    # "ipa" uses the feature table, "unstructured" gives every phone private features
    feature_mode: str = "ipa"

    def __post_init__(self):
        if self.feature_mode not in ("ipa", "unstructured"):
            raise ConfigError("data.feature_mode must be 'ipa' or 'unstructured'")
        if self.min_stem_len < 1:
            raise ConfigError("data.min_stem_len must be >= 1")


@dataclass
class RunConfig:
    out_dir: str = "run"
    # extra annealing start points; empty means train.anneal_start only
    anneal_starts: tuple = ()
    snapshot_every: int = 0
    log_every: int = 100
    k: tuple = (1, 10)
    select_k: int = 10

    def __post_init__(self):
        self.anneal_starts = tuple(float(s) for s in self.anneal_starts)
        self.k = tuple(int(k) for k in self.k)
        if self.snapshot_every < 0 or self.log_every < 0:
            raise ConfigError("run.snapshot_every and run.log_every must be >= 0")
        if not self.k or min(self.k) < 1:
            raise ConfigError("run.k needs positive values")


SECTIONS = {
    "data": DataConfig,
    "objective": ObjectiveConfig,
    "train": TrainConfig,
    "run": RunConfig,
}


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def to_dict(self):
        return {name: _plain(asdict(getattr(self, name))) for name in SECTIONS}

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.dumps())

    @property
    def schedules(self):
        starts = self.run.anneal_starts or (self.train.anneal_start,)
        return [(s, self.train.anneal_end, self.train.anneal_steps) for s in starts]


def _plain(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def schema():
    """``{dotted key: default}`` for every configurable value."""
    out = {}
    for name, cls in SECTIONS.items():
        inst = cls()
        for f in fields(cls):
            out[f"{name}.{f.name}"] = getattr(inst, f.name)
    return out


def parse_value(key, text, default):
    """Parse a flag string according to the type of the key's default."""
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes"):
                return True
            if text.lower() in ("0", "false", "no"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            text = text.strip()
            if text.startswith("["):
                return tuple(json.loads(text))
            items = [t for t in text.split(",") if t.strip()]
            return tuple(_scalar(t.strip()) for t in items)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def _scalar(t):
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    return t


def build(raw=None, overrides=None):
    """Config from a nested dict plus ``{dotted key: value}`` overrides."""
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    values = {name: dict(raw.get(name) or {}) for name in SECTIONS}
    for key, val in (overrides or {}).items():
        section, _, name = key.partition(".")
        if section not in SECTIONS:
            raise ConfigError(f"unknown config key: {key}")
        values[section][name] = val
    sections = {}
    for name, cls in SECTIONS.items():
        allowed = {f.name for f in fields(cls)}
        bad = sorted(set(values[name]) - allowed)
        if bad:
            raise ConfigError(f"unknown config keys: {[f'{name}.{b}' for b in bad]}")
        try:
            sections[name] = cls(**values[name])
        except TypeError as exc:
            raise ConfigError(f"{name}: {exc}") from None
    return Config(**sections)


def load(path, overrides=None):
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
    return build(raw, overrides)
