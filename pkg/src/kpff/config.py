"""Run configuration: plain `key = value` files with `#` comments,
overridable by CLI flags. Defaults follow the reference training recipe
(Adam, lr 1e-4, weight decay 5e-4, batch 50, 200 epochs, validate every
10, dropout 0.5, five folds)."""

from dataclasses import dataclass, fields, replace
import hashlib


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    fusion: str = "kpff"  # none | add | concat | kpff
    optimizer: str = "adam"  # adam | sgd
    lr: float = 1e-4
    weight_decay: float = 5e-4
    batch_size: int = 50
    max_epochs: int = 200
    val_interval: int = 10
    dropout_p: float = 0.5
    activation: str = "relu"
    channels: tuple = (6, 12)
    num_classes: int = 4
    per_class: int = 25
    image_size: int = 16
    data_dir: str = ""  # empty -> synthetic
    kpff_noise: float = 0.0
    freeze_fusion: bool = False
    folds: int = 5

    def __post_init__(self):
        for f in ("lr", "batch_size", "max_epochs", "val_interval", "folds",
                  "image_size", "num_classes", "per_class"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive, got {getattr(self, f)}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0,1), got {self.dropout_p}")
        if self.fusion not in ("none", "add", "concat", "kpff"):
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def with_overrides(self, **kwargs):
        return replace(self, **kwargs)


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(text, ftype):
    text = text.strip()
    if ftype is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"bad boolean {text!r}")
    if ftype is int:
        return int(text)
    if ftype is float:
        return float(text)
    if ftype is tuple:
        return tuple(int(x) for x in text.split(",") if x.strip())
    return text


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def parse_config_text(text, base: RunConfig = None) -> RunConfig:
    cfg = base or RunConfig()
    ftypes = {f.name: f.type for f in fields(RunConfig)}
    # dataclass field types may be strings under `from __future__ import annotations`;
    # resolve by the default value's type instead
    defaults = RunConfig()
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in ftypes:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        overrides[key] = _parse_value(value, type(getattr(defaults, key)))
    return cfg.with_overrides(**overrides)


def load_config(path, base: RunConfig = None) -> RunConfig:
    with open(path) as f:
        return parse_config_text(f.read(), base)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]
