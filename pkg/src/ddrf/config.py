"""Training configuration and its plain-text ``key = value`` file format."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path


@dataclass(frozen=True)
class TrainConfig:
    batchsize: int = 16
    lr: float = 0.001
    epochs: int = 89
    basis_count: int = 12
    candidates: int = 4
    branch_kind: str = "dynamic"
    eq8_literal: bool = False
    scale: int = 1
    seed: int = 0
    crop_size: int = 32
    optimizer: str = "adam"
    momentum: float = 0.9
    low_light: bool = False
    eq6_literal: bool = True
    condition_branches: bool = True
    condition_fusion: bool = True
    residual: bool = True
    t: int = 8
    w_sim: float = 1.0
    w_pos: float = 1.0
    w_neg: float = 1.0
    w_pix: float = 3.0
    projector_samples: int = 2000

    def __post_init__(self):
        for name in ("batchsize", "epochs", "basis_count", "candidates", "crop_size", "t", "projector_samples"):
            if getattr(self, name) <= 0:
                raise ValueError(f"config: {name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ValueError(f"config: lr must be positive, got {self.lr}")
        if self.branch_kind not in ("static", "dynamic"):
            raise ValueError(f"config: branch_kind must be static or dynamic, got {self.branch_kind!r}")
        if self.scale not in (1, 2):
            raise ValueError(f"config: scale must be 1 or 2, got {self.scale}")
        if self.basis_count % 3 or not 3 <= self.basis_count <= 12:
            raise ValueError(f"config: basis_count must be 3, 6, 9 or 12, got {self.basis_count}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"config: optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.crop_size < 15 or self.crop_size % self.scale:
            raise ValueError(f"config: crop_size must be >= 15 and divisible by scale, got {self.crop_size}")

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _normalise_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def _coerce(name: str, raw: str):
    kind = type(getattr(TrainConfig(), name))
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config: {name} expects a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ValueError(f"config: {name} expects {kind.__name__}, got {raw!r}") from None


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        name = _normalise_key(key)
        if name not in _FIELDS:
            raise ValueError(f"config line {lineno}: unknown key {key.strip()!r}")
        values[name] = _coerce(name, raw)
    return replace(base or TrainConfig(), **values)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config_text(Path(path).read_text(), base)


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for name, value in cfg.as_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name.replace('_', '-')} = {value}")
    return "\n".join(lines) + "\n"
