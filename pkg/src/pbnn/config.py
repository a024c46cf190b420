"""Run configuration shared by the CLI, trainer, and checkpoints."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

from .errors import ConfigError
from .fxp import QFormat
from .layers import REGIMES

__all__ = ["RunConfig", "BACKENDS"]

BACKENDS = ("real32", "fx8", "fx16")
ARCHS = ("tiny", "paper")
DATA_SOURCES = ("synthetic", "cifar10")

# fields that steer computation; everything else is artifact routing
_SEMANTIC_EXCLUDE = ("out", "figures")


@dataclass(frozen=True)
class RunConfig:
    regime: str = "progressive"
    backend: str = "real32"
    frac_bits: int | None = None
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    arch: str = "tiny"
    data: str = "synthetic"
    data_dir: str | None = None
    subset: int | None = None
    test_subset: int | None = None
    synthetic_train: int = 5000
    synthetic_test: int = 1000
    snr: float = 1.0
    clip: float = 1.0
    augment_flip: bool = False
    augment_crop: bool = False
    out: str = "runs/run"
    figures: bool = True

    def validate(self) -> "RunConfig":
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.backend == "real32" and self.frac_bits is not None:
            raise ConfigError("--frac-bits only applies to fixed-point backends")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.data not in DATA_SOURCES:
            raise ConfigError(f"data must be one of {DATA_SOURCES}, got {self.data!r}")
        if self.data == "cifar10" and not self.data_dir:
            raise ConfigError("cifar10 data requires --data-dir")
        for name in ("subset", "test_subset"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.snr < 0:
            raise ConfigError("snr must be >= 0")
        if self.clip <= 0:
            raise ConfigError("clip threshold must be positive")
        self.fmt()
        return self

    def fmt(self) -> QFormat | None:
        """Fixed-point format for this backend (None for the real reference)."""
        if self.backend == "real32":
            return None
        total = 8 if self.backend == "fx8" else 16
        frac = self.frac_bits if self.frac_bits is not None else (4 if total == 8 else 8)
        try:
            return QFormat(total, frac)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def semantic_dict(self) -> dict:
        """Fields that must match for a checkpoint resume to be valid."""
        d = asdict(self)
        for k in _SEMANTIC_EXCLUDE:
            d.pop(k)
        return d

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"bad config JSON: {e}") from None
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**payload)

    def with_output(self, out: str) -> "RunConfig":
        return replace(self, out=out)
