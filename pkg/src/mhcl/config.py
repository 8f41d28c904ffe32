"""Run configuration: a flat ``key=value`` file mirroring TrainConfig field names."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

TASKS = ("completion", "recommendation")
MAIN_LOSSES = ("bce", "ce", "oce")


@dataclass(frozen=True)
class TrainConfig:
    d: int = 45
    L: int = 3
    K: int = 256
    theta: float = 0.5
    lr: float = 1e-2
    alpha: float = 0.01
    beta: float = 0.01
    lambda_nrr: float = 0.01
    tau: float = 0.2
    gamma: float = 0.2
    l_close: float = 0.2
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    cl_neg_samples: int = 0
    task: str = "completion"
    use_hypergraph: bool = True
    leaky_slope: float = 0.2
    main_loss: str = "bce"
    bpr_reg: float = 1e-4
    dropout: float = 0.0
    hyper_temperature: float = 1.0

    def __post_init__(self):
        if self.d < 1 or self.K < 1:
            raise ConfigError("d and K must be >= 1")
        if not 0 <= self.L <= 5:
            raise ConfigError(f"L must lie in [0, 5], got {self.L}")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError(f"theta must lie in (0, 1], got {self.theta}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if min(self.alpha, self.beta, self.lambda_nrr, self.bpr_reg) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.tau <= 0 or self.gamma <= 0:
            raise ConfigError("tau and gamma must be positive")
        if not 0.0 <= self.l_close < 1.0:
            raise ConfigError("l_close must lie in [0, 1)")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be >= 1")
        if self.cl_neg_samples < 0:
            raise ConfigError("cl_neg_samples must be >= 0 (0 means all anchors)")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.main_loss not in MAIN_LOSSES:
            raise ConfigError(f"main_loss must be one of {MAIN_LOSSES}, got {self.main_loss!r}")
        if self.hyper_temperature <= 0:
            raise ConfigError("hyper_temperature must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError("leaky_slope must lie in (0, 1)")

    @property
    def d_model(self):
        return 3 * self.d

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(key, value, types[key], lineno)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key, value, typ, lineno):
    try:
        if typ == "bool":
            if value.lower() in ("1", "true", "yes"):
                return True
            if value.lower() in ("0", "false", "no"):
                return False
            raise ValueError(value)
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"line {lineno}: {key}={value!r} is not a valid {typ}") from None


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("MHCL_THREADS")
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"MHCL_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("MHCL_THREADS must be >= 1")
    return n
