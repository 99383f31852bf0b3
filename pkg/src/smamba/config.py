"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, fields

from .errors import ConfigError

log = logging.getLogger(__name__)

CORE_TAGS = ("vanilla", "ccf", "ocf", "diag", "diag_stable")
CORE_ALIASES = {"dense_hippo": "vanilla", "hippo": "vanilla", "diagstable": "diag_stable", "stable": "diag_stable"}


@dataclass(frozen=True)
class Config:
    # model
    d_model: int = 64
    n_layers: int = 2
    d_inner: int = 0  # 0 means 2 * d_model
    n_state: int = 8
    core: str = "vanilla"
    share_group: int = 16
    conv_width: int = 0
    euler_b: bool = False
    dt_min: float = 1e-3
    dt_max: float = 1e-1
    # training
    seq_len: int = 256
    batch: int = 16
    lr: float = 3e-4
    warmup: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 0.0
    steps_per_epoch: int = 500
    epochs: int = 7
    seed: int = 0
    val_fraction: float = 0.1
    eval_windows: int = 256

    def __post_init__(self):
        core = CORE_ALIASES.get(self.core, self.core)
        if core not in CORE_TAGS:
            raise ConfigError(f"core must be one of {', '.join(CORE_TAGS)}, got {self.core!r}")
        object.__setattr__(self, "core", core)
        if self.d_model < 1 or self.n_state < 1 or self.n_layers < 1:
            raise ConfigError("d_model, n_state and n_layers must be positive")
        if self.inner < self.d_model:
            raise ConfigError(f"d_inner ({self.inner}) must be at least d_model ({self.d_model})")
        if self.share_group < 1 or self.inner % self.share_group:
            raise ConfigError(f"share_group ({self.share_group}) must divide d_inner ({self.inner})")
        if not 0.0 < self.dt_min <= self.dt_max:
            raise ConfigError("need 0 < dt_min <= dt_max")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.seq_len < 1 or self.batch < 1:
            raise ConfigError("seq_len and batch must be positive")

    @property
    def inner(self) -> int:
        """Expanded channel count (``d_inner``, defaulting to ``2 * d_model``)."""
        return self.d_inner or 2 * self.d_model

    @property
    def groups(self) -> int:
        return self.inner // self.share_group

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(Config)}


def _convert(key: str, raw: str):
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_pairs(lines, source: str = "config") -> dict:
    """``key = value`` lines to a dict; last duplicate wins with a warning."""
    out: dict = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {lineno}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"{source} line {lineno}: unknown key {key!r}")
        if key in out:
            log.warning("%s: duplicate key %s, last value wins", source, key)
        out[key] = _convert(key, value)
    return out


def load_config(path=None, overrides=(), base: Config | None = None) -> Config:
    """Read a config file (optional) and apply ``key=value`` overrides after it."""
    values: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_pairs(fh.read().splitlines(), source=str(path)))
    over = parse_pairs(overrides, source="--set")
    for key in over:
        if key in values:
            log.warning("override %s replaces config value", key)
    values.update(over)
    return dataclasses.replace(base or Config(), **values)


def parse_config(text: str) -> Config:
    return Config(**parse_pairs(text.splitlines()))
