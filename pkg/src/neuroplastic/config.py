"""Training configuration and its nested key-value file form.

File layout (YAML)::

    train:   {epochs, batch_size, knn_k, tau, d_prime, seed, memory_capacity,
              exclude_exact, early_stop_patience, use_memory, initial_gamma}
    adam:    {alpha, beta1, beta2, eps}
    growth:  {policy, interval, epsilon, lambda, grow_count, max_blocks,
              initial_blocks, enabled}
    split:   {train, val, test, seed}

Precedence is command-line flag over file over default.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .growth import GrowthConfig, GrowthPolicy
from .numerics import AdamConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    val: float = 0.15
    test: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0:
            raise ValueError("split fractions must be nonnegative")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError(
                f"split fractions must sum to 1, got {self.train + self.val + self.test!r}"
            )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    knn_k: int = 5
    tau: float = 0.5
    d_prime: int = 128
    seed: int = 0
    memory_capacity: int | None = None
    exclude_exact: bool = True
    early_stop_patience: int | None = None
    use_memory: bool = True
    initial_gamma: float = 0.99
    adam: AdamConfig = field(default_factory=AdamConfig)
    growth: GrowthConfig = field(default_factory=GrowthConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2 (batch normalization), got {self.batch_size}")
        if self.knn_k < 1:
            raise ValueError(f"knn_k must be >= 1, got {self.knn_k}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0.0 < self.initial_gamma < 1.0:
            raise ValueError(f"initial_gamma must lie in (0, 1), got {self.initial_gamma}")
        if self.d_prime < 1:
            raise ValueError(f"d_prime must be >= 1, got {self.d_prime}")
        if self.memory_capacity is not None and self.memory_capacity < 1:
            raise ValueError("memory_capacity must be >= 1 or null")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1 or null")

    @property
    def initial_gate(self) -> float:
        return math.log(self.initial_gamma / (1.0 - self.initial_gamma))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["growth"]["policy"] = self.growth.policy.value
        d["growth"]["lambda"] = d["growth"].pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return build_config({"train": {k: v for k, v in d.items() if k not in ("adam", "growth")},
                             "adam": d.get("adam", {}), "growth": d.get("growth", {})})[0]


_SECTIONS: dict[str, dict[str, tuple[str, type]]] = {
    # file key -> (dataclass field, expected type)
    "train": {
        "epochs": ("epochs", int), "batch_size": ("batch_size", int), "knn_k": ("knn_k", int),
        "tau": ("tau", float), "d_prime": ("d_prime", int), "seed": ("seed", int),
        "memory_capacity": ("memory_capacity", int), "exclude_exact": ("exclude_exact", bool),
        "early_stop_patience": ("early_stop_patience", int), "use_memory": ("use_memory", bool),
        "initial_gamma": ("initial_gamma", float),
    },
    "adam": {"alpha": ("alpha", float), "beta1": ("beta1", float), "beta2": ("beta2", float),
             "eps": ("eps", float)},
    "growth": {
        "policy": ("policy", str), "interval": ("interval", int), "epsilon": ("epsilon", float),
        "lambda": ("lam", float), "grow_count": ("grow_count", int), "max_blocks": ("max_blocks", int),
        "initial_blocks": ("initial_blocks", int), "enabled": ("enabled", bool),
    },
    "split": {"train": ("train", float), "val": ("val", float), "test": ("test", float),
              "seed": ("seed", int)},
}
_NULLABLE = {"train.memory_capacity", "train.early_stop_patience"}


def _coerce(path: str, value: Any, typ: type) -> Any:
    if value is None:
        if path in _NULLABLE:
            return None
        raise ConfigError(path, "must not be null")
    if typ is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(path, f"expected a boolean, got {value!r}")
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(path, f"expected a string, got {value!r}")
    return value


def _section_kwargs(raw: dict, section: str) -> dict:
    body = raw.get(section) or {}
    if not isinstance(body, dict):
        raise ConfigError(section, "expected a mapping")
    out = {}
    for key, value in body.items():
        path = f"{section}.{key}"
        if key not in _SECTIONS[section]:
            raise ConfigError(path, "unknown key")
        name, typ = _SECTIONS[section][key]
        out[name] = _coerce(path, value, typ)
    return out


def _construct(cls, section: str, kwargs: dict):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        # map the message back onto the first key it names, if any
        inv = {name: key for key, (name, _) in _SECTIONS[section].items()}
        msg = str(exc)
        for name, key in inv.items():
            if msg.startswith(name + " "):
                raise ConfigError(f"{section}.{key}", msg) from None
        raise ConfigError(section, msg) from None


def build_config(raw: dict) -> tuple[TrainConfig, SplitSpec]:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    for section in raw:
        if section not in _SECTIONS:
            raise ConfigError(str(section), "unknown section")
    adam_kw = _section_kwargs(raw, "adam")
    growth_kw = _section_kwargs(raw, "growth")
    if "policy" in growth_kw:
        try:
            growth_kw["policy"] = GrowthPolicy(growth_kw["policy"])
        except ValueError:
            choices = ", ".join(p.value for p in GrowthPolicy)
            raise ConfigError("growth.policy", f"must be one of {choices}") from None
    adam = _construct(AdamConfig, "adam", adam_kw)
    growth = _construct(GrowthConfig, "growth", growth_kw)
    train = _construct(TrainConfig, "train", {**_section_kwargs(raw, "train"), "adam": adam, "growth": growth})
    split = _construct(SplitSpec, "split", _section_kwargs(raw, "split"))
    return train, split


def load_config(path: str | Path | None, overrides: dict | None = None) -> tuple[TrainConfig, SplitSpec]:
    """Read the YAML file (if any), apply dotted-key overrides, validate."""
    raw: dict = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"unparseable YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a mapping")
    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        raw.setdefault(section, {})
        if raw[section] is None:
            raw[section] = {}
        raw[section][key] = value
    return build_config(raw)
