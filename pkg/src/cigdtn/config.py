"""Flat ``key=value`` run configuration.

Unknown keys and out-of-range values are rejected when the file is parsed.
``#`` starts a comment. Example::

    # toy run
    image_side=32
    patch_size=8
    learning_rate=1e-3
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .dsp import StftConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in out:
            raise ConfigError(f"line {lineno}: duplicate key {k!r}")
        out[k] = v
    return out


def format_kv(values: Mapping[str, Any]) -> str:
    def fmt(v):
        if isinstance(v, (tuple, list)):
            return ",".join(str(x) for x in v)
        if isinstance(v, float):
            return repr(v)
        return "none" if v is None else str(v)

    return "".join(f"{k}={fmt(v)}\n" for k, v in values.items())


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _opt(conv: Callable) -> Callable:
    return lambda s: None if s.lower() == "none" else conv(s)


def sub_seed(seed: int, name: str) -> int:
    """Independent, reproducible seed for a named random stream."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]).generate_state(1)[0])


_MODEL_KEYS = {
    "image_side": int, "patch_size": int, "hidden_dim": int, "depth": int, "heads": int,
    "mlp_ratio": int, "conditioning_dim": int, "window_radius": int, "global_tokens": _int_list,
    "random_links": int, "teleport": float, "diffusion_steps": int, "ln_eps": float,
}
_STFT_KEYS = {"window_length": int, "fft_size": int, "hop": _opt(int)}
_TRAIN_KEYS = {
    "learning_rate": float, "batch_size": int, "iterations": int, "max_steps": _opt(int),
    "weight_decay": float, "beta1": float, "beta2": float, "adam_eps": float,
    "clip_norm": _opt(float), "loss_blend": float,
}
_OTHER_KEYS = {"seed": int, "sample_rate": int, "data": str, "out": str, "trace": _opt(str)}
KEYS = {**_MODEL_KEYS, **_STFT_KEYS, **_TRAIN_KEYS, **_OTHER_KEYS}


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        raw = parse_kv(text)
        unknown = sorted(set(raw) - set(KEYS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        vals = {}
        for k, v in raw.items():
            try:
                vals[k] = KEYS[k](v)
            except ValueError as e:
                raise ConfigError(f"{k}: cannot parse {v!r} ({e})") from None
        rc = cls(vals)
        rc.validate()
        return rc

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    @property
    def seed(self) -> int:
        return int(self.values.get("seed", 0))

    @property
    def sample_rate(self) -> int:
        return int(self.values.get("sample_rate", 16000))

    def model_config(self) -> ModelConfig:
        kw = {k: v for k, v in self.values.items() if k in _MODEL_KEYS}
        kw["pattern_seed"] = sub_seed(self.seed, "pattern")
        return ModelConfig(**kw)

    def stft_config(self) -> StftConfig:
        return StftConfig(**{k: v for k, v in self.values.items() if k in _STFT_KEYS})

    def train_config(self) -> TrainConfig:
        kw = {k: v for k, v in self.values.items() if k in _TRAIN_KEYS}
        kw["seed"] = sub_seed(self.seed, "init")
        return TrainConfig(**kw)

    def validate(self) -> None:
        """Build every sub-config once so range errors surface at startup."""
        try:
            self.model_config()
            self.stft_config()
            self.train_config()
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        for k in ("sample_rate",):
            if k in self.values and self.values[k] <= 0:
                raise ConfigError(f"{k} must be positive")
        if not 0.0 < self.values.get("beta1", 0.9) < 1.0 or not 0.0 < self.values.get("beta2", 0.999) < 1.0:
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.values.get("adam_eps", 1e-8) <= 0 or self.values.get("weight_decay", 0.0) < 0:
            raise ConfigError("adam_eps must be positive and weight_decay non-negative")
