"""Training configuration and the flat key-value config format.

Config files are plain text, one ``key = value`` per line, ``#`` comments.
Every key has a default, so a minimal style-transfer config is one line per
dataset path. Environment variables named ``STYLEGATE_<KEY>`` override file
values, and explicit CLI ``--set key=value`` pairs take final precedence.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

from .errors import ConfigError

ENV_PREFIX = "STYLEGATE_"

MODE_STYLE = "style_transfer"
MODE_TEXTURE = "texture_synthesis"


def default_scale_size(image_size: int) -> int:
    # training pipeline upscales by 143/128 before the random crop
    return round(image_size * 143 / 128)


@dataclass
class TrainConfig:
    """Semantic training settings; filesystem paths live in RunConfig."""

    learning_rate: float = 2e-4
    batch_size: int = 1
    k_d: int = 1
    k_g: int = 1
    iterations: int = 5000
    image_size: int = 32
    scale_size: int = 0  # 0 means derive from image_size
    lambda_cls: float = 1.0
    lambda_tv: float = 1e-6
    lambda_r: float = 10.0
    seed: int = 0
    style_count: int = 0  # 0 means take it from the dataset
    width_scale: float = 1.0
    branch_depth: int = 1
    mode: str = MODE_STYLE
    log_interval: int = 100
    checkpoint_interval: int = 0  # 0 means final checkpoint only

    def __post_init__(self):
        if self.scale_size == 0:
            self.scale_size = default_scale_size(self.image_size)
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.k_d < 1 or self.k_g < 1:
            raise ConfigError(f"k_d and k_g must be >= 1, got {self.k_d}, {self.k_g}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.image_size % 4:
            raise ConfigError(f"image_size must be divisible by 4, got {self.image_size}")
        if self.scale_size <= self.image_size:
            raise ConfigError(
                f"scale_size must exceed image_size, got {self.scale_size} <= {self.image_size}")
        if self.mode not in (MODE_STYLE, MODE_TEXTURE):
            raise ConfigError(f"mode must be {MODE_STYLE} or {MODE_TEXTURE}, got '{self.mode}'")
        if self.branch_depth not in (1, 2):
            raise ConfigError(f"branch_depth must be 1 or 2, got {self.branch_depth}")
        if self.log_interval < 1:
            raise ConfigError(f"log_interval must be >= 1, got {self.log_interval}")
        if self.width_scale <= 0:
            raise ConfigError(f"width_scale must be > 0, got {self.width_scale}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunConfig:
    """A TrainConfig plus the filesystem wiring around it."""

    train: TrainConfig
    content_dir: str = ""
    style_dirs: list[str] = field(default_factory=list)
    style_names: list[str] = field(default_factory=list)
    out_dir: str = "runs/out"


_PATH_KEYS = {"content_dir", "style_dirs", "style_names", "out_dir"}


def _train_field_types() -> dict[str, type]:
    return {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, raw: str):
    kinds = {
        "learning_rate": float, "lambda_cls": float, "lambda_tv": float,
        "lambda_r": float, "width_scale": float,
        "batch_size": int, "k_d": int, "k_g": int, "iterations": int,
        "image_size": int, "scale_size": int, "seed": int, "style_count": int,
        "branch_depth": int, "log_interval": int, "checkpoint_interval": int,
        "mode": str,
    }
    try:
        return kinds[key](raw)
    except ValueError as e:
        raise ConfigError(f"config key '{key}': cannot parse '{raw}': {e}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat key-value lines -> dict of raw strings."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got '{stripped}'")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_run_config(path: str | os.PathLike, env: dict | None = None,
                    overrides: dict[str, str] | None = None) -> RunConfig:
    """Read a config file, apply env overrides, then explicit overrides."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            kv = parse_config_text(fh.read(), source=str(path))
    except OSError as e:
        raise ConfigError(f"cannot read config file '{path}': {e}") from None

    env = dict(os.environ) if env is None else env
    all_keys = set(_train_field_types()) | _PATH_KEYS
    for key in sorted(all_keys):
        env_name = ENV_PREFIX + key.upper()
        if env_name in env:
            kv[key] = env[env_name]
    if overrides:
        kv.update(overrides)

    unknown = set(kv) - all_keys
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    train_kwargs = {}
    for key, raw in kv.items():
        if key in _PATH_KEYS:
            continue
        train_kwargs[key] = _coerce(key, raw)
    run = RunConfig(train=TrainConfig(**train_kwargs))
    if "content_dir" in kv:
        run.content_dir = kv["content_dir"]
    if "style_dirs" in kv:
        run.style_dirs = [s.strip() for s in kv["style_dirs"].split(",") if s.strip()]
    if "style_names" in kv:
        run.style_names = [s.strip() for s in kv["style_names"].split(",") if s.strip()]
    if "out_dir" in kv:
        run.out_dir = kv["out_dir"]
    return run
