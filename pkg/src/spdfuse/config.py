"""Run configuration: flat key = value files with optional [section]
headers. Every key is required and unknown keys are hard errors, so typos
surface immediately instead of silently training with defaults.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

_SECTION_RE = re.compile(r"^\[[A-Za-z0-9_.-]+\]$")

_INT_KEYS = ("patch_size", "stride", "pad", "image_size", "depth", "epochs", "seed")
_FLOAT_KEYS = ("reeig_eps", "cov_eps", "lr_stiefel", "lr_conv", "alpha", "beta", "gamma")
_STR_KEYS = ("feature_bank", "ir_dir", "vi_dir", "out_dir")
ALL_KEYS = _INT_KEYS + _FLOAT_KEYS + _STR_KEYS


@dataclass(frozen=True)
class RunConfig:
    patch_size: int
    stride: int
    pad: int
    image_size: int
    reeig_eps: float
    cov_eps: float
    depth: int
    lr_stiefel: float
    lr_conv: float
    alpha: float
    beta: float
    gamma: float
    epochs: int
    seed: int
    feature_bank: str
    ir_dir: str
    vi_dir: str
    out_dir: str


def _validate(cfg: RunConfig) -> RunConfig:
    if cfg.patch_size <= 0 or cfg.stride <= 0 or cfg.pad < 0:
        raise ConfigError("patch_size and stride must be positive, pad nonnegative")
    if cfg.stride > cfg.patch_size:
        raise ConfigError(f"stride {cfg.stride} exceeds patch_size {cfg.patch_size}")
    if cfg.image_size <= 0:
        raise ConfigError(f"image_size must be positive, got {cfg.image_size}")
    if cfg.depth < 1:
        raise ConfigError(f"depth must be at least 1, got {cfg.depth}")
    if cfg.reeig_eps <= 0 or cfg.cov_eps < 0:
        raise ConfigError("reeig_eps must be positive and cov_eps nonnegative")
    if cfg.lr_stiefel <= 0 or cfg.lr_conv <= 0:
        raise ConfigError("learning rates must be positive")
    if min(cfg.alpha, cfg.beta, cfg.gamma) < 0:
        raise ConfigError("loss weights must be nonnegative")
    if cfg.epochs < 0:
        raise ConfigError(f"epochs must be nonnegative, got {cfg.epochs}")
    if cfg.feature_bank != "default":
        raise ConfigError(f"unknown feature_bank {cfg.feature_bank!r}")
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    values: dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if _SECTION_RE.match(line):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in ALL_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
        values[key] = value

    for key in ALL_KEYS:
        if key not in values:
            raise ConfigError(f"{path}: missing config key {key!r}")

    parsed: dict = {}
    for key in ALL_KEYS:
        text_value = values[key]
        try:
            if key in _INT_KEYS:
                parsed[key] = int(text_value)
            elif key in _FLOAT_KEYS:
                parsed[key] = float(text_value)
            else:
                parsed[key] = text_value
        except ValueError as exc:
            raise ConfigError(f"{path}: key {key!r} has bad value {text_value!r}") from exc
    return _validate(RunConfig(**parsed))


def write_config(cfg: RunConfig, path) -> None:
    lines = ["[run]"]
    for key in ALL_KEYS:
        lines.append(f"{key} = {getattr(cfg, key)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
