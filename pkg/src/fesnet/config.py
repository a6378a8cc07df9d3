"""Flat key=value configuration files and their merge with CLI flags.

The effective configuration of every run is echoed to the output
directory in the same format, so feeding it back via --config reproduces
the run exactly.
"""

from __future__ import annotations

from pathlib import Path

from .data import AugmentConfig
from .model import ArchConfig
from .train import TrainConfig

# key -> parser; every recognized config key appears here.
_SCHEMA = {
    "dataset": str,
    "root": str,
    "out": str,
    "checkpoint": str,
    "split": str,
    "aggregate": str,
    "seed": int,
    "epochs": int,
    "batch_size": int,
    "crop_size": int,
    "checkpoint_every": int,
    "eval_every": int,
    "target_width": int,
    "pad_multiple": int,
    "lr0": float,
    "lr_decay": float,
    "channels": str,        # comma-separated block widths
    "pcb_parallel": lambda s: s.lower() in ("1", "true", "yes"),
}

DEFAULTS = {
    "dataset": None,
    "root": None,
    "out": None,
    "checkpoint": None,
    "split": "test",
    "aggregate": "global",
    "seed": 0,
    "epochs": 150,
    "batch_size": 4,
    "crop_size": 320,
    "checkpoint_every": 10,
    "eval_every": 0,
    "target_width": 640,
    "pad_multiple": 16,
    "lr0": 2e-5,
    "lr_decay": 0.90,
    "channels": "16,32,64,128",
    "pcb_parallel": False,
}


class ConfigError(ValueError):
    pass


def read_config(path) -> dict:
    """Parse a flat key=value file; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _SCHEMA[key](val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {val!r}") from exc
    return values


def write_config(path, values: dict) -> None:
    with open(path, "w") as f:
        for key in sorted(values):
            v = values[key]
            if v is None:
                continue
            f.write(f"{key}={v}\n")


def merge(file_values: dict | None, flag_values: dict) -> dict:
    """defaults < config file < explicit CLI flags."""
    merged = dict(DEFAULTS)
    merged.update(file_values or {})
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return merged


def parse_channels(text: str) -> tuple:
    try:
        channels = tuple(int(c) for c in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad channel list {text!r}") from exc
    if not channels or any(c < 1 for c in channels):
        raise ConfigError(f"channel widths must be positive, got {text!r}")
    return channels


def arch_from(values: dict) -> ArchConfig:
    return ArchConfig(pcb_channels=parse_channels(values["channels"]),
                      pcb_parallel=bool(values["pcb_parallel"]))


def train_config_from(values: dict) -> TrainConfig:
    return TrainConfig(
        lr0=values["lr0"],
        lr_decay=values["lr_decay"],
        epochs=values["epochs"],
        batch_size=values["batch_size"],
        crop_size=values["crop_size"],
        seed=values["seed"],
        checkpoint_every=values["checkpoint_every"],
        eval_every=values["eval_every"],
        target_width=values["target_width"],
        pad_multiple=values["pad_multiple"],
        augment=AugmentConfig(),
    )
