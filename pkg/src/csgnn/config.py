"""Flat key-value text configs: `key = value` lines, '#' comments.

One format serves coefficient sets, training hyperparameters, and run options,
so runs stay diffable. Values are parsed as int, then float, then bool, then
kept as strings.
"""

from __future__ import annotations

from pathlib import Path

from .dynamics import Parameterization
from .training import TrainConfig


def parse_value(raw: str):
    raw = raw.strip()
    for caster in (int, float):
        try:
            return caster(raw)
        except ValueError:
            pass
    if raw.lower() in ("true", "yes"):
        return True
    if raw.lower() in ("false", "no"):
        return False
    return raw


def loads(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        out[key.strip()] = parse_value(raw)
    return out


def dumps(values: dict) -> str:
    lines = []
    for key, val in values.items():
        if isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def load_file(path) -> dict:
    return loads(Path(path).read_text())


def apply_overrides(values: dict, overrides: list) -> dict:
    out = dict(values)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        out[key.strip()] = parse_value(raw)
    return out


_TRAIN_KEYS = {
    "epochs": int, "lr_embed": float, "lr_node": float, "lr_adj": float,
    "wd_embed": float, "wd_node": float, "wd_adj": float, "dropout_p": float,
    "hidden_dim": int, "num_layers": int, "h": float, "alpha": float,
    "leaky_slope": float, "share_weights": bool, "patience": int, "seed": int,
}


def train_config_from(values: dict) -> TrainConfig:
    kwargs = {}
    for key, caster in _TRAIN_KEYS.items():
        if key in values:
            kwargs[key] = caster(values[key])
    if "parameterization" in values:
        kwargs["parameterization"] = Parameterization(str(values["parameterization"]))
    return TrainConfig(**kwargs)
