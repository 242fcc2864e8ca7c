"""Flat ``key = value`` run configuration with typed, range-checked keys."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    image_size: int = 64
    n_source: int = 200
    n_target: int = 200
    n_eval: int = 50
    channels: int = 16
    reduced_channels: int = 4
    num_classes: int = 5
    lambda_s: float = 1.0
    lambda_t: float = 1.0
    xi_s: float = 1.0
    xi_t: float = 1.0
    lambda_adv: float = 0.001
    lr_seg: float = 2.5e-4
    lr_attn: float = 1e-4
    lr_disc: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    poly_power: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    iterations: int = 2000
    pseudo_threshold: float = 0.9
    pseudo_rounds: int = 1
    pseudo_start: float = 0.5
    use_pseudo_labels: bool = True
    enable_cdsam: bool = True
    enable_cdcam: bool = True
    shared_qk: bool = False
    disc_width: float = 1.0
    seg_weights: str = "1,1,1,1,1,1"
    data_dir: str = "data"
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.seed >= 0, "seed must be a non-negative integer")
        need(self.image_size >= 8 and self.image_size % 8 == 0, "image_size must be a positive multiple of 8")
        for key in ("n_source", "n_target", "n_eval", "iterations", "pseudo_rounds"):
            need(getattr(self, key) >= 0, f"{key} must be >= 0")
        need(self.channels >= 1, "channels must be >= 1")
        need(1 <= self.reduced_channels <= self.channels, "reduced_channels must be in [1, channels]")
        need(self.num_classes == 5, "num_classes is fixed at 5 for the synthetic benchmark")
        for key in ("lambda_s", "lambda_t", "xi_s", "xi_t", "lambda_adv", "lr_seg", "lr_attn",
                    "lr_disc", "weight_decay", "poly_power"):
            need(getattr(self, key) >= 0, f"{key} must be >= 0")
        for key in ("momentum", "adam_beta1", "adam_beta2"):
            need(0 <= getattr(self, key) < 1, f"{key} must be in [0, 1)")
        need(0 < self.pseudo_threshold <= 1, "pseudo_threshold must be in (0, 1]")
        need(0 <= self.pseudo_start <= 1, "pseudo_start must be in [0, 1]")
        need(self.disc_width > 0, "disc_width must be > 0")
        try:
            w = self.seg_weight_list
        except ValueError:
            raise ConfigError("seg_weights must be six comma-separated numbers") from None
        need(len(w) == 6 and all(v >= 0 for v in w), "seg_weights must be six non-negative numbers")

    @property
    def seg_weight_list(self) -> tuple:
        return tuple(float(v) for v in self.seg_weights.split(","))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str) -> Any:
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    base = base or RunConfig()
    return dataclasses.replace(base, **values)


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(path: str, cfg: RunConfig) -> None:
    with open(path, "w") as fh:
        fh.write(cfg.dumps())
