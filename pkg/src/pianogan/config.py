"""Flat ``key=value`` run configuration.

Every field has a default, and a fully defaulted config describes the
desk-scale two-stage experiment with deterministic binary neurons. The
resolved config is written next to every run's outputs so a run can be
replayed from that file alone.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from .errors import ConfigurationError
from .pianoroll import DESK_RESOLUTION, END_TO_END_RESOLUTION, FULL_RESOLUTION, Resolution

RESOLUTIONS = {"desk": DESK_RESOLUTION, "full": FULL_RESOLUTION, "end_to_end": END_TO_END_RESOLUTION}
STRATEGIES = ("two_stage", "joint", "end_to_end", "end_to_end_modified")
BN_KINDS = {"dbn": "deterministic", "sbn": "stochastic"}
EPOCH_UNITS = ("generator_steps", "data_passes")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    resolution: str = "desk"
    scale: str = "1/8"
    discriminator: str = "full"
    refiner_channels: int = 0  # 0: 64 scaled like the other networks
    refiner_zero_init: bool = True
    strategy: str = "two_stage"
    bn: str = "dbn"
    estimator: str = "sigmoid_adjusted_st"
    slope_multiplier: float = 1.1
    epoch_unit: str = "generator_steps"
    latent_dim: int = 128
    gp_weight: float = 10.0
    n_critic: int = 5
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    batch_size_stage1: int = 32
    batch_size_default: int = 16
    steps_stage1: int = 2000
    steps_stage2: int = 1000
    reset_critic_moments: bool = False
    corpus: str = "synth"
    synth_samples: int = 500
    synth_seed: int = 0
    out: str = "runs/default"
    log_every: int = 10
    eval_every: int = 500
    eval_samples: int = 64
    checkpoint_every: int = 500
    deterministic: bool = True

    def __post_init__(self):
        if self.resolution not in RESOLUTIONS:
            raise ConfigurationError(f"resolution must be one of {sorted(RESOLUTIONS)}")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {STRATEGIES}")
        if self.bn not in BN_KINDS:
            raise ConfigurationError(f"bn must be one of {sorted(BN_KINDS)}")
        if self.estimator not in ("sigmoid_adjusted_st", "st"):
            raise ConfigurationError("estimator must be sigmoid_adjusted_st or st")
        if self.discriminator not in ("full", "ablated_I", "ablated_II"):
            raise ConfigurationError("discriminator must be full, ablated_I or ablated_II")
        if self.epoch_unit not in EPOCH_UNITS:
            raise ConfigurationError(f"epoch_unit must be one of {EPOCH_UNITS}")
        if self.scale_fraction <= 0:
            raise ConfigurationError("scale must be positive")
        for name in ("n_critic", "batch_size_stage1", "batch_size_default", "steps_stage1", "steps_stage2",
                     "latent_dim", "synth_samples", "log_every", "eval_every", "eval_samples",
                     "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.strategy == "end_to_end_modified" and self.refiner_channels > 0:
            raise ConfigurationError("end_to_end_modified has no refiner; refiner_channels must stay 0")
        if self.refiner_channels < 0:
            raise ConfigurationError("refiner_channels must be >= 0")
        if self.gp_weight < 0 or self.lr <= 0 or self.slope_multiplier <= 0:
            raise ConfigurationError("gp_weight must be >= 0; lr and slope_multiplier > 0")

    @property
    def scale_fraction(self) -> Fraction:
        try:
            return Fraction(self.scale)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigurationError(f"bad scale {self.scale!r}") from exc

    @property
    def bn_kind(self) -> str:
        return BN_KINDS[self.bn]

    @property
    def res(self) -> Resolution:
        if self.strategy == "end_to_end_modified" and self.resolution == "full":
            return END_TO_END_RESOLUTION
        return RESOLUTIONS[self.resolution]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        return "".join(f"{k}={_render(v)}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_mapping(cls, values: Mapping[str, object], base: "RunConfig | None" = None) -> "RunConfig":
        base = base if base is not None else cls()
        known = {f.name: f for f in fields(cls)}
        changes = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key == "network":
                changes.update(parse_network(str(raw)))
                continue
            if key not in known:
                raise ConfigurationError(f"unknown config key {key!r}")
            changes[key] = _coerce(known[key], raw)
        return dataclasses.replace(base, **changes)

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        values = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"config line {n}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        return cls.from_mapping(values, base)

    @classmethod
    def from_file(cls, path, base: "RunConfig | None" = None) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, base)


def parse_network(value: str) -> dict:
    """``full``, ``scaled(k)``, ``ablated_I`` or ``ablated_II``."""
    value = value.strip()
    if value == "full":
        return {"scale": "1", "discriminator": "full"}
    if value in ("ablated_I", "ablated_II"):
        return {"discriminator": value}
    match = re.fullmatch(r"scaled\((.+)\)", value)
    if match:
        return {"scale": match.group(1).strip()}
    raise ConfigurationError(f"unknown network preset {value!r}")


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(f: dataclasses.Field, raw):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "bool":
            if isinstance(raw, bool):
                return raw
            text = str(raw).lower()
            if text not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return text in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return str(raw)
    except ValueError as exc:
        raise ConfigurationError(f"bad value {raw!r} for {f.name}") from exc


__all__ = ["BN_KINDS", "EPOCH_UNITS", "RESOLUTIONS", "RunConfig", "STRATEGIES", "parse_network"]
