"""Declarative pyramid-grid configuration and named presets."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configurations."""


class DetectorPreset(str, Enum):
    RETINANET = "retinanet"
    RCNN = "rcnn"


class SameUpKind(str, Enum):
    CONV3_S2 = "conv3_s2"
    MAXPOOL2 = "maxpool2"
    AVGPOOL2 = "avgpool2"


class AcrossSkipKind(str, Enum):
    CONV1 = "conv1"
    IDENTITY = "identity"


class AcrossDownKind(str, Enum):
    INTP = "intp"
    INTP_K1 = "intp_k1"
    INTP_K3 = "intp_k3"


PRESET_LEVELS = {
    DetectorPreset.RETINANET: (3, 7),
    DetectorPreset.RCNN: (2, 6),
}

_ENUM_FIELDS = {
    "same_up_kind": SameUpKind,
    "across_skip_kind": AcrossSkipKind,
    "across_down_kind": AcrossDownKind,
    "detector_preset": DetectorPreset,
}


@dataclass(frozen=True)
class ArchConfig:
    """A pyramid grid of ``num_pathways`` pathways of ``width`` channels.

    Pathway 1 is the 1x1 projection of the backbone; pathways 2..p are the
    fused pathways.  A conventional ``p@w`` label therefore corresponds to
    ``num_pathways = p + 1`` (see :func:`fpg_config`).

    ``min_level``/``max_level`` default to the detector preset's range.
    """

    num_pathways: int = 10
    width: int = 256
    min_level: int | None = None
    max_level: int | None = None
    beta: Fraction = Fraction(1, 8)
    across_down: bool = True
    across_up: bool = True
    same_up: bool = True
    across_skip: bool = True
    contraction: bool = False
    same_up_kind: SameUpKind = SameUpKind.CONV3_S2
    across_skip_kind: AcrossSkipKind = AcrossSkipKind.CONV1
    across_down_kind: AcrossDownKind = AcrossDownKind.INTP_K3
    detector_preset: DetectorPreset = DetectorPreset.RETINANET

    def __post_init__(self):
        for name, enum_cls in _ENUM_FIELDS.items():
            value = getattr(self, name)
            if not isinstance(value, enum_cls):
                try:
                    object.__setattr__(self, name, enum_cls(value))
                except ValueError:
                    choices = ", ".join(e.value for e in enum_cls)
                    raise ConfigError(f"{name}={value!r} not one of: {choices}") from None
        lo, hi = PRESET_LEVELS[self.detector_preset]
        if self.min_level is None:
            object.__setattr__(self, "min_level", lo)
        if self.max_level is None:
            object.__setattr__(self, "max_level", hi)
        if not isinstance(self.beta, Fraction):
            try:
                object.__setattr__(self, "beta", Fraction(self.beta))
            except (TypeError, ValueError):
                raise ConfigError(f"beta={self.beta!r} is not a rational number") from None
        for name in ("num_pathways", "width", "min_level", "max_level"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        for name in ("across_down", "across_up", "same_up", "across_skip", "contraction"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be a boolean")
        if self.num_pathways < 1:
            raise ConfigError(f"num_pathways must be >= 1, got {self.num_pathways}")
        if self.width < 1:
            raise ConfigError(f"width must be >= 1, got {self.width}")
        if not 2 <= self.min_level < self.max_level <= 7:
            raise ConfigError(
                f"invalid level range {self.min_level}..{self.max_level} "
                "(need 2 <= min_level < max_level <= 7)"
            )
        if self.beta <= 0:
            raise ConfigError("beta must be positive")

    @property
    def levels(self) -> range:
        return range(self.min_level, self.max_level + 1)

    @property
    def num_levels(self) -> int:
        return self.max_level - self.min_level + 1

    @property
    def label(self) -> str:
        return f"{self.num_pathways - 1}@{self.width}"

    def replace(self, **changes) -> ArchConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, Fraction):
                value = str(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ArchConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> ArchConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    return ArchConfig.from_dict(data)


def dump_config(config: ArchConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"


def fpg_config(pathways: int, width: int, preset: DetectorPreset | str = "retinanet",
               **overrides) -> ArchConfig:
    """Default (contracted, no AcrossUp) FPG for a ``pathways@width`` label."""
    fields = dict(
        num_pathways=pathways + 1,
        width=width,
        across_up=False,
        contraction=True,
        detector_preset=DetectorPreset(preset),
    )
    fields.update(overrides)
    return ArchConfig(**fields)


ABLATIONS = ("full", "no_AD", "no_AU", "no_SU", "no_AS", "contracted")


def ablation_preset(name: str) -> ArchConfig:
    """RetinaNet 9@256 config for a row of the component ablation."""
    base = ArchConfig(num_pathways=10, width=256)
    if name == "full":
        return base
    if name == "no_AD":
        return base.replace(across_down=False)
    if name == "no_AU":
        return base.replace(across_up=False)
    if name == "no_SU":
        return base.replace(same_up=False)
    if name == "no_AS":
        return base.replace(across_skip=False)
    if name == "contracted":
        return base.replace(across_up=False, contraction=True)
    raise ConfigError(f"unknown ablation preset {name!r}; choose from {', '.join(ABLATIONS)}")
