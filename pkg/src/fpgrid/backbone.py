"""Backbone stage descriptions (ResNet presets)."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Stage:
    name: str
    level: int
    out_channels: int
    block_count: int
    block_kind: str = "bottleneck"

    @property
    def stride(self) -> int:
        return 2 ** self.level


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    stages: tuple[Stage, ...]
    in_channels: int = 3
    stem_channels: int = 64
    expansion: int = 4

    def __post_init__(self):
        if not self.stages:
            raise ValueError("backbone needs at least one stage")
        for prev, cur in zip(self.stages, self.stages[1:]):
            if cur.stride != 2 * prev.stride:
                raise ValueError(f"stage {cur.name} stride must double that of {prev.name}")
        for stage in self.stages:
            if stage.name != f"C{stage.level}":
                raise ValueError(f"stage {stage.name} does not match level {stage.level}")

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(s.level for s in self.stages)

    @property
    def top_level(self) -> int:
        return self.stages[-1].level

    def channels(self, level: int) -> int:
        for stage in self.stages:
            if stage.level == level:
                return stage.out_channels
        raise KeyError(f"backbone {self.name} has no level {level}")


def _resnet(name: str, blocks: tuple[int, int, int, int]) -> BackboneSpec:
    channels = (256, 512, 1024, 2048)
    stages = tuple(
        Stage(f"C{level}", level, ch, n)
        for level, ch, n in zip((2, 3, 4, 5), channels, blocks)
    )
    return BackboneSpec(name, stages)


RESNET50 = _resnet("resnet50", (3, 4, 6, 3))
RESNET101 = _resnet("resnet101", (3, 4, 23, 3))

BACKBONES = {b.name: b for b in (RESNET50, RESNET101)}


def get_backbone(name: str) -> BackboneSpec:
    try:
        return BACKBONES[name]
    except KeyError:
        raise ValueError(f"unknown backbone {name!r}; choose from {', '.join(BACKBONES)}") from None
