"""Typed pyramid-grid graphs: builders for FPG and FPN, and a validator."""

from __future__ import annotations

import graphlib
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

from .backbone import RESNET50, BackboneSpec
from .config import (
    AcrossDownKind,
    AcrossSkipKind,
    ArchConfig,
    ConfigError,
    DetectorPreset,
    PRESET_LEVELS,
    SameUpKind,
)


class EdgeKind(str, Enum):
    BACKBONE_LATERAL = "BackboneLateral"
    SAME_UP = "SameUp"
    SAME_DOWN = "SameDown"
    ACROSS_SAME = "AcrossSame"
    ACROSS_UP = "AcrossUp"
    ACROSS_DOWN = "AcrossDown"
    ACROSS_SKIP = "AcrossSkip"
    OUTPUT_CONV = "OutputConv"

    @property
    def order(self) -> int:
        return _KIND_ORDER[self]


_KIND_ORDER = {kind: i for i, kind in enumerate(EdgeKind)}

# level offset of the source relative to the destination
_ACROSS_OFFSETS = {
    EdgeKind.ACROSS_SAME: 0,
    EdgeKind.ACROSS_UP: -1,
    EdgeKind.ACROSS_DOWN: +1,
}

STEP_OPS = ("relu", "conv", "bn", "nearest_up2", "maxpool2", "avgpool2", "identity")


@dataclass(frozen=True)
class Step:
    op: str
    kernel: int = 0
    stride: int = 1
    bias: bool = False

    def __post_init__(self):
        if self.op not in STEP_OPS:
            raise ValueError(f"unknown step op {self.op!r}")
        if self.op == "conv":
            if self.kernel < 1 or self.kernel % 2 == 0:
                raise ValueError("conv kernel must be a positive odd integer")
            if self.stride not in (1, 2):
                raise ValueError("conv stride must be 1 or 2")

    def __str__(self) -> str:
        if self.op == "conv":
            return f"conv{self.kernel}" + (f"s{self.stride}" if self.stride != 1 else "")
        return self.op

    def to_dict(self) -> dict:
        if self.op == "conv":
            return {"op": "conv", "kernel": self.kernel, "stride": self.stride, "bias": self.bias}
        return {"op": self.op}

    @classmethod
    def from_dict(cls, data: dict) -> Step:
        return cls(**data)


def conv(kernel: int, stride: int = 1) -> Step:
    return Step("conv", kernel, stride, bias=True)


RELU = Step("relu")
BN = Step("bn")
NEAREST_UP2 = Step("nearest_up2")
MAXPOOL2 = Step("maxpool2")
AVGPOOL2 = Step("avgpool2")
IDENTITY = Step("identity")


@dataclass(frozen=True)
class OperatorSpec:
    composition: tuple[Step, ...]
    in_channels: int
    out_channels: int

    @property
    def has_conv(self) -> bool:
        return any(s.op == "conv" for s in self.composition)

    @property
    def has_bn(self) -> bool:
        return any(s.op == "bn" for s in self.composition)

    def describe(self) -> str:
        return "-".join(str(s) for s in self.composition)

    def to_dict(self) -> dict:
        return {
            "composition": [s.to_dict() for s in self.composition],
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
        }

    @classmethod
    def from_dict(cls, data: dict) -> OperatorSpec:
        return cls(
            tuple(Step.from_dict(s) for s in data["composition"]),
            data["in_channels"],
            data["out_channels"],
        )


def conv_block(kernel: int, stride: int, cin: int, cout: int) -> OperatorSpec:
    """ReLU -> Conv -> BN connection block."""
    return OperatorSpec((RELU, conv(kernel, stride), BN), cin, cout)


def plain_conv(kernel: int, stride: int, cin: int, cout: int, *, pre_relu: bool = False) -> OperatorSpec:
    steps = (RELU, conv(kernel, stride)) if pre_relu else (conv(kernel, stride),)
    return OperatorSpec(steps, cin, cout)


def parameter_free(step: Step, channels: int) -> OperatorSpec:
    return OperatorSpec((step,), channels, channels)


_ROLE_ORDER = {"backbone": 0, "pyramid": 1, "output": 2}


@dataclass(frozen=True)
class NodeRef:
    pathway: int
    level: int
    channels: int
    role: str

    def __post_init__(self):
        if self.role not in _ROLE_ORDER:
            raise ValueError(f"unknown node role {self.role!r}")

    @property
    def id(self) -> str:
        if self.role == "backbone":
            return f"C{self.level}"
        if self.role == "output":
            return f"O{self.level}"
        return f"P{self.level}^{self.pathway}"

    @property
    def sort_key(self) -> tuple:
        return (_ROLE_ORDER[self.role], self.pathway, self.level)

    def to_dict(self) -> dict:
        return {"pathway": self.pathway, "level": self.level,
                "channels": self.channels, "role": self.role}


@dataclass(frozen=True)
class Edge:
    src: NodeRef
    dst: NodeRef
    kind: EdgeKind
    op: OperatorSpec

    @property
    def id(self) -> str:
        return f"{self.kind.value}:{self.src.id}->{self.dst.id}"

    @property
    def fusion_key(self) -> tuple:
        return (self.kind.order, self.src.pathway, self.src.level)

    def to_dict(self) -> dict:
        return {"src": self.src.id, "dst": self.dst.id, "kind": self.kind.value,
                "op": self.op.to_dict()}


@dataclass(frozen=True)
class ArchGraph:
    """Immutable pyramid graph. ``outputs`` are ordered by level."""

    nodes: tuple[NodeRef, ...]
    edges: tuple[Edge, ...]
    outputs: tuple[NodeRef, ...]
    config: ArchConfig
    family: str = "fpg"

    @cached_property
    def node_map(self) -> dict[str, NodeRef]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def _incoming(self) -> dict[str, tuple[Edge, ...]]:
        groups: dict[str, list[Edge]] = defaultdict(list)
        for e in self.edges:
            groups[e.dst.id].append(e)
        return {k: tuple(sorted(v, key=lambda e: e.fusion_key)) for k, v in groups.items()}

    def incoming(self, node: NodeRef | str) -> tuple[Edge, ...]:
        """Incoming edges in canonical fusion order."""
        key = node if isinstance(node, str) else node.id
        return self._incoming.get(key, ())

    def schedule(self) -> list[NodeRef]:
        """Deterministic topological order of all nodes."""
        ts: graphlib.TopologicalSorter = graphlib.TopologicalSorter()
        for node in sorted(self.nodes, key=lambda n: n.sort_key):
            ts.add(node.id, *sorted({e.src.id for e in self.incoming(node)}))
        return [self.node_map[i] for i in ts.static_order()]

    def pyramid_nodes(self, pathway: int | None = None) -> list[NodeRef]:
        return [n for n in self.nodes if n.role == "pyramid"
                and (pathway is None or n.pathway == pathway)]

    def edges_of(self, kind: EdgeKind) -> list[Edge]:
        return [e for e in self.edges if e.kind == kind]

    @property
    def backbone_inputs(self) -> list[NodeRef]:
        return sorted((n for n in self.nodes if n.role == "backbone"), key=lambda n: n.level)


# ---------------------------------------------------------------------------
# builders


def _check_backbone(config: ArchConfig, backbone: BackboneSpec) -> None:
    covered = [i for i in config.levels if i <= backbone.top_level]
    if not covered:
        raise ConfigError(
            f"backbone {backbone.name} tops out at level {backbone.top_level}, "
            f"below min_level {config.min_level}"
        )
    missing = [i for i in covered if i not in backbone.levels]
    if missing:
        raise ConfigError(f"backbone {backbone.name} is missing levels {missing}")


def truncated(config: ArchConfig, pathway: int, level: int) -> bool:
    """Whether grid contraction drops node (pathway, level).

    The lower triangle below the anti-diagonal of the first fused pathways is
    removed: pathway 2 keeps only the top level, each later pathway keeps one
    more, and the top level is never truncated.
    """
    if not config.contraction or pathway < 2:
        return False
    offset = level - config.min_level
    return offset + (pathway - 2) <= config.num_levels - 2


def _same_up_op(config: ArchConfig) -> OperatorSpec:
    w = config.width
    if config.same_up_kind is SameUpKind.CONV3_S2:
        return conv_block(3, 2, w, w)
    if config.same_up_kind is SameUpKind.MAXPOOL2:
        return parameter_free(MAXPOOL2, w)
    return parameter_free(AVGPOOL2, w)


def _across_down_op(config: ArchConfig) -> OperatorSpec:
    w = config.width
    if config.across_down_kind is AcrossDownKind.INTP:
        return parameter_free(NEAREST_UP2, w)
    k = 1 if config.across_down_kind is AcrossDownKind.INTP_K1 else 3
    return OperatorSpec((NEAREST_UP2, RELU, conv(k), BN), w, w)


def _across_skip_op(config: ArchConfig) -> OperatorSpec:
    w = config.width
    if config.across_skip_kind is AcrossSkipKind.IDENTITY:
        return parameter_free(IDENTITY, w)
    return conv_block(1, 1, w, w)


def build_fpg(config: ArchConfig, backbone: BackboneSpec = RESNET50) -> ArchGraph:
    """Build the pyramid grid described by ``config`` on top of ``backbone``."""
    _check_backbone(config, backbone)
    w, p = config.width, config.num_pathways
    levels = config.levels
    top = backbone.top_level

    bb = {i: NodeRef(0, i, backbone.channels(i), "backbone") for i in levels if i <= top}
    grid: dict[tuple[int, int], NodeRef] = {}
    for j in range(1, p + 1):
        for i in levels:
            if not truncated(config, j, i):
                grid[j, i] = NodeRef(j, i, w, "pyramid")

    def effective(j: int, i: int) -> NodeRef:
        # truncated nodes pass the latest earlier pathway's feature through
        while (j, i) not in grid:
            j -= 1
        return grid[j, i]

    edges: list[Edge] = []
    for i in levels:
        dst = grid[1, i]
        if i in bb:
            edges.append(Edge(bb[i], dst, EdgeKind.BACKBONE_LATERAL,
                              plain_conv(1, 1, bb[i].channels, w)))
        else:
            edges.append(Edge(grid[1, i - 1], dst, EdgeKind.SAME_UP, plain_conv(3, 2, w, w)))

    for j in range(2, p + 1):
        for i in levels:
            if (j, i) not in grid:
                continue
            dst = grid[j, i]
            if config.same_up and i > config.min_level:
                edges.append(Edge(effective(j, i - 1), dst, EdgeKind.SAME_UP, _same_up_op(config)))
            edges.append(Edge(effective(j - 1, i), dst, EdgeKind.ACROSS_SAME, conv_block(1, 1, w, w)))
            if config.across_up and i > config.min_level:
                edges.append(Edge(effective(j - 1, i - 1), dst, EdgeKind.ACROSS_UP,
                                  conv_block(3, 2, w, w)))
            if config.across_down and i < config.max_level:
                edges.append(Edge(effective(j - 1, i + 1), dst, EdgeKind.ACROSS_DOWN,
                                  _across_down_op(config)))
            if config.across_skip:
                edges.append(Edge(grid[1, i], dst, EdgeKind.ACROSS_SKIP, _across_skip_op(config)))

    outputs = tuple(NodeRef(p + 1, i, w, "output") for i in levels)
    for out in outputs:
        edges.append(Edge(effective(p, out.level), out, EdgeKind.OUTPUT_CONV, plain_conv(3, 1, w, w)))

    nodes = tuple(bb.values()) + tuple(grid.values()) + outputs
    return ArchGraph(nodes, tuple(edges), outputs, config, "fpg")


def build_fpn(width: int = 256, levels: tuple[int, int] | None = None,
              backbone: BackboneSpec = RESNET50,
              preset: DetectorPreset | str = DetectorPreset.RETINANET) -> ArchGraph:
    """Single top-down FPN baseline.

    RetinaNet-style extra levels take P6 from the top backbone stage with a
    3x3 stride-2 conv and P7 from ReLU(P6); the R-CNN preset subsamples P5
    instead.  Extra levels carry no output conv.
    """
    preset = DetectorPreset(preset)
    lo, hi = levels if levels is not None else PRESET_LEVELS[preset]
    config = ArchConfig(num_pathways=1, width=width, min_level=lo, max_level=hi,
                        across_down=False, across_up=False, same_up=False,
                        across_skip=False, detector_preset=preset)
    _check_backbone(config, backbone)
    top = backbone.top_level
    bb = {i: NodeRef(0, i, backbone.channels(i), "backbone") for i in config.levels if i <= top}
    pyr = {i: NodeRef(1, i, width, "pyramid") for i in config.levels}
    outputs = tuple(NodeRef(2, i, width, "output") for i in config.levels)

    edges: list[Edge] = []
    for i in config.levels:
        dst = pyr[i]
        if i in bb:
            edges.append(Edge(bb[i], dst, EdgeKind.BACKBONE_LATERAL, plain_conv(1, 1, bb[i].channels, width)))
            if i + 1 in bb:
                edges.append(Edge(pyr[i + 1], dst, EdgeKind.SAME_DOWN, parameter_free(NEAREST_UP2, width)))
        elif preset is DetectorPreset.RCNN:
            edges.append(Edge(pyr[i - 1], dst, EdgeKind.SAME_UP, parameter_free(MAXPOOL2, width)))
        elif i - 1 in bb:
            edges.append(Edge(bb[i - 1], dst, EdgeKind.ACROSS_UP, plain_conv(3, 2, bb[i - 1].channels, width)))
        else:
            edges.append(Edge(pyr[i - 1], dst, EdgeKind.SAME_UP, plain_conv(3, 2, width, width, pre_relu=True)))
    for out in outputs:
        op = plain_conv(3, 1, width, width) if out.level in bb else parameter_free(IDENTITY, width)
        edges.append(Edge(pyr[out.level], out, EdgeKind.OUTPUT_CONV, op))

    nodes = tuple(bb.values()) + tuple(pyr.values()) + outputs
    return ArchGraph(nodes, tuple(edges), outputs, config, "fpn")


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Diagnostic:
    code: str
    where: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.where}: {self.message}"


def _composition_problems(op: OperatorSpec) -> list[str]:
    steps = op.composition
    problems = []
    if not steps:
        return ["empty operator composition"]
    convs = [k for k, s in enumerate(steps) if s.op == "conv"]
    if len(convs) > 1:
        problems.append("more than one conv in a block")
    for k, s in enumerate(steps):
        if s.op == "bn" and (k == 0 or steps[k - 1].op != "conv"):
            problems.append("BN must directly follow a conv")
        if s.op == "bn" and (k < 2 or steps[k - 2].op != "relu"):
            problems.append("conv blocks with BN must be ordered ReLU -> Conv -> BN")
    if not convs and op.in_channels != op.out_channels:
        problems.append("parameter-free operator cannot change channel count")
    return problems


def _coordinate_problem(edge: Edge, present: set[tuple[int, int]]) -> str | None:
    s, d, kind = edge.src, edge.dst, edge.kind

    def skipped_over(first: int, last: int, level: int) -> bool:
        # every pathway in (first, last] must be absent at `level`
        return all((j, level) not in present for j in range(first + 1, last + 1))

    if kind is EdgeKind.BACKBONE_LATERAL:
        ok = s.role == "backbone" and d.role == "pyramid" and d.pathway == 1 and s.level == d.level
        want = "(0, i) -> (1, i)"
    elif kind is EdgeKind.SAME_UP:
        ok = (s.role == d.role == "pyramid" and s.level == d.level - 1
              and s.pathway <= d.pathway and skipped_over(s.pathway, d.pathway, s.level))
        want = "(j, i-1) -> (j, i)"
    elif kind is EdgeKind.SAME_DOWN:
        ok = s.role == d.role == "pyramid" and s.pathway == d.pathway and s.level == d.level + 1
        want = "(j, i+1) -> (j, i)"
    elif kind in _ACROSS_OFFSETS:
        ok = (d.role == "pyramid" and s.role in ("pyramid", "backbone")
              and s.level == d.level + _ACROSS_OFFSETS[kind]
              and s.pathway <= d.pathway - 1
              and skipped_over(s.pathway, d.pathway - 1, s.level))
        off = _ACROSS_OFFSETS[kind]
        want = f"(j-1, i{off:+d}) -> (j, i)" if off else "(j-1, i) -> (j, i)"
    elif kind is EdgeKind.ACROSS_SKIP:
        ok = (s.role == d.role == "pyramid" and s.pathway == 1 and d.pathway >= 2
              and s.level == d.level)
        want = "(1, i) -> (j, i), j >= 2"
    else:
        ok = (s.role == "pyramid" and d.role == "output" and s.level == d.level
              and not any(j > s.pathway for j, lvl in present if lvl == s.level))
        want = "(p, i) -> output i"
    if ok:
        return None
    return (f"{kind.value} edge ({s.pathway}, {s.level}) -> ({d.pathway}, {d.level}) "
            f"violates {want}")


def validate(graph: ArchGraph) -> list[Diagnostic]:
    """Check structural invariants; returns an empty list for a sound graph."""
    diags: list[Diagnostic] = []
    ids = [n.id for n in graph.nodes]
    node_map = graph.node_map
    for nid in sorted({i for i in ids if ids.count(i) > 1}):
        diags.append(Diagnostic("duplicate-node", nid, "node listed more than once"))
    edge_ids = [e.id for e in graph.edges]
    for eid in sorted({i for i in edge_ids if edge_ids.count(i) > 1}):
        diags.append(Diagnostic("duplicate-edge", eid, "edge listed more than once"))

    present = {(n.pathway, n.level) for n in graph.nodes if n.role == "pyramid"}
    width = graph.config.width
    for n in graph.nodes:
        if n.role == "pyramid" and n.channels != width:
            diags.append(Diagnostic("channels", n.id, f"pyramid node has {n.channels} channels, expected {width}"))

    for e in graph.edges:
        missing = [x.id for x in (e.src, e.dst) if node_map.get(x.id) != x]
        if missing:
            diags.append(Diagnostic("dangling-edge", e.id, f"unknown endpoint(s) {', '.join(missing)}"))
            continue
        problem = _coordinate_problem(e, present)
        if problem:
            diags.append(Diagnostic("kind-coordinate", e.id, problem))
        if e.op.in_channels != e.src.channels or e.op.out_channels != e.dst.channels:
            diags.append(Diagnostic(
                "channels", e.id,
                f"operator maps {e.op.in_channels}->{e.op.out_channels} but endpoints carry "
                f"{e.src.channels}->{e.dst.channels}"))
        for msg in _composition_problems(e.op):
            diags.append(Diagnostic("operator", e.id, msg))

    indeg: dict[str, int] = defaultdict(int)
    for e in graph.edges:
        indeg[e.dst.id] += 1
    for n in graph.nodes:
        if n.role == "pyramid" and indeg[n.id] < 1:
            diags.append(Diagnostic("in-degree", n.id, "pyramid node has no incoming edge"))
        if n.role == "output":
            inc = graph.incoming(n)
            if len(inc) != 1 or inc[0].kind is not EdgeKind.OUTPUT_CONV:
                diags.append(Diagnostic("in-degree", n.id,
                                        f"output node needs exactly one OutputConv, has {len(inc)} inputs"))
        if n.role == "backbone" and indeg[n.id]:
            diags.append(Diagnostic("in-degree", n.id, "backbone node cannot have inputs"))
    out_ids = {n.id for n in graph.outputs}
    for n in graph.nodes:
        if n.role == "output" and n.id not in out_ids:
            diags.append(Diagnostic("outputs", n.id, "output node missing from outputs list"))

    ts: graphlib.TopologicalSorter = graphlib.TopologicalSorter()
    for n in graph.nodes:
        ts.add(n.id)
    for e in graph.edges:
        ts.add(e.dst.id, e.src.id)
    try:
        ts.prepare()
    except graphlib.CycleError as exc:
        cycle = exc.args[1]
        diags.append(Diagnostic("cycle", " -> ".join(cycle), "graph contains a cycle"))
    return diags
