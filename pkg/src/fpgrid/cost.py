"""Analytic FLOP and parameter accounting.

FLOPs are multiply-accumulates.  By default only convolutions contribute;
``count_elementwise=True`` additionally charges one op per output element of
ReLU/BN/pool/upsample steps and per extra operand of a fusion sum.
Parameters are conv weights, conv biases and BN affine pairs.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from .backbone import RESNET50, BackboneSpec
from .config import ArchConfig, ConfigError, DetectorPreset
from .graph import ArchGraph, Edge, OperatorSpec, build_fpg
from .shapes import Shape, ShapeTable, check_input, infer_shapes, step_shapes

COMPONENTS = ("backbone", "pyramid", "head")


@dataclass(frozen=True)
class CostItem:
    name: str
    component: str
    kind: str
    flops: int
    params: int


@dataclass
class CostReport:
    items: list[CostItem] = field(default_factory=list)

    @property
    def flops(self) -> int:
        return sum(i.flops for i in self.items)

    @property
    def params(self) -> int:
        return sum(i.params for i in self.items)

    def subtotal(self, component: str) -> tuple[int, int]:
        sel = [i for i in self.items if i.component == component]
        return sum(i.flops for i in sel), sum(i.params for i in sel)

    def by_kind(self) -> dict[str, tuple[int, int]]:
        out: dict[str, list[int]] = defaultdict(lambda: [0, 0])
        for i in self.items:
            out[i.kind][0] += i.flops
            out[i.kind][1] += i.params
        return {k: (v[0], v[1]) for k, v in out.items()}

    def __add__(self, other: CostReport) -> CostReport:
        return CostReport(self.items + other.items)


def conv_cost(kernel: int, cin: int, cout: int, out_h: int, out_w: int, *,
              bias: bool, bn: bool) -> tuple[int, int]:
    flops = kernel * kernel * cin * cout * out_h * out_w
    params = kernel * kernel * cin * cout + (cout if bias else 0) + (2 * cout if bn else 0)
    return flops, params


def op_cost(op: OperatorSpec, src_shape: Shape, *, count_elementwise: bool = False) -> tuple[int, int]:
    flops = params = 0
    shape = src_shape
    for step, out in zip(op.composition, step_shapes(op, src_shape)):
        c, h, w = out
        if step.op == "conv":
            f, prm = conv_cost(step.kernel, shape[0], c, h, w, bias=step.bias, bn=False)
            flops += f
            params += prm
        elif step.op == "bn":
            params += 2 * c
            if count_elementwise:
                flops += c * h * w
        elif step.op != "identity" and count_elementwise:
            flops += c * h * w
        shape = out
    return flops, params


def edge_cost(edge: Edge, shapes: ShapeTable, *, count_elementwise: bool = False) -> tuple[int, int]:
    if edge.src.id not in shapes or edge.dst.id not in shapes:
        raise KeyError(f"no shape for an endpoint of {edge.id}")
    return op_cost(edge.op, shapes[edge.src.id], count_elementwise=count_elementwise)


def graph_cost(graph: ArchGraph, hw: tuple[int, int], *,
               count_elementwise: bool = False) -> CostReport:
    """Pyramid-only cost of every edge (and fusion sums when enabled)."""
    shapes = infer_shapes(graph, hw)
    report = CostReport()
    for e in graph.edges:
        f, p = edge_cost(e, shapes, count_elementwise=count_elementwise)
        report.items.append(CostItem(e.id, "pyramid", e.kind.value, f, p))
    if count_elementwise:
        for n in graph.nodes:
            k = len(graph.incoming(n))
            if k > 1:
                c, h, w = shapes[n.id]
                report.items.append(CostItem(f"sum:{n.id}", "pyramid", "Sum", (k - 1) * c * h * w, 0))
    return report


# ---------------------------------------------------------------------------
# backbone


def backbone_cost(spec: BackboneSpec = RESNET50, hw: tuple[int, int] = (640, 640), *,
                  include_fc: bool = False, num_classes: int = 1000) -> CostReport:
    """Bottleneck ResNet accounting; convs are bias-free and followed by BN."""
    check_input(hw, spec.top_level)
    H, W = hw
    items = []

    def add(name, k, cin, cout, level):
        s = 2 ** level
        f, p = conv_cost(k, cin, cout, H // s, W // s, bias=False, bn=True)
        items.append(CostItem(name, "backbone", "conv", f, p))

    add("stem.conv7", 7, spec.in_channels, spec.stem_channels, 1)
    cin = spec.stem_channels
    for stage in spec.stages:
        mid = stage.out_channels // spec.expansion
        for b in range(stage.block_count):
            # 3x3 carries the stride; the reduce conv runs at the input resolution
            in_level = stage.level if b > 0 or stage.level == spec.stages[0].level else stage.level - 1
            prefix = f"{stage.name}.block{b}"
            add(f"{prefix}.reduce", 1, cin, mid, in_level)
            add(f"{prefix}.conv3", 3, mid, mid, stage.level)
            add(f"{prefix}.expand", 1, mid, stage.out_channels, stage.level)
            if b == 0:
                add(f"{prefix}.downsample", 1, cin, stage.out_channels, stage.level)
            cin = stage.out_channels
    if include_fc:
        items.append(CostItem("fc", "backbone", "fc", cin * num_classes, cin * num_classes + num_classes))
    return CostReport(items)


# ---------------------------------------------------------------------------
# head


@dataclass(frozen=True)
class HeadSpec:
    """RetinaNet head: two towers of 3x3 convs shared across levels."""

    in_channels: int = 256
    feat_channels: int = 256
    num_convs: int = 4
    num_anchors: int = 9
    num_classes: int = 80


def head_cost(head: HeadSpec, level_shapes: list[Shape]) -> CostReport:
    items = []
    for c, _, _ in level_shapes:
        if c != head.in_channels:
            raise ValueError(f"head expects {head.in_channels} input channels, level has {c}")
    branches = {
        "cls": head.num_anchors * head.num_classes,
        "reg": head.num_anchors * 4,
    }
    for branch, pred_out in branches.items():
        cin = head.in_channels
        layers = []
        for k in range(head.num_convs):
            layers.append((f"{branch}.tower{k}", cin, head.feat_channels))
            cin = head.feat_channels
        layers.append((f"{branch}.pred", cin, pred_out))
        for name, ci, co in layers:
            flops = sum(conv_cost(3, ci, co, h, w, bias=True, bn=False)[0] for _, h, w in level_shapes)
            params = conv_cost(3, ci, co, 1, 1, bias=True, bn=False)[1]
            items.append(CostItem(name, "head", "conv", flops, params))
    return CostReport(items)


# ---------------------------------------------------------------------------
# whole detector, deltas, sweeps


def detector_cost(graph: ArchGraph, hw: tuple[int, int] = (640, 640),
                  backbone: BackboneSpec = RESNET50, head: HeadSpec | None = None, *,
                  count_elementwise: bool = False) -> CostReport:
    """Backbone + pyramid + head. R-CNN presets carry no head term."""
    report = backbone_cost(backbone, hw) + graph_cost(graph, hw, count_elementwise=count_elementwise)
    if graph.config.detector_preset is DetectorPreset.RETINANET:
        shapes = infer_shapes(graph, hw)
        if head is None:
            head = HeadSpec(in_channels=graph.outputs[0].channels)
        report = report + head_cost(head, [shapes[o.id] for o in graph.outputs])
    return report


_KIND_FIELDS = ("same_up_kind", "across_skip_kind", "across_down_kind")


def variant_cost_delta(base: ArchConfig, variant: ArchConfig, hw: tuple[int, int] = (640, 640),
                       backbone: BackboneSpec = RESNET50) -> tuple[int, int]:
    """Pyramid (flops, params) of ``variant`` minus those of ``base``."""
    b, v = base.to_dict(), variant.to_dict()
    differing = [k for k in b if b[k] != v[k]]
    if len(differing) > 1 or (differing and differing[0] not in _KIND_FIELDS):
        raise ConfigError(f"configs must differ in one operator-kind field, differ in {differing}")
    cb = graph_cost(build_fpg(base, backbone), hw)
    cv = graph_cost(build_fpg(variant, backbone), hw)
    return cv.flops - cb.flops, cv.params - cb.params


CSV_HEADER = ("pathways", "width", "preset", "input_h", "input_w",
              "flops_g", "params_m", "pyramid_flops_g", "pyramid_params_m")


def sweep(pathways: list[int], widths: list[int], preset: DetectorPreset | str = "retinanet",
          hw: tuple[int, int] = (640, 640), backbone: BackboneSpec = RESNET50,
          base: ArchConfig | None = None) -> list[dict]:
    """One row per ``p@w`` label, sorted by total flops.

    ``base`` supplies everything except pathways/width/preset; it defaults to
    the contracted grid without AcrossUp.
    """
    if not pathways or not widths:
        raise ValueError("sweep needs at least one pathway count and one width")
    preset = DetectorPreset(preset)
    if base is None:
        base = ArchConfig(across_up=False, contraction=True)
    rows = []
    for p in pathways:
        for w in widths:
            cfg = base.replace(num_pathways=p + 1, width=w, detector_preset=preset,
                               min_level=None, max_level=None)
            graph = build_fpg(cfg, backbone)
            total = detector_cost(graph, hw, backbone)
            pf, pp = total.subtotal("pyramid")
            rows.append({
                "pathways": p, "width": w, "preset": preset.value,
                "input_h": hw[0], "input_w": hw[1],
                "flops": total.flops, "params": total.params,
                "pyramid_flops": pf, "pyramid_params": pp,
            })
    rows.sort(key=lambda r: (r["flops"], r["pathways"], r["width"]))
    return rows


def format_row(row: dict) -> list[str]:
    return [
        str(row["pathways"]), str(row["width"]), row["preset"],
        str(row["input_h"]), str(row["input_w"]),
        f"{row['flops'] / 1e9:.3f}", f"{row['params'] / 1e6:.3f}",
        f"{row['pyramid_flops'] / 1e9:.3f}", f"{row['pyramid_params'] / 1e6:.3f}",
    ]
