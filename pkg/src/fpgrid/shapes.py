"""Shape propagation through pyramid graphs."""

from __future__ import annotations

from dataclasses import dataclass

from .graph import ArchGraph, Edge, OperatorSpec


class ShapeError(ValueError):
    pass


Shape = tuple[int, int, int]  # (channels, height, width)


@dataclass(frozen=True)
class ShapeTable:
    input_hw: tuple[int, int]
    shapes: dict[str, Shape]

    def __getitem__(self, node_id: str) -> Shape:
        return self.shapes[node_id]

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.shapes


def parse_hw(text: str) -> tuple[int, int]:
    """Parse ``"HxW"`` into a pair of ints."""
    parts = text.lower().split("x")
    if len(parts) != 2 or not all(p.strip().isdigit() for p in parts):
        raise ValueError(f"input size must look like HxW, got {text!r}")
    h, w = (int(p) for p in parts)
    if h < 1 or w < 1:
        raise ValueError("input dims must be positive")
    return h, w


def check_input(hw: tuple[int, int], max_level: int) -> None:
    """Raise ShapeError unless both dims are divisible by ``2**max_level``."""
    stride = 2 ** max_level
    bad = [f"{name}={v}" for name, v in zip(("height", "width"), hw) if v % stride]
    if bad:
        raise ShapeError(f"input {', '.join(bad)} not divisible by 2^{max_level}={stride}")


def step_shapes(op: OperatorSpec, shape: Shape) -> list[Shape]:
    """Shape after each step of ``op`` applied to ``shape``."""
    c, h, w = shape
    out = []
    for step in op.composition:
        if step.op == "conv":
            c = op.out_channels
            if step.stride == 2:
                if h % 2 or w % 2:
                    raise ShapeError(f"stride-2 conv on odd spatial size {h}x{w}")
                h, w = h // 2, w // 2
        elif step.op in ("maxpool2", "avgpool2"):
            if h % 2 or w % 2:
                raise ShapeError(f"{step.op} on odd spatial size {h}x{w}")
            h, w = h // 2, w // 2
        elif step.op == "nearest_up2":
            h, w = 2 * h, 2 * w
        out.append((c, h, w))
    return out


def edge_output_shape(edge: Edge, src_shape: Shape) -> Shape:
    if src_shape[0] != edge.op.in_channels:
        raise ShapeError(f"{edge.id}: source has {src_shape[0]} channels, operator expects "
                         f"{edge.op.in_channels}")
    return step_shapes(edge.op, src_shape)[-1]


def infer_shapes(graph: ArchGraph, hw: tuple[int, int]) -> ShapeTable:
    check_input(hw, graph.config.max_level)
    H, W = hw
    shapes: dict[str, Shape] = {}
    for node in graph.schedule():
        if node.role == "backbone":
            stride = 2 ** node.level
            shapes[node.id] = (node.channels, H // stride, W // stride)
            continue
        incoming = graph.incoming(node)
        if not incoming:
            raise ShapeError(f"node {node.id} has no inputs")
        operands = {e.id: edge_output_shape(e, shapes[e.src.id]) for e in incoming}
        distinct = set(operands.values())
        if len(distinct) > 1:
            detail = ", ".join(f"{k}={v}" for k, v in operands.items())
            raise ShapeError(f"shape mismatch at fusion node {node.id}: {detail}")
        shape = distinct.pop()
        stride = 2 ** node.level
        expected = (node.channels, H // stride, W // stride)
        if shape != expected:
            raise ShapeError(f"node {node.id} inferred {shape}, level law requires {expected}")
        shapes[node.id] = shape
    return ShapeTable(hw, shapes)
