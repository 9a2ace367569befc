"""Feature pyramid grid construction, shape inference, cost accounting and execution."""

from .backbone import RESNET50, RESNET101, BackboneSpec, Stage
from .config import ArchConfig, ConfigError, ablation_preset, fpg_config, load_config
from .cost import (
    CostReport,
    HeadSpec,
    backbone_cost,
    detector_cost,
    edge_cost,
    graph_cost,
    head_cost,
    sweep,
    variant_cost_delta,
)
from .export import graph_from_json, graph_to_json, to_dot
from .graph import (
    ArchGraph,
    Diagnostic,
    Edge,
    EdgeKind,
    NodeRef,
    OperatorSpec,
    Step,
    build_fpg,
    build_fpn,
    validate,
)
from .shapes import ShapeError, ShapeTable, check_input, infer_shapes

__version__ = "0.1.0"

__all__ = [
    "ablation_preset",
    "ArchConfig",
    "ArchGraph",
    "backbone_cost",
    "BackboneSpec",
    "build_fpg",
    "build_fpn",
    "check_input",
    "ConfigError",
    "CostReport",
    "detector_cost",
    "Diagnostic",
    "Edge",
    "edge_cost",
    "EdgeKind",
    "fpg_config",
    "graph_cost",
    "graph_from_json",
    "graph_to_json",
    "head_cost",
    "HeadSpec",
    "infer_shapes",
    "load_config",
    "NodeRef",
    "OperatorSpec",
    "RESNET101",
    "RESNET50",
    "ShapeError",
    "ShapeTable",
    "Stage",
    "Step",
    "sweep",
    "to_dot",
    "validate",
    "variant_cost_delta",
]
