"""Graphviz DOT and lossless JSON serialization of ArchGraph."""

from __future__ import annotations

import json

from .config import ArchConfig, ConfigError
from .graph import ArchGraph, Edge, EdgeKind, NodeRef, OperatorSpec

GRAPH_FORMAT = "fpgrid-graph"
GRAPH_VERSION = 1

EDGE_STYLES = {
    EdgeKind.BACKBONE_LATERAL: 'color="gray40", style=solid',
    EdgeKind.SAME_UP: 'color="black", style=bold',
    EdgeKind.SAME_DOWN: 'color="black", style=dotted',
    EdgeKind.ACROSS_SAME: 'color="forestgreen", style=solid',
    EdgeKind.ACROSS_UP: 'color="orange", style=dashed',
    EdgeKind.ACROSS_DOWN: 'color="royalblue", style=solid',
    EdgeKind.ACROSS_SKIP: 'color="purple", style=dashed, constraint=false',
    EdgeKind.OUTPUT_CONV: 'color="firebrick", style=solid',
}


def node_label(node: NodeRef) -> str:
    if node.role == "pyramid":
        return f"P{node.level}^{node.pathway}"
    if node.role == "backbone":
        return f"C{node.level}"
    return f"out{node.level}"


def to_dot(graph: ArchGraph, name: str = "fpg") -> str:
    lines = [f"digraph {name} {{", "  rankdir=LR;", "  node [shape=box, fontsize=10];"]
    by_pathway: dict[int, list[NodeRef]] = {}
    for n in sorted(graph.nodes, key=lambda n: n.sort_key):
        by_pathway.setdefault(n.pathway, []).append(n)
    for pathway, members in sorted(by_pathway.items()):
        lines.append(f"  subgraph cluster_{pathway} {{")
        lines.append(f'    label="pathway {pathway}"; style=dotted;')
        for n in members:
            lines.append(f'    "{n.id}" [label="{node_label(n)}\\n{n.channels}ch"];')
        lines.append("  }")
    for e in sorted(graph.edges, key=lambda e: (e.dst.sort_key, e.fusion_key)):
        lines.append(f'  "{e.src.id}" -> "{e.dst.id}" '
                     f'[label="{e.kind.value}\\n{e.op.describe()}", {EDGE_STYLES[e.kind]}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_dict(graph: ArchGraph) -> dict:
    return {
        "format": GRAPH_FORMAT,
        "version": GRAPH_VERSION,
        "family": graph.family,
        "config": graph.config.to_dict(),
        "nodes": [dict(id=n.id, **n.to_dict()) for n in graph.nodes],
        "edges": [dict(id=e.id, **e.to_dict()) for e in graph.edges],
        "outputs": [n.id for n in graph.outputs],
    }


def graph_to_json(graph: ArchGraph) -> str:
    return json.dumps(graph_to_dict(graph), indent=2) + "\n"


def graph_from_dict(data: dict) -> ArchGraph:
    if data.get("format") != GRAPH_FORMAT:
        raise ConfigError(f"not a {GRAPH_FORMAT} document")
    if data.get("version") != GRAPH_VERSION:
        raise ConfigError(f"unsupported graph version {data.get('version')!r}")
    try:
        nodes = []
        by_id: dict[str, NodeRef] = {}
        for raw in data["nodes"]:
            raw = dict(raw)
            claimed = raw.pop("id", None)
            node = NodeRef(**raw)
            if claimed is not None and claimed != node.id:
                raise ConfigError(f"node id {claimed!r} does not match its coordinates ({node.id})")
            nodes.append(node)
            by_id[node.id] = node
        edges = []
        for raw in data["edges"]:
            src, dst = by_id[raw["src"]], by_id[raw["dst"]]
            edges.append(Edge(src, dst, EdgeKind(raw["kind"]), OperatorSpec.from_dict(raw["op"])))
        outputs = tuple(by_id[i] for i in data["outputs"])
        config = ArchConfig.from_dict(data["config"])
    except KeyError as exc:
        raise ConfigError(f"graph document references unknown key or node {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed graph document: {exc}") from None
    return ArchGraph(tuple(nodes), tuple(edges), outputs, config, data.get("family", "fpg"))


def graph_from_json(text: str) -> ArchGraph:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from None
    return graph_from_dict(data)
