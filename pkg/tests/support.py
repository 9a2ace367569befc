"""Strategies and oracles shared by the test modules."""

import itertools
from collections import Counter

from hypothesis import strategies as st

from fpgrid.backbone import RESNET50
from fpgrid.config import ArchConfig
from fpgrid.graph import EdgeKind, NodeRef

FLAGS = ("across_down", "across_up", "same_up", "across_skip")


@st.composite
def small_configs(draw, max_pathways=4, widths=(8, 16)):
    preset = draw(st.sampled_from(["retinanet", "rcnn"]))
    return ArchConfig(
        num_pathways=draw(st.integers(1, max_pathways)),
        width=draw(st.sampled_from(widths)),
        detector_preset=preset,
        across_down=draw(st.booleans()),
        across_up=draw(st.booleans()),
        same_up=draw(st.booleans()),
        across_skip=draw(st.booleans()),
        contraction=draw(st.booleans()),
        same_up_kind=draw(st.sampled_from(["conv3_s2", "maxpool2", "avgpool2"])),
        across_skip_kind=draw(st.sampled_from(["conv1", "identity"])),
        across_down_kind=draw(st.sampled_from(["intp", "intp_k1", "intp_k3"])),
    )


def min_input(config: ArchConfig) -> tuple[int, int]:
    s = 2 ** config.max_level
    return s, s


def kind_counts(graph):
    return Counter(e.kind for e in graph.edges)


def edge_triples(graph):
    return Counter((e.kind, e.src.id, e.dst.id) for e in graph.edges)


def brute_force_edges(config, backbone=RESNET50):
    """Every (kind, src, dst) the connection rules admit, by exhaustive search over node pairs."""
    p = config.num_pathways
    nodes = [NodeRef(0, i, backbone.channels(i), "backbone") for i in config.levels if i <= backbone.top_level]
    nodes += [NodeRef(j, i, config.width, "pyramid") for j in range(1, p + 1) for i in config.levels]
    nodes += [NodeRef(p + 1, i, config.width, "output") for i in config.levels]
    covered = {n.level for n in nodes if n.role == "backbone"}

    def admits(kind, s, d):
        dj, di = d.pathway - s.pathway, d.level - s.level
        if kind is EdgeKind.BACKBONE_LATERAL:
            return s.role == "backbone" and d.role == "pyramid" and d.pathway == 1 and di == 0
        if s.role != "pyramid":
            return False
        if kind is EdgeKind.OUTPUT_CONV:
            return d.role == "output" and s.pathway == p and di == 0
        if d.role != "pyramid":
            return False
        if kind is EdgeKind.SAME_UP:
            if dj != 0 or di != 1:
                return False
            return d.level not in covered if d.pathway == 1 else config.same_up
        if d.pathway < 2:
            return False
        if kind is EdgeKind.ACROSS_SAME:
            return dj == 1 and di == 0
        if kind is EdgeKind.ACROSS_UP:
            return config.across_up and dj == 1 and di == 1
        if kind is EdgeKind.ACROSS_DOWN:
            return config.across_down and dj == 1 and di == -1
        if kind is EdgeKind.ACROSS_SKIP:
            return config.across_skip and s.pathway == 1 and di == 0
        return False

    return Counter((k, s.id, d.id) for s, d in itertools.product(nodes, nodes)
                   for k in EdgeKind if admits(k, s, d))
