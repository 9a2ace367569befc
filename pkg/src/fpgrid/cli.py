"""fpgrid command line: build, validate, shapes, cost, sweep, export, forward, gradcheck."""

from __future__ import annotations

import argparse
import csv
import io
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import golden
from .backbone import BACKBONES, get_backbone
from .config import ConfigError, ablation_preset, dump_config, fpg_config, load_config
from .cost import CSV_HEADER, detector_cost, format_row, graph_cost, sweep
from .export import graph_from_json, graph_to_json, to_dot
from .graph import ArchGraph, EdgeKind, build_fpg, build_fpn, validate
from .shapes import ShapeError, check_input, infer_shapes, parse_hw

EXIT_OK, EXIT_ERROR, EXIT_CHECK_FAILED = 0, 1, 2


class CliError(Exception):
    pass


def _graph_from_args(args) -> ArchGraph:
    backbone = get_backbone(args.backbone)
    if getattr(args, "graph", None):
        try:
            return graph_from_json(Path(args.graph).read_text())
        except OSError as exc:
            raise CliError(f"cannot read graph {args.graph}: {exc.strerror}") from None
    if args.config:
        return build_fpg(load_config(args.config), backbone)
    name = args.preset or "fpg:9@256"
    kind, _, rest = name.partition(":")
    if kind == "ablation":
        return build_fpg(ablation_preset(rest), backbone)
    if kind == "fpg":
        m = re.fullmatch(r"(\d+)@(\d+)", rest)
        if not m:
            raise CliError(f"fpg preset must look like fpg:P@W, got {name!r}")
        return build_fpg(fpg_config(int(m[1]), int(m[2]), args.detector), backbone)
    if kind == "fpn":
        if not rest.isdigit():
            raise CliError(f"fpn preset must look like fpn:W, got {name!r}")
        return build_fpn(int(rest), backbone=backbone, preset=args.detector)
    raise CliError(f"unknown preset {name!r} (use ablation:NAME, fpg:P@W or fpn:W)")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _hw(args) -> tuple[int, int]:
    return parse_hw(args.input)


def cmd_build(args) -> int:
    graph = _graph_from_args(args)
    counts: dict[str, int] = {}
    for e in graph.edges:
        counts[e.kind.value] = counts.get(e.kind.value, 0) + 1
    print(f"family {graph.family}  pathways {graph.config.num_pathways}  width {graph.config.width}  "
          f"levels {graph.config.min_level}..{graph.config.max_level}")
    print(f"nodes {len(graph.nodes)} (pyramid {len(graph.pyramid_nodes())})  edges {len(graph.edges)}")
    for kind in EdgeKind:
        if kind.value in counts:
            print(f"  {kind.value:<16}{counts[kind.value]}")
    if args.out:
        Path(args.out).write_text(graph_to_json(graph))
    if args.dump_config:
        sys.stdout.write(dump_config(graph.config))
    return EXIT_OK


def cmd_validate(args) -> int:
    graph = _graph_from_args(args)
    diags = validate(graph)
    for d in diags:
        print(d, file=sys.stderr)
    if diags:
        print(f"{len(diags)} problem(s)", file=sys.stderr)
        return EXIT_ERROR
    print("ok")
    return EXIT_OK


def cmd_shapes(args) -> int:
    graph = _graph_from_args(args)
    table = infer_shapes(graph, _hw(args))
    if args.json:
        doc = {"input": list(table.input_hw),
               "nodes": {n.id: list(table[n.id]) for n in sorted(graph.nodes, key=lambda n: n.sort_key)}}
        _emit(json.dumps(doc, indent=2) + "\n", args.out)
        return EXIT_OK
    p = graph.config.num_pathways
    cols = ["level", "C"] + [str(j) for j in range(1, p + 1)] + ["out"]
    rows = []
    for level in graph.config.levels:
        row = [f"P{level}"]
        for j in range(0, p + 2):
            role = "backbone" if j == 0 else "output" if j == p + 1 else "pyramid"
            match = [n for n in graph.nodes if n.level == level and n.role == role
                     and (role != "pyramid" or n.pathway == j)]
            row.append("x".join(map(str, table[match[0].id])) if match else "-")
        rows.append(row)
    widths = [max(len(r[k]) for r in rows + [cols]) for k in range(len(cols))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [cols] + rows]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_cost(args) -> int:
    if args.check:
        checks = golden.all_checks()
        for c in checks:
            print(c.line())
        failed = [c for c in checks if not c.passed]
        print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
        return EXIT_CHECK_FAILED if failed else EXIT_OK
    graph = _graph_from_args(args)
    hw = _hw(args)
    report = detector_cost(graph, hw, get_backbone(args.backbone), count_elementwise=args.elementwise)
    label = f"1@{graph.config.width}" if graph.family == "fpn" else graph.config.label
    lines = [f"input {hw[0]}x{hw[1]}  ({graph.family} {label}, {graph.config.detector_preset.value})"]
    for comp in ("backbone", "pyramid", "head"):
        f, p = report.subtotal(comp)
        lines.append(f"{comp:<10} flops {f / 1e9:10.3f} G   params {p / 1e6:9.3f} M")
    lines.append(f"{'total':<10} flops {report.flops / 1e9:10.3f} G   params {report.params / 1e6:9.3f} M")
    if args.breakdown:
        pyramid = graph_cost(graph, hw, count_elementwise=args.elementwise).by_kind()
        lines.append("pyramid by kind:")
        for kind in [k.value for k in EdgeKind] + ["Sum"]:
            if kind in pyramid:
                f, p = pyramid[kind]
                lines.append(f"  {kind:<16} flops {f / 1e9:10.3f} G   params {p / 1e6:9.3f} M")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def cmd_sweep(args) -> int:
    rows = sweep(args.pathways, args.widths, args.detector, _hw(args), get_backbone(args.backbone))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(format_row(row))
    _emit(buf.getvalue(), args.csv or args.out)
    return EXIT_OK


def cmd_export(args) -> int:
    graph = _graph_from_args(args)
    text = graph_to_json(graph) if args.json else to_dot(graph)
    _emit(text, args.out)
    return EXIT_OK


def _random_image(args, graph) -> np.ndarray:
    hw = _hw(args)
    check_input(hw, graph.config.max_level)
    rng = np.random.default_rng(args.seed)
    return rng.uniform(-1.0, 1.0, (1, 3, *hw))


def cmd_forward(args) -> int:
    from .tensor import forward, instantiate

    graph = _graph_from_args(args)
    x = _random_image(args, graph)
    outs = forward(instantiate(graph, args.seed), x)
    lines = [f"P{level}  shape {tuple(t.shape)}  checksum {float(t.sum()):.12g}"
             for level, t in sorted(outs.items())]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .tensor import gradcheck, instantiate

    graph = _graph_from_args(args)
    x = _random_image(args, graph)
    result = gradcheck(instantiate(graph, args.seed), x, samples=args.samples, seed=args.seed)
    print(f"max relative error {result.max_rel_error:.3e} over {result.checked} samples "
          f"({result.rejected} rejected near kinks, {result.unresolved} below FD resolution)")
    print("PASS" if result.passed else "FAIL")
    return EXIT_OK if result.passed else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpgrid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, graph_file: bool = False, default_input: str = "640x640"):
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", help="ArchConfig JSON file")
        src.add_argument("--preset", help="ablation:NAME | fpg:P@W | fpn:W (default fpg:9@256)")
        if graph_file:
            src.add_argument("--graph", help="graph JSON dump (as written by build --out)")
        p.add_argument("--detector", choices=["retinanet", "rcnn"], default="retinanet")
        p.add_argument("--backbone", choices=sorted(BACKBONES), default="resnet50")
        p.add_argument("--input", default=default_input, help="input size HxW")
        p.add_argument("--out", help="write output to PATH instead of stdout")

    p = sub.add_parser("build", help="build a graph and summarize it")
    common(p)
    p.add_argument("--dump-config", action="store_true", help="also print the resolved config")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("validate", help="check graph invariants")
    common(p, graph_file=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("shapes", help="level x pathway shape table")
    common(p, graph_file=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_shapes)

    p = sub.add_parser("cost", help="FLOPs/params report")
    common(p, graph_file=True)
    p.add_argument("--breakdown", action="store_true", help="per-kind pyramid subtotals")
    p.add_argument("--elementwise", action="store_true", help="also count per-element ops")
    p.add_argument("--check", action="store_true", help="compare against the embedded reference tables (always at 640x640)")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("sweep", help="cost table over pathway counts and widths")
    p.add_argument("--pathways", type=_int_list, default=[3, 5, 7, 9])
    p.add_argument("--widths", type=_int_list, default=[128, 256])
    p.add_argument("--detector", choices=["retinanet", "rcnn"], default="retinanet")
    p.add_argument("--backbone", choices=sorted(BACKBONES), default="resnet50")
    p.add_argument("--input", default="640x640")
    p.add_argument("--csv", help="CSV output path")
    p.add_argument("--out", help="alias of --csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export", help="DOT or JSON export")
    common(p, graph_file=True)
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--dot", action="store_true", help="Graphviz DOT (default)")
    fmt.add_argument("--json", action="store_true", help="lossless JSON dump")
    p.set_defaults(func=cmd_export)

    for name, func, helptext in (("forward", cmd_forward, "run the net on a seeded random image"),
                                 ("gradcheck", cmd_gradcheck, "finite-difference gradient check")):
        p = sub.add_parser(name, help=helptext)
        common(p, graph_file=True)
        p.add_argument("--seed", type=int, default=0)
        if name == "gradcheck":
            p.add_argument("--samples", type=int, default=200)
        p.set_defaults(func=func)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, ShapeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
