"""Executable pyramid graphs: forward, reverse-mode gradients, MAC counting."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from ..graph import ArchGraph, Edge, validate
from ..shapes import check_input
from . import ops


class GraphInvalidError(ValueError):
    pass


INIT_BOUND = 0.1


@dataclass
class Counters:
    count_elementwise: bool = False
    macs: int = 0

    def reset(self):
        self.macs = 0


@dataclass
class ExecutableNet:
    graph: ArchGraph
    schedule: list
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    stem: dict[int, np.ndarray]
    image_channels: int = 3
    linear: bool = False
    eps: float = 1e-5
    counters: Counters = field(default_factory=Counters)

    @property
    def num_params(self) -> int:
        return sum(int(v.size) for v in self.params.values())


def _rng(seed: int, key: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(key.encode())])


def instantiate(graph: ArchGraph, seed: int = 0, *, image_channels: int = 3,
                linear: bool = False) -> ExecutableNet:
    """Fresh, seed-determined parameters for every edge.

    Each edge draws from its own generator keyed by the edge id, so values do
    not depend on edge storage order.  ``linear`` replaces ReLU by identity.
    """
    diags = validate(graph)
    if diags:
        raise GraphInvalidError("; ".join(str(d) for d in diags))
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for e in sorted(graph.edges, key=lambda e: e.id):
        rng = _rng(seed, e.id)
        for k, step in enumerate(e.op.composition):
            key = f"{e.id}/{k}"
            if step.op == "conv":
                shape = (e.op.out_channels, e.op.in_channels, step.kernel, step.kernel)
                params[f"{key}.weight"] = rng.uniform(-INIT_BOUND, INIT_BOUND, shape)
                if step.bias:
                    params[f"{key}.bias"] = rng.uniform(-INIT_BOUND, INIT_BOUND, e.op.out_channels)
            elif step.op == "bn":
                c = e.op.out_channels
                params[f"{key}.gamma"] = np.ones(c)
                params[f"{key}.beta"] = np.zeros(c)
                buffers[f"{key}.mean"] = np.zeros(c)
                buffers[f"{key}.var"] = np.ones(c)
    # fixed stand-in for the backbone: C_i = 1x1 projection of the 2^i-pooled image
    stem = {
        n.level: _rng(seed, f"stem/{n.id}").uniform(-1.0, 1.0, (n.channels, image_channels, 1, 1))
        for n in graph.backbone_inputs
    }
    return ExecutableNet(graph, graph.schedule(), params, buffers, stem,
                         image_channels=image_channels, linear=linear)


@dataclass
class _Run:
    values: dict[str, np.ndarray]
    tape: dict[str, list]
    stem_tape: dict[int, tuple]
    kinks: list[np.ndarray]


def _apply_edge(net: ExecutableNet, e: Edge, x: np.ndarray, run: _Run) -> np.ndarray:
    vjps = []
    counting = net.counters
    for k, step in enumerate(e.op.composition):
        key = f"{e.id}/{k}"
        if step.op == "conv":
            wgt = net.params[f"{key}.weight"]
            b = net.params.get(f"{key}.bias")
            x, vjp = ops.conv2d(x, wgt, b, step.stride)
            counting.macs += int(wgt.size) * x.shape[0] * x.shape[2] * x.shape[3]
            vjps.append(("conv", key, vjp))
            continue
        if step.op == "bn":
            x, vjp = ops.bn_infer(x, net.params[f"{key}.gamma"], net.params[f"{key}.beta"],
                                  net.buffers[f"{key}.mean"], net.buffers[f"{key}.var"], net.eps)
            vjps.append(("bn", key, vjp))
        elif step.op == "relu":
            if net.linear:
                x, vjp = ops.identity(x)
            else:
                run.kinks.append(x > 0)
                x, vjp = ops.relu(x)
            vjps.append(("act", key, vjp))
        elif step.op == "maxpool2":
            x, vjp = ops.maxpool2(x)
            run.kinks.append(vjp.argmax)
            vjps.append(("act", key, vjp))
        else:
            x, vjp = {"nearest_up2": ops.nearest_up2, "avgpool2": ops.avgpool2,
                      "identity": ops.identity}[step.op](x)
            vjps.append(("act", key, vjp))
            if step.op == "identity":
                continue
        if counting.count_elementwise:
            counting.macs += int(x.size)
    run.tape[e.id] = vjps
    return x


def _backbone_features(net: ExecutableNet, x, run: _Run) -> dict[int, np.ndarray]:
    graph = net.graph
    if isinstance(x, dict):
        feats = {int(k): ops.as_tensor(v) for k, v in x.items()}
        for n in graph.backbone_inputs:
            if n.level not in feats:
                raise ops.TensorShapeError(f"missing backbone feature for level {n.level}")
            if feats[n.level].shape[1] != n.channels:
                raise ops.TensorShapeError(
                    f"level {n.level} feature has {feats[n.level].shape[1]} channels, expected {n.channels}")
        return feats
    img = ops.as_tensor(x)
    if img.shape[1] != net.image_channels:
        raise ops.TensorShapeError(f"expected {net.image_channels} image channels, got {img.shape[1]}")
    check_input(img.shape[2:], graph.config.max_level)
    feats = {}
    for n in graph.backbone_inputs:
        pooled, pool_vjp = ops.avgpool(img, 2 ** n.level)
        feat, conv_vjp = ops.conv2d(pooled, net.stem[n.level])
        run.stem_tape[n.level] = (pool_vjp, conv_vjp)
        feats[n.level] = feat
    return feats


def _run(net: ExecutableNet, x) -> _Run:
    net.counters.reset()
    run = _Run({}, {}, {}, [])
    feats = _backbone_features(net, x, run)
    graph = net.graph
    for node in net.schedule:
        if node.role == "backbone":
            run.values[node.id] = feats[node.level]
            continue
        operands = [_apply_edge(net, e, run.values[e.src.id], run) for e in graph.incoming(node)]
        run.values[node.id] = ops.tensor_sum(operands)
        if net.counters.count_elementwise and len(operands) > 1:
            net.counters.macs += (len(operands) - 1) * int(operands[0].size)
    return run


def forward(net: ExecutableNet, x) -> dict[int, np.ndarray]:
    """Outputs by level for an NCHW image (or a ``{level: feature}`` dict)."""
    run = _run(net, x)
    return {o.level: run.values[o.id] for o in net.graph.outputs}


def node_values(net: ExecutableNet, x) -> dict[str, np.ndarray]:
    """Value of every node, keyed by node id."""
    return dict(_run(net, x).values)


def count_macs(net: ExecutableNet, x) -> tuple[int, int]:
    """MACs performed by the pyramid during one forward pass, and parameter count."""
    _run(net, x)
    return net.counters.macs, net.num_params


def gradients(net: ExecutableNet, x, upstream: dict[int, np.ndarray] | None = None
              ) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of ``sum(upstream[l] * out[l])``.

    With ``upstream=None`` the loss is the plain sum of every output element.
    Keys are parameter names plus ``"input"`` (an image input) or
    ``"input/C{i}"`` (a feature-dict input).
    """
    run = _run(net, x)
    graph = net.graph
    grads_node: dict[str, np.ndarray] = {}
    for o in graph.outputs:
        out = run.values[o.id]
        g = np.ones_like(out) if upstream is None else np.broadcast_to(upstream[o.level], out.shape)
        grads_node[o.id] = np.array(g, dtype=np.float64)
    pgrads = {k: np.zeros_like(v) for k, v in net.params.items()}

    for node in reversed(net.schedule):
        g_node = grads_node.get(node.id)
        if g_node is None or node.role == "backbone":
            continue
        for e in graph.incoming(node):
            g = g_node
            for kind, key, vjp in reversed(run.tape[e.id]):
                if kind == "conv":
                    g, dw, db = vjp(g)
                    pgrads[f"{key}.weight"] += dw
                    if db is not None:
                        pgrads[f"{key}.bias"] += db
                elif kind == "bn":
                    g, dgamma, dbeta = vjp(g)
                    pgrads[f"{key}.gamma"] += dgamma
                    pgrads[f"{key}.beta"] += dbeta
                else:
                    (g,) = vjp(g)
            src = e.src.id
            grads_node[src] = grads_node[src] + g if src in grads_node else g

    out = dict(pgrads)
    if run.stem_tape:
        dimg = None
        for level, (pool_vjp, conv_vjp) in run.stem_tape.items():
            g = grads_node.get(f"C{level}")
            if g is None:
                continue
            g, _, _ = conv_vjp(g)
            (g,) = pool_vjp(g)
            dimg = g if dimg is None else dimg + g
        out["input"] = dimg
    else:
        for n in graph.backbone_inputs:
            out[f"input/{n.id}"] = grads_node.get(n.id, np.zeros_like(run.values[n.id]))
    return out


def loss(net: ExecutableNet, x) -> float:
    return float(sum(v.sum() for v in forward(net, x).values()))


@dataclass
class GradcheckResult:
    max_rel_error: float
    checked: int
    rejected: int
    tolerance: float
    unresolved: int = 0

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_error < self.tolerance


def _probe(net, x):
    run = _run(net, x)
    return run.kinks, float(sum(run.values[o.id].sum() for o in net.graph.outputs))


def _same_kinks(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def gradcheck(net: ExecutableNet, x, *, samples: int = 200, eps: float = 1e-5,
              tolerance: float = 1e-4, seed: int = 0, include_input: bool = True) -> GradcheckResult:
    """Compare analytic gradients with central differences on sampled scalars.

    A sample is rejected when perturbing it by +-eps changes any ReLU mask or
    max-pool selection anywhere in the net (finite differences are invalid
    across a kink), or when its gradient is below the level at which the
    central difference's roundoff alone would exceed ``tolerance``.
    """
    x = ops.as_tensor(x) if not isinstance(x, dict) else x
    grads = gradients(net, x)
    base_kinks, base_loss = _probe(net, x)
    # roundoff of (L+ - L-) / 2eps is about u*|L|/eps
    resolvable = np.finfo(float).eps * max(abs(base_loss), 1.0) / eps / tolerance
    rng = np.random.default_rng(seed)
    names = sorted(net.params)
    candidates = [(k, i) for k in names for i in range(net.params[k].size)]
    if include_input and not isinstance(x, dict):
        candidates += [("input", i) for i in range(x.size)]
    order = rng.permutation(len(candidates))

    max_err, checked, rejected, unresolved = 0.0, 0, 0, 0
    for idx in order:
        if checked >= samples:
            break
        name, flat = candidates[idx]
        target = x if name == "input" else net.params[name]
        view = target.reshape(-1)
        orig = view[flat]
        view[flat] = orig + eps
        plus_kinks, lp = _probe(net, x)
        view[flat] = orig - eps
        minus_kinks, lm = _probe(net, x)
        view[flat] = orig
        if not (_same_kinks(plus_kinks, base_kinks) and _same_kinks(minus_kinks, base_kinks)):
            rejected += 1
            continue
        numeric = (lp - lm) / (2 * eps)
        analytic = float(grads[name].reshape(-1)[flat])
        denom = max(abs(numeric), abs(analytic))
        if denom < resolvable:
            unresolved += 1
            continue
        err = abs(numeric - analytic) / denom
        max_err = max(max_err, err)
        checked += 1
    return GradcheckResult(max_err, checked, rejected, tolerance, unresolved)
