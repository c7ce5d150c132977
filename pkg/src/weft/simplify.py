"""Graph-to-graph simplification passes.

Passes are pure functions: they return a new graph plus a report and never
mutate their input, so before/after can be compared and pipelines are
idempotent (a second run reports zero rewrites).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, GraphError, ShapeError
from .graph import (
    BatchNormAttrs,
    ConvAttrs,
    GemmAttrs,
    Graph,
    Node,
    OpKind,
    errors_only,
    infer_shapes,
    validate,
    with_nodes,
)
from .tensor import Tensor


@dataclass
class PassReport:
    pass_name: str
    nodes_before: int
    nodes_after: int
    rewrites: list[tuple[str, tuple[str, ...]]]


def _report(name: str, before: Graph, after: Graph,
            rewrites: list[tuple[str, tuple[str, ...]]]) -> PassReport:
    return PassReport(pass_name=name, nodes_before=len(before.nodes),
                      nodes_after=len(after.nodes), rewrites=rewrites)


def _consumer_counts(g: Graph) -> dict[str, int]:
    counts: dict[str, int] = {}
    for node in g.nodes:
        for inp in node.inputs:
            counts[inp] = counts.get(inp, 0) + 1
    return counts


def _producer_index(g: Graph) -> dict[str, Node]:
    return {out: node for node in g.nodes for out in node.outputs}


def _unique_name(base: str, taken: set[str]) -> str:
    name = base
    i = 1
    while name in taken:
        name = f"{base}.{i}"
        i += 1
    taken.add(name)
    return name


def fold_batch_norm(g: Graph) -> tuple[Graph, PassReport]:
    """Absorb inference-time batch norm into the preceding convolution.

    Matches BatchNorm whose data input is produced by a Conv consumed only by
    that BatchNorm (and not exported as a graph output); with
    s_c = gamma_c / sqrt(var_c + eps), the conv weights become W*s per output
    channel and the bias (b - mean)*s + beta. The conv keeps its position and
    takes over the BatchNorm's output name. Non-matching BatchNorms stay.
    """
    producers = _producer_index(g)
    counts = _consumer_counts(g)
    rewrites: list[tuple[str, tuple[str, ...]]] = []
    removed: set[str] = set()
    replaced: dict[str, Node] = {}
    new_inits = dict(g.initializers)
    taken = set(new_inits) | {n for n, _ in g.inputs} | set(producers)

    for bn in g.nodes:
        if bn.kind != OpKind.BATCH_NORM or bn.name in removed:
            continue
        conv = producers.get(bn.inputs[0])
        if conv is None or conv.kind != OpKind.CONV or conv.name in replaced:
            continue
        if counts.get(conv.outputs[0], 0) != 1 or conv.outputs[0] in g.outputs:
            continue
        param_names = bn.inputs[1:5]
        if not all(p in g.initializers for p in param_names):
            continue
        if conv.inputs[1] not in g.initializers:
            continue
        if len(conv.inputs) > 2 and conv.inputs[2] not in g.initializers:
            continue

        gamma, beta, mean, var = (g.initializers[p].data for p in param_names)
        assert isinstance(bn.attrs, BatchNormAttrs)
        scale = gamma / np.sqrt(var + np.float32(bn.attrs.epsilon))

        w = g.initializers[conv.inputs[1]].data
        bias = (g.initializers[conv.inputs[2]].data if len(conv.inputs) > 2
                else np.zeros(w.shape[0], dtype=np.float32))
        w_folded = w * scale.reshape(-1, 1, 1, 1)
        b_folded = (bias - mean) * scale + beta

        w_name = _unique_name(f"{conv.name}.folded_weight", taken)
        b_name = _unique_name(f"{conv.name}.folded_bias", taken)
        new_inits[w_name] = Tensor(w_folded)
        new_inits[b_name] = Tensor(b_folded)

        replaced[conv.name] = replace(
            conv, inputs=(conv.inputs[0], w_name, b_name), outputs=bn.outputs)
        removed.add(bn.name)
        rewrites.append(("fold_batch_norm", (conv.name, bn.name)))

    if not rewrites:
        return g, _report("fold_batch_norm", g, g, [])
    nodes = [replaced.get(n.name, n) for n in g.nodes if n.name not in removed]
    out = with_nodes(g, nodes, new_inits)
    return out, _report("fold_batch_norm", g, out, rewrites)


def fuse_activation(g: Graph) -> tuple[Graph, PassReport]:
    """Fold Relu into a Conv or Gemm producer with fan-out one: the producer
    gains fused_relu and takes over the Relu's output name."""
    producers = _producer_index(g)
    counts = _consumer_counts(g)
    rewrites: list[tuple[str, tuple[str, ...]]] = []
    removed: set[str] = set()
    replaced: dict[str, Node] = {}

    for node in g.nodes:
        if node.kind != OpKind.RELU or node.name in removed:
            continue
        prod = producers.get(node.inputs[0])
        if prod is None or prod.kind not in (OpKind.CONV, OpKind.GEMM):
            continue
        if prod.name in replaced or prod.name in removed:
            continue
        if counts.get(prod.outputs[0], 0) != 1 or prod.outputs[0] in g.outputs:
            continue
        assert isinstance(prod.attrs, (ConvAttrs, GemmAttrs))
        replaced[prod.name] = replace(
            prod, attrs=replace(prod.attrs, fused_relu=True), outputs=node.outputs)
        removed.add(node.name)
        rewrites.append(("fuse_activation", (prod.name, node.name)))

    if not rewrites:
        return g, _report("fuse_activation", g, g, [])
    nodes = [replaced.get(n.name, n) for n in g.nodes if n.name not in removed]
    out = with_nodes(g, nodes)
    return out, _report("fuse_activation", g, out, rewrites)


def eliminate_dead(g: Graph) -> tuple[Graph, PassReport]:
    """Drop nodes and initializers not reachable backward from the outputs."""
    producers = _producer_index(g)
    live_values: set[str] = set()
    live_nodes: set[str] = set()
    queue = list(g.outputs)
    while queue:
        value = queue.pop()
        if value in live_values:
            continue
        live_values.add(value)
        node = producers.get(value)
        if node is not None and node.name not in live_nodes:
            live_nodes.add(node.name)
            queue.extend(node.inputs)

    nodes = [n for n in g.nodes if n.name in live_nodes]
    inits = {name: t for name, t in g.initializers.items()
             if name in live_values}
    rewrites: list[tuple[str, tuple[str, ...]]] = []
    for n in g.nodes:
        if n.name not in live_nodes:
            rewrites.append(("dead_node", (n.name,)))
    for name in g.initializers:
        if name not in inits:
            rewrites.append(("dead_initializer", (name,)))
    if not rewrites:
        return g, _report("eliminate_dead", g, g, [])
    out = with_nodes(g, nodes, inits)
    return out, _report("eliminate_dead", g, out, rewrites)


def drop_identity(g: Graph) -> tuple[Graph, PassReport]:
    """Remove data-movement no-ops. Exactly three patterns:

    - Identity nodes;
    - Flatten nodes whose only consumer is a Reshape (the Reshape absorbs
      the flattened value's producer directly);
    - Flatten/Reshape nodes whose inferred output shape equals their input
      shape (requires concrete graph input shapes; skipped otherwise).

    Value names at graph outputs are preserved: a no-op producing a graph
    output is only removed when its input value can safely be renamed.
    """
    try:
        shapes = infer_shapes(g) if all(s is not None for _, s in g.inputs) else None
    except ShapeError:
        shapes = None
    counts = _consumer_counts(g)
    producers = _producer_index(g)
    source_names = {n for n, _ in g.inputs} | set(g.initializers)

    def is_noop(node: Node) -> str | None:
        if node.kind == OpKind.IDENTITY:
            return "identity"
        if node.kind == OpKind.FLATTEN and counts.get(node.outputs[0], 0) >= 1:
            consumers = [n for n in g.nodes if node.outputs[0] in n.inputs]
            if (len(consumers) == 1 and consumers[0].kind == OpKind.RESHAPE
                    and node.outputs[0] not in g.outputs):
                return "flatten_into_reshape"
        if node.kind in (OpKind.FLATTEN, OpKind.RESHAPE) and shapes is not None:
            if shapes[node.inputs[0]] == shapes[node.outputs[0]]:
                return "shape_noop"
        return None

    rewrites: list[tuple[str, tuple[str, ...]]] = []
    nodes = list(g.nodes)
    changed = True
    while changed:
        changed = False
        for node in nodes:
            rule = is_noop(node)
            if rule is None:
                continue
            src, dst = node.inputs[0], node.outputs[0]
            rename: dict[str, str] = {dst: src}
            if dst in g.outputs:
                # keep the output name: rename the producer's value instead
                if (src in source_names or src in g.outputs
                        or counts.get(src, 0) != 1):
                    continue
                rename = {src: dst}
                producer = producers.get(src)
                if producer is None:
                    continue
            new_nodes = []
            for n in nodes:
                if n.name == node.name:
                    continue
                ins = tuple(rename.get(i, i) for i in n.inputs)
                outs = tuple(rename.get(o, o) for o in n.outputs)
                new_nodes.append(replace(n, inputs=ins, outputs=outs)
                                 if (ins, outs) != (n.inputs, n.outputs) else n)
            nodes = new_nodes
            counts = _consumer_counts(with_nodes(g, nodes))
            producers = {out: n for n in nodes for out in n.outputs}
            rewrites.append((rule, (node.name,)))
            changed = True
            break

    if not rewrites:
        return g, _report("drop_identity", g, g, [])
    out = with_nodes(g, nodes)
    return out, _report("drop_identity", g, out, rewrites)


PASSES = {
    "fold_batch_norm": fold_batch_norm,
    "fuse_activation": fuse_activation,
    "eliminate_dead": eliminate_dead,
    "drop_identity": drop_identity,
}

DEFAULT_PIPELINE = ("fold_batch_norm", "fuse_activation", "drop_identity",
                    "eliminate_dead")


def run_pipeline(g: Graph, pipeline: tuple[str, ...] | list[str] | None = None
                 ) -> tuple[Graph, list[PassReport]]:
    """Apply passes in order and re-validate the result. The default pipeline
    is fold_batch_norm, fuse_activation, drop_identity, eliminate_dead."""
    names = list(DEFAULT_PIPELINE if pipeline is None else pipeline)
    if len(set(names)) != len(names):
        raise ConfigError(f"pipeline repeats a pass: {names}")
    for name in names:
        if name not in PASSES:
            raise ConfigError(f"unknown pass '{name}' (available: {sorted(PASSES)})")

    diags = errors_only(validate(g))
    if diags:
        raise GraphError("cannot simplify an invalid graph: "
                         + "; ".join(d.message for d in diags))

    reports = []
    out = g
    for name in names:
        out, report = PASSES[name](out)
        reports.append(report)

    diags = errors_only(validate(out))
    if diags:
        raise GraphError("internal pass error, output graph is invalid: "
                         + "; ".join(d.message for d in diags))
    if all(s is not None for _, s in out.inputs):
        infer_shapes(out)  # re-infer: shape errors here are pass bugs
    return out, reports
