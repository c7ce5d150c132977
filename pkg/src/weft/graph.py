"""Computation-graph IR: nodes, validation, topological order, shape inference.

Graphs are plain data. Passes and the planner never mutate a validated graph;
they build new ones, so read-sharing across threads is safe.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from .errors import GraphError, ShapeError
from .tensor import Tensor, checked_dims

ShapeT = tuple[int, ...]


class OpKind(str, Enum):
    CONV = "Conv"
    BATCH_NORM = "BatchNorm"
    RELU = "Relu"
    MAX_POOL = "MaxPool"
    AVG_POOL = "AvgPool"
    GLOBAL_AVG_POOL = "GlobalAvgPool"
    GEMM = "Gemm"
    ADD = "Add"
    CONCAT = "Concat"
    FLATTEN = "Flatten"
    RESHAPE = "Reshape"
    SOFTMAX = "Softmax"
    IDENTITY = "Identity"


@dataclass(frozen=True)
class ConvAttrs:
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    # (top, left, bottom, right)
    pads: tuple[int, int, int, int] = (0, 0, 0, 0)
    groups: int = 1
    fused_relu: bool = False


@dataclass(frozen=True)
class PoolAttrs:
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    pads: tuple[int, int, int, int] = (0, 0, 0, 0)


@dataclass(frozen=True)
class GemmAttrs:
    trans_b: bool = False
    fused_relu: bool = False


@dataclass(frozen=True)
class ConcatAttrs:
    axis: int


@dataclass(frozen=True)
class BatchNormAttrs:
    epsilon: float = 1e-5


@dataclass(frozen=True)
class SoftmaxAttrs:
    axis: int = -1


@dataclass(frozen=True)
class ReshapeAttrs:
    # target extents; 0 copies the input dim, -1 (at most once) is inferred
    target: tuple[int, ...]


Attrs = Optional[
    ConvAttrs | PoolAttrs | GemmAttrs | ConcatAttrs
    | BatchNormAttrs | SoftmaxAttrs | ReshapeAttrs
]


@dataclass(frozen=True)
class Node:
    name: str
    kind: OpKind
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    attrs: Attrs = None


@dataclass
class Graph:
    name: str
    inputs: list[tuple[str, ShapeT | None]]
    outputs: list[str]
    nodes: list[Node]
    initializers: dict[str, Tensor] = field(default_factory=dict)

    def input_names(self) -> list[str]:
        return [n for n, _ in self.inputs]


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str


def _check_attrs(node: Node) -> list[str]:
    problems = []
    a = node.attrs
    if isinstance(a, (ConvAttrs, PoolAttrs)):
        if a.stride_h < 1 or a.stride_w < 1:
            problems.append(f"{node.name}: strides must be >= 1")
        if any(p < 0 for p in a.pads):
            problems.append(f"{node.name}: pads must be >= 0")
        if a.kernel_h < 1 or a.kernel_w < 1:
            problems.append(f"{node.name}: kernel extents must be >= 1")
    if isinstance(a, ConvAttrs) and a.groups < 1:
        problems.append(f"{node.name}: groups must be >= 1")
    return problems


def validate(g: Graph) -> list[Diagnostic]:
    """Structural diagnostics. Empty list iff all graph invariants hold;
    an unused initializer is reported at warning severity."""
    diags: list[Diagnostic] = []

    producers: dict[str, str] = {}
    for name, _ in g.inputs:
        producers.setdefault(name, "<graph input>")
    for name in g.initializers:
        if name in producers:
            diags.append(Diagnostic("error", f"initializer '{name}' shadows a graph input"))
        producers.setdefault(name, "<initializer>")

    seen_nodes: set[str] = set()
    for node in g.nodes:
        if node.name in seen_nodes:
            diags.append(Diagnostic("error", f"duplicate node name '{node.name}'"))
        seen_nodes.add(node.name)
        if len(node.outputs) != 1:
            diags.append(Diagnostic(
                "error", f"node '{node.name}' must have exactly one output"))
        if not node.inputs:
            diags.append(Diagnostic("error", f"node '{node.name}' has no inputs"))
        for out in node.outputs:
            if out in producers:
                diags.append(Diagnostic(
                    "error", f"value '{out}' has multiple producers "
                             f"({producers[out]} and {node.name})"))
            else:
                producers[out] = node.name
        for msg in _check_attrs(node):
            diags.append(Diagnostic("error", msg))

    for node in g.nodes:
        for inp in node.inputs:
            if inp not in producers:
                diags.append(Diagnostic(
                    "error", f"node '{node.name}' consumes undefined value '{inp}'"))

    for out in g.outputs:
        if out not in producers:
            diags.append(Diagnostic("error", f"graph output '{out}' is never produced"))

    consumed = {inp for node in g.nodes for inp in node.inputs}
    for name in g.initializers:
        if name not in consumed and name not in g.outputs:
            diags.append(Diagnostic("warning", f"initializer '{name}' is unused"))

    if not any(d.severity == "error" for d in diags):
        try:
            topo_sort(g)
        except GraphError as exc:
            diags.append(Diagnostic("error", str(exc)))
    return diags


def errors_only(diags: list[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diags if d.severity == "error"]


def topo_sort(g: Graph) -> list[Node]:
    """Kahn's algorithm; ties broken by node declaration order."""
    index = {node.name: i for i, node in enumerate(g.nodes)}
    producer_of: dict[str, str] = {}
    for node in g.nodes:
        for out in node.outputs:
            producer_of[out] = node.name

    deps: dict[str, set[str]] = {node.name: set() for node in g.nodes}
    dependents: dict[str, set[str]] = {node.name: set() for node in g.nodes}
    for node in g.nodes:
        for inp in node.inputs:
            prod = producer_of.get(inp)
            if prod is not None and prod != node.name:
                deps[node.name].add(prod)
                dependents[prod].add(node.name)

    ready = [index[name] for name, d in deps.items() if not d]
    heapq.heapify(ready)
    order: list[Node] = []
    remaining = {name: len(d) for name, d in deps.items()}
    while ready:
        i = heapq.heappop(ready)
        node = g.nodes[i]
        order.append(node)
        for dep in dependents[node.name]:
            remaining[dep] -= 1
            if remaining[dep] == 0:
                heapq.heappush(ready, index[dep])
    if len(order) != len(g.nodes):
        stuck = sorted(name for name, n in remaining.items() if n > 0)
        raise GraphError(f"graph contains a cycle through: {', '.join(stuck)}")
    return order


def conv_out_extent(extent: int, kernel: int, stride: int, pad_lo: int, pad_hi: int) -> int:
    out = (extent + pad_lo + pad_hi - kernel) // stride + 1
    if out < 1:
        raise ShapeError(
            f"kernel {kernel} with pads ({pad_lo},{pad_hi}) does not fit extent {extent}")
    return out


def normalize_axis(axis: int, rank: int, node: str) -> int:
    a = axis + rank if axis < 0 else axis
    if not 0 <= a < rank:
        raise ShapeError(f"node '{node}': axis {axis} out of range for rank {rank}")
    return a


def _infer_node(node: Node, shapes: dict[str, ShapeT]) -> ShapeT:
    def inp(i: int) -> ShapeT:
        return shapes[node.inputs[i]]

    kind = node.kind
    if kind in (OpKind.RELU, OpKind.IDENTITY, OpKind.SOFTMAX):
        return inp(0)

    if kind == OpKind.BATCH_NORM:
        x = inp(0)
        if len(x) < 2:
            raise ShapeError(f"node '{node.name}': BatchNorm input must have a channel axis")
        c = x[1]
        for i in range(1, 5):
            if inp(i) != (c,):
                raise ShapeError(
                    f"node '{node.name}': parameter {node.inputs[i]} has shape "
                    f"{inp(i)}, expected ({c},)")
        return x

    if kind == OpKind.ADD:
        if inp(0) != inp(1):
            raise ShapeError(
                f"node '{node.name}': Add operands differ: {inp(0)} vs {inp(1)}")
        return inp(0)

    if kind == OpKind.CONCAT:
        assert isinstance(node.attrs, ConcatAttrs)
        first = inp(0)
        axis = normalize_axis(node.attrs.axis, len(first), node.name)
        total = 0
        for i in range(len(node.inputs)):
            s = inp(i)
            if len(s) != len(first) or any(
                    s[d] != first[d] for d in range(len(first)) if d != axis):
                raise ShapeError(
                    f"node '{node.name}': concat operand {i} shape {s} "
                    f"incompatible with {first} on axis {axis}")
            total += s[axis]
        out = list(first)
        out[axis] = total
        return tuple(out)

    if kind == OpKind.FLATTEN:
        x = inp(0)
        if len(x) < 2:
            raise ShapeError(f"node '{node.name}': Flatten input must have rank >= 2")
        n = 1
        for d in x[1:]:
            n *= d
        return (x[0], n)

    if kind == OpKind.RESHAPE:
        assert isinstance(node.attrs, ReshapeAttrs)
        x = inp(0)
        total = 1
        for d in x:
            total *= d
        target = list(node.attrs.target)
        for i, d in enumerate(target):
            if d == 0:
                if i >= len(x):
                    raise ShapeError(f"node '{node.name}': dim {i} copies a missing input dim")
                target[i] = x[i]
        if target.count(-1) > 1:
            raise ShapeError(f"node '{node.name}': more than one -1 in reshape target")
        if -1 in target:
            known = 1
            for d in target:
                if d != -1:
                    known *= d
            if known == 0 or total % known != 0:
                raise ShapeError(
                    f"node '{node.name}': cannot infer -1 in {node.attrs.target} "
                    f"from input {x}")
            target[target.index(-1)] = total // known
        out = checked_dims(target)
        got = 1
        for d in out:
            got *= d
        if got != total:
            raise ShapeError(
                f"node '{node.name}': reshape target {out} has {got} elements, "
                f"input {x} has {total}")
        return out

    if kind == OpKind.GLOBAL_AVG_POOL:
        x = inp(0)
        if len(x) != 4:
            raise ShapeError(f"node '{node.name}': GlobalAvgPool needs a rank-4 input")
        return (x[0], x[1], 1, 1)

    if kind in (OpKind.MAX_POOL, OpKind.AVG_POOL):
        assert isinstance(node.attrs, PoolAttrs)
        x = inp(0)
        if len(x) != 4:
            raise ShapeError(f"node '{node.name}': pooling needs a rank-4 input")
        a = node.attrs
        pt, pl, pb, pr = a.pads
        ho = conv_out_extent(x[2], a.kernel_h, a.stride_h, pt, pb)
        wo = conv_out_extent(x[3], a.kernel_w, a.stride_w, pl, pr)
        return (x[0], x[1], ho, wo)

    if kind == OpKind.CONV:
        assert isinstance(node.attrs, ConvAttrs)
        x, w = inp(0), inp(1)
        if len(x) != 4 or len(w) != 4:
            raise ShapeError(f"node '{node.name}': Conv needs rank-4 input and weight")
        a = node.attrs
        n, c_in, h, wt = x
        c_out, c_per_group, kh, kw = w
        if (kh, kw) != (a.kernel_h, a.kernel_w):
            raise ShapeError(
                f"node '{node.name}': kernel attrs ({a.kernel_h},{a.kernel_w}) "
                f"disagree with weight {w}")
        if c_in % a.groups != 0 or c_out % a.groups != 0:
            raise ShapeError(
                f"node '{node.name}': groups={a.groups} does not divide "
                f"C_in={c_in} and C_out={c_out}")
        if c_per_group != c_in // a.groups:
            raise ShapeError(
                f"node '{node.name}': weight expects {c_per_group} channels per group, "
                f"input provides {c_in // a.groups}")
        if len(node.inputs) > 2 and shapes[node.inputs[2]] != (c_out,):
            raise ShapeError(
                f"node '{node.name}': bias shape {shapes[node.inputs[2]]}, "
                f"expected ({c_out},)")
        pt, pl, pb, pr = a.pads
        ho = conv_out_extent(h, kh, a.stride_h, pt, pb)
        wo = conv_out_extent(wt, kw, a.stride_w, pl, pr)
        return (n, c_out, ho, wo)

    if kind == OpKind.GEMM:
        assert isinstance(node.attrs, GemmAttrs)
        x, w = inp(0), inp(1)
        if len(x) != 2 or len(w) != 2:
            raise ShapeError(f"node '{node.name}': Gemm needs rank-2 input and weight")
        k = x[1]
        if node.attrs.trans_b:
            m, kw_ = w
        else:
            kw_, m = w
        if kw_ != k:
            raise ShapeError(
                f"node '{node.name}': inner dims differ: input {x}, weight {w}, "
                f"trans_b={node.attrs.trans_b}")
        if len(node.inputs) > 2 and shapes[node.inputs[2]] not in ((m,), (1, m)):
            raise ShapeError(
                f"node '{node.name}': bias shape {shapes[node.inputs[2]]}, "
                f"expected ({m},)")
        return (x[0], m)

    raise ShapeError(f"node '{node.name}': no shape rule for {kind.value}")


def infer_shapes(g: Graph, input_shapes: dict[str, ShapeT] | None = None) -> dict[str, ShapeT]:
    """Concrete shape for every value name. Graph input shapes come from the
    graph itself unless overridden by `input_shapes`."""
    input_shapes = input_shapes or {}
    shapes: dict[str, ShapeT] = {}
    for name, shape in g.inputs:
        got = input_shapes.get(name, shape)
        if got is None:
            raise ShapeError(f"graph input '{name}' has no shape; pass one explicitly")
        shapes[name] = checked_dims(got)
    for name, t in g.initializers.items():
        shapes[name] = t.shape
    for node in topo_sort(g):
        out_shape = _infer_node(node, shapes)
        shapes[node.outputs[0]] = out_shape
    return shapes


def _attr_summary(node: Node) -> str:
    a = node.attrs
    if isinstance(a, ConvAttrs):
        s = (f"k{a.kernel_h}x{a.kernel_w} s{a.stride_h}x{a.stride_w} "
             f"p{','.join(map(str, a.pads))}")
        if a.groups != 1:
            s += f" g{a.groups}"
        if a.fused_relu:
            s += " +relu"
        return s
    if isinstance(a, PoolAttrs):
        return (f"k{a.kernel_h}x{a.kernel_w} s{a.stride_h}x{a.stride_w} "
                f"p{','.join(map(str, a.pads))}")
    if isinstance(a, GemmAttrs):
        s = "transB" if a.trans_b else ""
        if a.fused_relu:
            s += " +relu"
        return s.strip()
    if isinstance(a, ConcatAttrs):
        return f"axis={a.axis}"
    if isinstance(a, BatchNormAttrs):
        return f"eps={a.epsilon:g}"
    if isinstance(a, SoftmaxAttrs):
        return f"axis={a.axis}"
    if isinstance(a, ReshapeAttrs):
        return f"target={list(a.target)}"
    return ""


def format_graph(g: Graph, shapes: dict[str, ShapeT] | None = None) -> str:
    """One line per node: name, kind, attrs, input/output shapes."""
    lines = [f"graph {g.name}: {len(g.nodes)} nodes, "
             f"{len(g.initializers)} initializers"]
    def fmt(name: str) -> str:
        if shapes and name in shapes:
            return f"{name}{list(shapes[name])}"
        return name
    for node in g.nodes:
        ins = ", ".join(fmt(i) for i in node.inputs)
        outs = ", ".join(fmt(o) for o in node.outputs)
        attr = _attr_summary(node)
        attr = f"  [{attr}]" if attr else ""
        lines.append(f"  {node.name}: {node.kind.value}({ins}) -> {outs}{attr}")
    return "\n".join(lines)


def with_nodes(g: Graph, nodes: list[Node],
               initializers: dict[str, Tensor] | None = None) -> Graph:
    """Copy of g with a new node list (and optionally new initializers)."""
    return Graph(
        name=g.name,
        inputs=list(g.inputs),
        outputs=list(g.outputs),
        nodes=nodes,
        initializers=dict(g.initializers if initializers is None else initializers),
    )


def node_replaced(node: Node, **changes) -> Node:
    return replace(node, **changes)
