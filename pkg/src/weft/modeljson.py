"""Human-writable JSON model format, used for fixtures and as the output of
the `simplify` command. See docs/model-format.md for the schema."""

from __future__ import annotations

import json
import os
from typing import Any

import numpy as np

from .errors import ParseError, ShapeError
from .graph import (
    Attrs,
    BatchNormAttrs,
    ConcatAttrs,
    ConvAttrs,
    GemmAttrs,
    Graph,
    Node,
    OpKind,
    PoolAttrs,
    ReshapeAttrs,
    SoftmaxAttrs,
)
from .tensor import Tensor, checked_dims, numel

_OPS = {k.value: k for k in OpKind}


def _fail(path: str, msg: str):
    raise ParseError(f"{path}: {msg}")


def _expect(obj, key: str, types, path: str, default=_fail):
    if key not in obj:
        if default is _fail:
            _fail(f"{path}.{key}", "missing required field")
        return default
    val = obj[key]
    if not isinstance(val, types):
        _fail(f"{path}.{key}", f"expected {types}, got {type(val).__name__}")
    return val


def _int_list(obj, key: str, path: str, length: int | None = None, default=_fail):
    if key not in obj and default is not _fail:
        return list(default)
    val = _expect(obj, key, list, path)
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in val):
        _fail(f"{path}.{key}", "expected a list of integers")
    if length is not None and len(val) != length:
        _fail(f"{path}.{key}", f"expected {length} entries, got {len(val)}")
    return list(val)


def _parse_attrs(kind: OpKind, obj: dict, path: str) -> Attrs:
    raw = _expect(obj, "attrs", dict, path, default={})

    def pads() -> tuple[int, int, int, int]:
        return tuple(_int_list(raw, "pads", path, 4, default=[0, 0, 0, 0]))

    if kind == OpKind.CONV:
        kernel = _int_list(raw, "kernel", path, 2)
        strides = _int_list(raw, "strides", path, 2, default=[1, 1])
        return ConvAttrs(kernel_h=kernel[0], kernel_w=kernel[1],
                         stride_h=strides[0], stride_w=strides[1],
                         pads=pads(),
                         groups=_expect(raw, "groups", int, path, default=1),
                         fused_relu=bool(_expect(raw, "fused_relu", bool, path,
                                                 default=False)))
    if kind in (OpKind.MAX_POOL, OpKind.AVG_POOL):
        kernel = _int_list(raw, "kernel", path, 2)
        strides = _int_list(raw, "strides", path, 2, default=[1, 1])
        return PoolAttrs(kernel_h=kernel[0], kernel_w=kernel[1],
                         stride_h=strides[0], stride_w=strides[1], pads=pads())
    if kind == OpKind.GEMM:
        return GemmAttrs(trans_b=bool(_expect(raw, "trans_b", bool, path, default=False)),
                         fused_relu=bool(_expect(raw, "fused_relu", bool, path,
                                                 default=False)))
    if kind == OpKind.CONCAT:
        return ConcatAttrs(axis=_expect(raw, "axis", int, path))
    if kind == OpKind.BATCH_NORM:
        return BatchNormAttrs(epsilon=float(_expect(raw, "epsilon", (int, float),
                                                    path, default=1e-5)))
    if kind == OpKind.SOFTMAX:
        return SoftmaxAttrs(axis=_expect(raw, "axis", int, path, default=-1))
    if kind == OpKind.RESHAPE:
        return ReshapeAttrs(target=tuple(_int_list(raw, "shape", path)))
    return None


def _parse_initializer(obj: dict, path: str, base_dir: str) -> tuple[str, Tensor]:
    name = _expect(obj, "name", str, path)
    dims = checked_dims(_int_list(obj, "shape", path))
    if "data_file" in obj:
        rel = _expect(obj, "data_file", str, path)
        full = os.path.join(base_dir, rel)
        with open(full, "rb") as fh:
            vals = np.frombuffer(fh.read(), dtype="<f4")
    else:
        data = _expect(obj, "data", list, path)
        vals = np.asarray(data, dtype=np.float32)
    if vals.size != numel(dims):
        _fail(path, f"initializer '{name}' has {vals.size} values, "
                    f"shape {list(dims)} needs {numel(dims)}")
    return name, Tensor(vals.reshape(dims))


def parse_json_model(text: str, base_dir: str = ".") -> Graph:
    """Parse the JSON model format; `base_dir` resolves data_file references."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        _fail("$", "model must be a JSON object")

    name = _expect(obj, "name", str, "$", default="model")
    inputs = []
    for i, entry in enumerate(_expect(obj, "inputs", list, "$")):
        path = f"$.inputs[{i}]"
        if not isinstance(entry, dict):
            _fail(path, "expected an object")
        iname = _expect(entry, "name", str, path)
        shape = entry.get("shape")
        inputs.append((iname, checked_dims(shape) if shape is not None else None))

    outputs = _expect(obj, "outputs", list, "$")
    if not all(isinstance(o, str) for o in outputs):
        _fail("$.outputs", "expected a list of value names")

    nodes = []
    for i, entry in enumerate(_expect(obj, "nodes", list, "$")):
        path = f"$.nodes[{i}]"
        if not isinstance(entry, dict):
            _fail(path, "expected an object")
        op = _expect(entry, "op", str, path)
        kind = _OPS.get(op)
        if kind is None:
            _fail(f"{path}.op", f"unknown op '{op}' (supported: {sorted(_OPS)})")
        node_in = _expect(entry, "inputs", list, path)
        node_out = _expect(entry, "outputs", list, path)
        if not all(isinstance(v, str) for v in node_in + node_out):
            _fail(path, "inputs/outputs must be value names")
        try:
            attrs = _parse_attrs(kind, entry, path)
        except ParseError:
            raise
        except (TypeError, ValueError, ShapeError) as exc:
            _fail(f"{path}.attrs", str(exc))
        nodes.append(Node(
            name=_expect(entry, "name", str, path, default=f"{op.lower()}_{i}"),
            kind=kind, inputs=tuple(node_in), outputs=tuple(node_out), attrs=attrs))

    initializers = {}
    for i, entry in enumerate(_expect(obj, "initializers", list, "$", default=[])):
        path = f"$.initializers[{i}]"
        if not isinstance(entry, dict):
            _fail(path, "expected an object")
        try:
            iname, tensor = _parse_initializer(entry, path, base_dir)
        except OSError:
            raise
        except ParseError:
            raise
        except (ShapeError, ValueError, TypeError) as exc:
            _fail(path, str(exc))
        initializers[iname] = tensor

    return Graph(name=name, inputs=inputs, outputs=list(outputs),
                 nodes=nodes, initializers=initializers)


def load_json_model(path: str) -> Graph:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_json_model(text, base_dir=os.path.dirname(os.path.abspath(path)))


def _attrs_to_json(attrs: Attrs) -> dict[str, Any]:
    if isinstance(attrs, ConvAttrs):
        out: dict[str, Any] = {
            "kernel": [attrs.kernel_h, attrs.kernel_w],
            "strides": [attrs.stride_h, attrs.stride_w],
            "pads": list(attrs.pads),
            "groups": attrs.groups,
        }
        if attrs.fused_relu:
            out["fused_relu"] = True
        return out
    if isinstance(attrs, PoolAttrs):
        return {"kernel": [attrs.kernel_h, attrs.kernel_w],
                "strides": [attrs.stride_h, attrs.stride_w],
                "pads": list(attrs.pads)}
    if isinstance(attrs, GemmAttrs):
        out = {"trans_b": attrs.trans_b}
        if attrs.fused_relu:
            out["fused_relu"] = True
        return out
    if isinstance(attrs, ConcatAttrs):
        return {"axis": attrs.axis}
    if isinstance(attrs, BatchNormAttrs):
        return {"epsilon": attrs.epsilon}
    if isinstance(attrs, SoftmaxAttrs):
        return {"axis": attrs.axis}
    if isinstance(attrs, ReshapeAttrs):
        return {"shape": list(attrs.target)}
    return {}


def graph_to_json(g: Graph) -> dict[str, Any]:
    """Graph as a JSON-serializable dict with inline weights. float32 values
    round-trip exactly through their double repr."""
    return {
        "name": g.name,
        "inputs": [{"name": n, **({"shape": list(s)} if s else {})} for n, s in g.inputs],
        "outputs": list(g.outputs),
        "nodes": [
            {
                "name": node.name,
                "op": node.kind.value,
                "inputs": list(node.inputs),
                "outputs": list(node.outputs),
                **({"attrs": _attrs_to_json(node.attrs)} if node.attrs else {}),
            }
            for node in g.nodes
        ],
        "initializers": [
            {"name": name, "shape": list(t.shape),
             "data": [float(v) for v in t.data.flat]}
            for name, t in g.initializers.items()
        ],
    }


def save_json_model(g: Graph, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_json(g), fh, indent=1)
        fh.write("\n")
