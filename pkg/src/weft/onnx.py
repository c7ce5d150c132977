"""ONNX model ingestion: a from-scratch protobuf wire-format decoder for the
subset of the format this runtime executes.

The decoder is zero-copy: length-delimited payloads are memoryview spans over
the input buffer; tensor data is copied exactly once, when materialized.
Unknown fields are skipped by wire type, so files from newer exporters still
load as long as they stay inside the supported operator set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LimitError, ParseError, TruncatedError, UnsupportedError
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
from .tensor import Tensor

# --- wire primitives ---------------------------------------------------------

WIRE_VARINT = 0
WIRE_FIXED64 = 1
WIRE_LEN = 2
WIRE_FIXED32 = 5


@dataclass(frozen=True)
class WireRecord:
    field_number: int
    wire_type: int
    payload: int | memoryview  # int for varint, span for the other types


def decode_varint(data, offset: int) -> tuple[int, int]:
    """Little-endian base-128 varint at `offset`; returns (value, next_offset)."""
    result = 0
    shift = 0
    pos = offset
    while True:
        if pos >= len(data):
            raise TruncatedError(f"varint runs past end of buffer at offset {offset}")
        if pos - offset >= 10:
            raise ParseError(f"varint longer than 10 bytes at offset {offset}")
        b = data[pos]
        result |= (b & 0x7F) << shift
        shift += 7
        pos += 1
        if not b & 0x80:
            return result, pos


def to_signed64(value: int) -> int:
    return value - (1 << 64) if value >= (1 << 63) else value


def next_record(data, offset: int) -> tuple[WireRecord, int]:
    """Decode one (tag, payload) record starting at a field boundary."""
    tag, pos = decode_varint(data, offset)
    field_number = tag >> 3
    wire_type = tag & 7
    if field_number < 1:
        raise ParseError(f"field number 0 at offset {offset}")
    if wire_type == WIRE_VARINT:
        value, pos = decode_varint(data, pos)
        return WireRecord(field_number, wire_type, value), pos
    if wire_type == WIRE_FIXED64:
        if pos + 8 > len(data):
            raise TruncatedError(f"fixed64 runs past end of buffer at offset {offset}")
        return WireRecord(field_number, wire_type, memoryview(data)[pos:pos + 8]), pos + 8
    if wire_type == WIRE_LEN:
        length, pos = decode_varint(data, pos)
        if pos + length > len(data):
            raise TruncatedError(
                f"length-delimited field of {length} bytes runs past end of buffer")
        return WireRecord(field_number, wire_type, memoryview(data)[pos:pos + length]), pos + length
    if wire_type == WIRE_FIXED32:
        if pos + 4 > len(data):
            raise TruncatedError(f"fixed32 runs past end of buffer at offset {offset}")
        return WireRecord(field_number, wire_type, memoryview(data)[pos:pos + 4]), pos + 4
    raise ParseError(f"unsupported wire type {wire_type} at offset {offset}")


def _records(span) -> list[WireRecord]:
    out = []
    pos = 0
    while pos < len(span):
        rec, pos = next_record(span, pos)
        out.append(rec)
    return out


def _span(rec: WireRecord, what: str) -> memoryview:
    if rec.wire_type != WIRE_LEN:
        raise ParseError(f"{what}: expected length-delimited field, got wire type {rec.wire_type}")
    return rec.payload  # type: ignore[return-value]


def _varint(rec: WireRecord, what: str) -> int:
    if rec.wire_type != WIRE_VARINT:
        raise ParseError(f"{what}: expected varint field, got wire type {rec.wire_type}")
    return rec.payload  # type: ignore[return-value]


def _text(rec: WireRecord, what: str) -> str:
    return bytes(_span(rec, what)).decode("utf-8")


def _float32(rec: WireRecord, what: str) -> float:
    if rec.wire_type != WIRE_FIXED32:
        raise ParseError(f"{what}: expected fixed32 field, got wire type {rec.wire_type}")
    return float(np.frombuffer(rec.payload, dtype="<f4")[0])


def _repeated_int64(records: list[WireRecord], what: str) -> list[int]:
    """Repeated int64 values; accepts both packed and unpacked encodings."""
    out: list[int] = []
    for rec in records:
        if rec.wire_type == WIRE_VARINT:
            out.append(to_signed64(rec.payload))
        elif rec.wire_type == WIRE_LEN:
            pos = 0
            span = rec.payload
            while pos < len(span):
                v, pos = decode_varint(span, pos)
                out.append(to_signed64(v))
        else:
            raise ParseError(f"{what}: bad wire type {rec.wire_type} for repeated int64")
    return out


# --- limits ------------------------------------------------------------------

_OP_TABLE = {
    "Conv": OpKind.CONV,
    "BatchNormalization": OpKind.BATCH_NORM,
    "Relu": OpKind.RELU,
    "MaxPool": OpKind.MAX_POOL,
    "AveragePool": OpKind.AVG_POOL,
    "GlobalAveragePool": OpKind.GLOBAL_AVG_POOL,
    "Gemm": OpKind.GEMM,
    "Add": OpKind.ADD,
    "Concat": OpKind.CONCAT,
    "Flatten": OpKind.FLATTEN,
    "Reshape": OpKind.RESHAPE,
    "Softmax": OpKind.SOFTMAX,
    "Identity": OpKind.IDENTITY,
}


@dataclass(frozen=True)
class OnnxLimits:
    max_message_bytes: int = 256 * 1024 * 1024
    max_nesting_depth: int = 8  # Model > Graph > Node > Attribute > Tensor and type chains
    supported_op_types: frozenset[str] = field(
        default_factory=lambda: frozenset(_OP_TABLE))


DEFAULT_LIMITS = OnnxLimits()

# TensorProto.DataType values we care about
_DTYPE_FLOAT = 1
_DTYPE_INT64 = 7


@dataclass
class _RawTensor:
    name: str = ""
    dims: list[int] = field(default_factory=list)
    data_type: int = 0
    raw_data: memoryview | None = None
    float_records: list[WireRecord] = field(default_factory=list)
    int64_records: list[WireRecord] = field(default_factory=list)


@dataclass
class _RawAttr:
    name: str = ""
    f: float | None = None
    i: int | None = None
    s: str | None = None
    ints: list[int] = field(default_factory=list)
    floats: list[float] = field(default_factory=list)
    tensor: _RawTensor | None = None


@dataclass
class _RawNode:
    name: str = ""
    op_type: str = ""
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    attrs: dict[str, _RawAttr] = field(default_factory=dict)


class _Decoder:
    """Walks the protobuf tree. Field numbers follow the published onnx.proto
    schema; each _parse_* method lists the fields it interprets and skips the
    rest by wire type."""

    def __init__(self, limits: OnnxLimits):
        self.limits = limits

    def _enter(self, depth: int, what: str) -> int:
        if depth + 1 > self.limits.max_nesting_depth:
            raise LimitError(
                f"{what}: nesting depth exceeds limit {self.limits.max_nesting_depth}")
        return depth + 1

    def parse_model(self, data) -> tuple[list[_RawNode], list[_RawTensor],
                                         list[tuple[str, tuple[int, ...] | None]],
                                         list[str], str]:
        if len(data) > self.limits.max_message_bytes:
            raise LimitError(
                f"model is {len(data)} bytes, limit {self.limits.max_message_bytes}")
        graph_span = None
        for rec in _records(memoryview(data)):
            if rec.field_number == 7:      # ModelProto.graph
                graph_span = _span(rec, "ModelProto.graph")
            # 1 ir_version, 2..6 producer/domain strings, 8 opset_import,
            # 14 metadata_props, 20 training_info, 25 functions: skipped
        if graph_span is None:
            raise ParseError("ModelProto has no graph")
        return self.parse_graph(graph_span, depth=self._enter(1, "graph"))

    def parse_graph(self, span, depth: int):
        nodes: list[_RawNode] = []
        tensors: list[_RawTensor] = []
        inputs: list[tuple[str, tuple[int, ...] | None]] = []
        outputs: list[str] = []
        name = ""
        for rec in _records(span):
            if rec.field_number == 1:      # GraphProto.node
                nodes.append(self.parse_node(
                    _span(rec, "node"), self._enter(depth, "node")))
            elif rec.field_number == 2:    # GraphProto.name
                name = _text(rec, "graph name")
            elif rec.field_number == 5:    # GraphProto.initializer
                tensors.append(self.parse_tensor(
                    _span(rec, "initializer"), self._enter(depth, "initializer")))
            elif rec.field_number == 11:   # GraphProto.input
                inputs.append(self.parse_value_info(
                    _span(rec, "input"), self._enter(depth, "input")))
            elif rec.field_number == 12:   # GraphProto.output
                outputs.append(self.parse_value_info(
                    _span(rec, "output"), self._enter(depth, "output"))[0])
            # 10 doc_string, 13 value_info, 14 quantization, 15 sparse: skipped
        return nodes, tensors, inputs, outputs, name

    def parse_node(self, span, depth: int) -> _RawNode:
        node = _RawNode()
        for rec in _records(span):
            if rec.field_number == 1:      # NodeProto.input
                node.inputs.append(_text(rec, "node input"))
            elif rec.field_number == 2:    # NodeProto.output
                node.outputs.append(_text(rec, "node output"))
            elif rec.field_number == 3:    # NodeProto.name
                node.name = _text(rec, "node name")
            elif rec.field_number == 4:    # NodeProto.op_type
                node.op_type = _text(rec, "op_type")
            elif rec.field_number == 5:    # NodeProto.attribute
                attr = self.parse_attribute(
                    _span(rec, "attribute"), self._enter(depth, "attribute"))
                node.attrs[attr.name] = attr
            # 6 doc_string, 7 domain: skipped
        return node

    def parse_attribute(self, span, depth: int) -> _RawAttr:
        attr = _RawAttr()
        for rec in _records(span):
            if rec.field_number == 1:      # AttributeProto.name
                attr.name = _text(rec, "attribute name")
            elif rec.field_number == 2:    # AttributeProto.f
                attr.f = _float32(rec, "attribute f")
            elif rec.field_number == 3:    # AttributeProto.i
                attr.i = to_signed64(_varint(rec, "attribute i"))
            elif rec.field_number == 4:    # AttributeProto.s
                attr.s = _text(rec, "attribute s")
            elif rec.field_number == 5:    # AttributeProto.t
                attr.tensor = self.parse_tensor(
                    _span(rec, "attribute tensor"), self._enter(depth, "attribute tensor"))
            elif rec.field_number == 6:    # AttributeProto.g: subgraphs = control flow
                raise UnsupportedError("graph-valued attributes (control flow) not supported")
            elif rec.field_number == 7:    # AttributeProto.floats
                if rec.wire_type == WIRE_FIXED32:
                    attr.floats.append(_float32(rec, "attribute floats"))
                else:
                    attr.floats.extend(
                        np.frombuffer(_span(rec, "attribute floats"), dtype="<f4").tolist())
            elif rec.field_number == 8:    # AttributeProto.ints
                attr.ints.extend(_repeated_int64([rec], "attribute ints"))
            # 13 doc_string, 20 type, 21 ref_attr_name: skipped
        return attr

    def parse_tensor(self, span, depth: int) -> _RawTensor:
        t = _RawTensor()
        for rec in _records(span):
            if rec.field_number == 1:      # TensorProto.dims
                t.dims.extend(_repeated_int64([rec], "tensor dims"))
            elif rec.field_number == 2:    # TensorProto.data_type
                t.data_type = _varint(rec, "tensor data_type")
            elif rec.field_number == 4:    # TensorProto.float_data
                t.float_records.append(rec)
            elif rec.field_number == 7:    # TensorProto.int64_data
                t.int64_records.append(rec)
            elif rec.field_number == 8:    # TensorProto.name
                t.name = _text(rec, "tensor name")
            elif rec.field_number == 9:    # TensorProto.raw_data
                t.raw_data = _span(rec, "tensor raw_data")
            elif rec.field_number == 13:   # TensorProto.external_data
                raise UnsupportedError("external tensor data not supported")
            # 3 segment, 5/6/10/11 other dtypes' data, 12 doc_string: skipped
        return t

    def parse_value_info(self, span, depth: int) -> tuple[str, tuple[int, ...] | None]:
        name = ""
        shape: tuple[int, ...] | None = None
        for rec in _records(span):
            if rec.field_number == 1:      # ValueInfoProto.name
                name = _text(rec, "value name")
            elif rec.field_number == 2:    # ValueInfoProto.type
                shape = self.parse_type(
                    _span(rec, "value type"), self._enter(depth, "value type"), name)
        return name, shape

    def parse_type(self, span, depth: int, value_name: str) -> tuple[int, ...] | None:
        for rec in _records(span):
            if rec.field_number == 1:      # TypeProto.tensor_type
                return self.parse_tensor_type(
                    _span(rec, "tensor type"), self._enter(depth, "tensor type"), value_name)
        return None

    def parse_tensor_type(self, span, depth: int, value_name: str) -> tuple[int, ...] | None:
        dims: list[int] | None = None
        for rec in _records(span):
            if rec.field_number == 1:      # TypeProto.Tensor.elem_type
                if _varint(rec, "elem_type") != _DTYPE_FLOAT:
                    raise UnsupportedError(
                        f"value '{value_name}': only float32 tensors are supported")
            elif rec.field_number == 2:    # TypeProto.Tensor.shape
                dims = self.parse_shape(
                    _span(rec, "tensor shape"), self._enter(depth, "tensor shape"))
        if dims is None or any(d is None for d in dims):
            return None
        return tuple(dims)  # type: ignore[arg-type]

    def parse_shape(self, span, depth: int) -> list[int | None]:
        dims: list[int | None] = []
        for rec in _records(span):
            if rec.field_number == 1:      # TensorShapeProto.dim
                dims.append(self.parse_dim(
                    _span(rec, "shape dim"), self._enter(depth, "shape dim")))
        return dims

    def parse_dim(self, span, depth: int) -> int | None:
        for rec in _records(span):
            if rec.field_number == 1:      # Dimension.dim_value
                return to_signed64(_varint(rec, "dim_value"))
            if rec.field_number == 2:      # Dimension.dim_param: symbolic
                return None
        return None


# --- materialization ---------------------------------------------------------

def _float_tensor(raw: _RawTensor) -> Tensor:
    if not raw.dims:
        raise UnsupportedError(f"tensor '{raw.name}': rank-0 tensors not supported")
    if raw.raw_data is not None:
        vals = np.frombuffer(raw.raw_data, dtype="<f4").copy()
    else:
        chunks = []
        for rec in raw.float_records:
            if rec.wire_type == WIRE_FIXED32:
                chunks.append(np.frombuffer(rec.payload, dtype="<f4"))
            else:
                chunks.append(np.frombuffer(_span(rec, "float_data"), dtype="<f4"))
        vals = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.float32)
    n = int(np.prod(raw.dims))
    if vals.size != n:
        raise ParseError(
            f"tensor '{raw.name}': {vals.size} float values, dims {raw.dims} need {n}")
    return Tensor(vals.reshape(raw.dims))


def _int64_values(raw: _RawTensor) -> list[int]:
    if raw.raw_data is not None:
        return [int(v) for v in np.frombuffer(raw.raw_data, dtype="<i8")]
    return _repeated_int64(raw.int64_records, f"tensor '{raw.name}'")


def _attr_ints(node: _RawNode, name: str, default: list[int] | None) -> list[int]:
    attr = node.attrs.get(name)
    if attr is None:
        if default is None:
            raise ParseError(f"node '{node.name}': missing required attribute '{name}'")
        return list(default)
    return list(attr.ints)


def _attr_int(node: _RawNode, name: str, default: int) -> int:
    attr = node.attrs.get(name)
    return default if attr is None or attr.i is None else attr.i


def _attr_float(node: _RawNode, name: str, default: float) -> float:
    attr = node.attrs.get(name)
    return default if attr is None or attr.f is None else attr.f


def _pads4(node: _RawNode) -> tuple[int, int, int, int]:
    pads = _attr_ints(node, "pads", [0, 0, 0, 0])
    if len(pads) != 4:
        raise UnsupportedError(f"node '{node.name}': only 2-D pads supported, got {pads}")
    # ONNX order (begin_h, begin_w, end_h, end_w) == (top, left, bottom, right)
    return tuple(pads)  # type: ignore[return-value]


def _hw(node: _RawNode, name: str, default: list[int] | None) -> tuple[int, int]:
    vals = _attr_ints(node, name, default)
    if len(vals) != 2:
        raise UnsupportedError(f"node '{node.name}': only 2-D {name} supported, got {vals}")
    return vals[0], vals[1]


def _check_window_attrs(node: _RawNode) -> None:
    auto_pad = node.attrs.get("auto_pad")
    if auto_pad is not None and auto_pad.s not in (None, "", "NOTSET"):
        raise UnsupportedError(f"node '{node.name}': auto_pad={auto_pad.s} not supported")
    dil = node.attrs.get("dilations")
    if dil is not None and any(d != 1 for d in dil.ints):
        raise UnsupportedError(f"node '{node.name}': dilations {dil.ints} not supported")


def _convert_node(raw: _RawNode, index: int,
                  float_inits: dict[str, Tensor],
                  int64_inits: dict[str, list[int]]) -> Node:
    kind = _OP_TABLE[raw.op_type]
    name = raw.name or f"{raw.op_type.lower()}_{index}"
    inputs = tuple(raw.inputs)
    outputs = tuple(raw.outputs)
    attrs: Attrs = None

    if kind == OpKind.CONV:
        _check_window_attrs(raw)
        if "kernel_shape" in raw.attrs:
            kh, kw = _hw(raw, "kernel_shape", None)
        else:
            w = float_inits.get(raw.inputs[1])
            if w is None or len(w.shape) != 4:
                raise ParseError(
                    f"node '{name}': kernel_shape absent and weight shape unknown")
            kh, kw = w.shape[2], w.shape[3]
        sh, sw = _hw(raw, "strides", [1, 1])
        attrs = ConvAttrs(kernel_h=kh, kernel_w=kw, stride_h=sh, stride_w=sw,
                          pads=_pads4(raw), groups=_attr_int(raw, "group", 1))
    elif kind in (OpKind.MAX_POOL, OpKind.AVG_POOL):
        _check_window_attrs(raw)
        if _attr_int(raw, "ceil_mode", 0) != 0:
            raise UnsupportedError(f"node '{name}': ceil_mode pooling not supported")
        if kind == OpKind.MAX_POOL and _attr_int(raw, "storage_order", 0) != 0:
            raise UnsupportedError(f"node '{name}': storage_order not supported")
        kh, kw = _hw(raw, "kernel_shape", None)
        sh, sw = _hw(raw, "strides", [1, 1])
        pads = _pads4(raw)
        if (kind == OpKind.AVG_POOL and any(pads)
                and _attr_int(raw, "count_include_pad", 0) == 0):
            raise UnsupportedError(
                f"node '{name}': AveragePool with count_include_pad=0 and nonzero "
                f"pads not supported")
        attrs = PoolAttrs(kernel_h=kh, kernel_w=kw, stride_h=sh, stride_w=sw, pads=pads)
    elif kind == OpKind.BATCH_NORM:
        if len(raw.outputs) != 1:
            raise UnsupportedError(
                f"node '{name}': BatchNormalization with training outputs not supported")
        if _attr_int(raw, "training_mode", 0) != 0:
            raise UnsupportedError(f"node '{name}': training-mode BatchNormalization")
        if _attr_int(raw, "spatial", 1) != 1:
            raise UnsupportedError(f"node '{name}': non-spatial BatchNormalization")
        attrs = BatchNormAttrs(epsilon=_attr_float(raw, "epsilon", 1e-5))
    elif kind == OpKind.GEMM:
        if _attr_float(raw, "alpha", 1.0) != 1.0 or _attr_float(raw, "beta", 1.0) != 1.0:
            raise UnsupportedError(f"node '{name}': Gemm with alpha/beta != 1 not supported")
        if _attr_int(raw, "transA", 0) != 0:
            raise UnsupportedError(f"node '{name}': Gemm with transA not supported")
        attrs = GemmAttrs(trans_b=bool(_attr_int(raw, "transB", 0)))
    elif kind == OpKind.CONCAT:
        if "axis" not in raw.attrs:
            raise ParseError(f"node '{name}': Concat missing axis")
        attrs = ConcatAttrs(axis=_attr_int(raw, "axis", 0))
    elif kind == OpKind.SOFTMAX:
        attrs = SoftmaxAttrs(axis=_attr_int(raw, "axis", -1))
    elif kind == OpKind.FLATTEN:
        if _attr_int(raw, "axis", 1) != 1:
            raise UnsupportedError(f"node '{name}': Flatten with axis != 1 not supported")
    elif kind == OpKind.RESHAPE:
        if _attr_int(raw, "allowzero", 0) != 0:
            raise UnsupportedError(f"node '{name}': Reshape with allowzero not supported")
        if len(raw.inputs) != 2 or raw.inputs[1] not in int64_inits:
            raise UnsupportedError(
                f"node '{name}': Reshape target must be a constant int64 initializer")
        target = int64_inits[raw.inputs[1]]
        attrs = ReshapeAttrs(target=tuple(target))
        inputs = (raw.inputs[0],)

    return Node(name=name, kind=kind, inputs=inputs, outputs=outputs, attrs=attrs)


def parse_onnx(data: bytes, limits: OnnxLimits = DEFAULT_LIMITS) -> Graph:
    """Decode a serialized ONNX ModelProto into a Graph.

    Raises ParseError/TruncatedError for malformed bytes, UnsupportedError for
    models outside the supported subset, LimitError beyond configured limits.
    """
    decoder = _Decoder(limits)
    raw_nodes, raw_tensors, raw_inputs, outputs, name = decoder.parse_model(data)

    float_inits: dict[str, Tensor] = {}
    int64_inits: dict[str, list[int]] = {}
    for raw in raw_tensors:
        if raw.data_type == _DTYPE_FLOAT:
            float_inits[raw.name] = _float_tensor(raw)
        elif raw.data_type == _DTYPE_INT64:
            int64_inits[raw.name] = _int64_values(raw)
        else:
            raise UnsupportedError(
                f"initializer '{raw.name}': data_type {raw.data_type} not supported "
                f"(float32 only)")

    # Constant nodes become initializers so the executable graph keeps the
    # closed operator set.
    kept_raw: list[_RawNode] = []
    for raw in raw_nodes:
        if raw.op_type == "Constant":
            value = raw.attrs.get("value")
            if value is None or value.tensor is None:
                raise UnsupportedError(
                    f"Constant node '{raw.name}' without a tensor value")
            t = value.tensor
            t.name = raw.outputs[0]
            if t.data_type == _DTYPE_FLOAT:
                float_inits[t.name] = _float_tensor(t)
            elif t.data_type == _DTYPE_INT64:
                int64_inits[t.name] = _int64_values(t)
            else:
                raise UnsupportedError(
                    f"Constant '{raw.name}': data_type {t.data_type} not supported")
            continue
        if raw.op_type not in limits.supported_op_types:
            raise UnsupportedError(f"unsupported operator '{raw.op_type}'"
                                   + (f" (node '{raw.name}')" if raw.name else ""))
        kept_raw.append(raw)

    nodes = [_convert_node(raw, i, float_inits, int64_inits)
             for i, raw in enumerate(kept_raw)]

    # int64 initializers may only serve as Reshape targets (consumed above)
    consumed = {inp for node in nodes for inp in node.inputs}
    for iname in int64_inits:
        if iname in consumed or iname in outputs:
            raise UnsupportedError(
                f"initializer '{iname}': int64 tensors are only supported as "
                f"Reshape targets")

    inputs = [(n, s) for n, s in raw_inputs if n not in float_inits and n not in int64_inits]
    return Graph(name=name or "model", inputs=inputs, outputs=list(outputs),
                 nodes=nodes, initializers=float_inits)
