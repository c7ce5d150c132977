"""Tiny protobuf encoder used only by the tests: the independent partner for
decoder round-trips and for crafting models the exporter would never emit."""

import struct


def encode_varint(v: int) -> bytes:
    if v < 0:
        v += 1 << 64
    out = bytearray()
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def tag(field_number: int, wire_type: int) -> bytes:
    return encode_varint((field_number << 3) | wire_type)


def varint_field(num: int, value: int) -> bytes:
    return tag(num, 0) + encode_varint(value)


def len_field(num: int, payload: bytes) -> bytes:
    return tag(num, 2) + encode_varint(len(payload)) + payload


def str_field(num: int, text: str) -> bytes:
    return len_field(num, text.encode("utf-8"))


def float_field(num: int, value: float) -> bytes:
    return tag(num, 5) + struct.pack("<f", value)


def tensor_proto(name: str, dims, data_type: int, raw: bytes) -> bytes:
    out = b"".join(varint_field(1, d) for d in dims)
    out += varint_field(2, data_type)
    out += str_field(8, name)
    out += len_field(9, raw)
    return out


def value_info(name: str, dims) -> bytes:
    shape = b"".join(len_field(1, varint_field(1, d)) for d in dims)
    tensor_type = varint_field(1, 1) + len_field(2, shape)  # elem_type FLOAT
    return str_field(1, name) + len_field(2, len_field(1, tensor_type))


def attr_int(name: str, value: int) -> bytes:
    return str_field(1, name) + varint_field(3, value) + varint_field(20, 2)


def attr_str(name: str, value: str) -> bytes:
    return str_field(1, name) + str_field(4, value) + varint_field(20, 3)


def attr_ints(name: str, values) -> bytes:
    out = str_field(1, name)
    for v in values:
        out += varint_field(8, v)
    return out + varint_field(20, 7)


def node(op_type: str, inputs, outputs, name="", attrs=()) -> bytes:
    out = b"".join(str_field(1, i) for i in inputs)
    out += b"".join(str_field(2, o) for o in outputs)
    if name:
        out += str_field(3, name)
    out += str_field(4, op_type)
    out += b"".join(len_field(5, a) for a in attrs)
    return out


def graph(nodes, inputs, outputs, initializers=(), name="g") -> bytes:
    out = b"".join(len_field(1, n) for n in nodes)
    out += str_field(2, name)
    out += b"".join(len_field(5, t) for t in initializers)
    out += b"".join(len_field(11, vi) for vi in inputs)
    out += b"".join(len_field(12, vi) for vi in outputs)
    return out


def model(graph_bytes: bytes) -> bytes:
    return varint_field(1, 7) + len_field(7, graph_bytes)  # ir_version, graph


def relu_model(dims=(1, 4)) -> bytes:
    g = graph(
        nodes=[node("Relu", ["x"], ["y"], name="r")],
        inputs=[value_info("x", dims)],
        outputs=[value_info("y", dims)],
    )
    return model(g)
