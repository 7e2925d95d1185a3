"""Minimal ONNX protobuf reader/writer.

Implements just enough of the protobuf wire format to serialize and
deserialize the ONNX message subset this package needs: ModelProto,
GraphProto, NodeProto, AttributeProto, TensorProto, ValueInfoProto and
the type/shape messages.  Unknown fields are skipped on read so files
written by other exporters still load.

Field numbers follow onnx.proto (IR version 8).  External (out-of-file)
tensor data is not supported and raises SchemaError.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from hemoclass.errors import SchemaError

# TensorProto.DataType values used here
FLOAT = 1
INT64 = 7

# AttributeProto.AttributeType values
ATTR_FLOAT = 1
ATTR_INT = 2
ATTR_STRING = 3
ATTR_TENSOR = 4
ATTR_FLOATS = 6
ATTR_INTS = 7
ATTR_STRINGS = 8

_NP_DTYPES = {FLOAT: np.dtype("<f4"), INT64: np.dtype("<i8")}


# ---------------------------------------------------------------------------
# Message dataclasses
# ---------------------------------------------------------------------------

@dataclass
class TensorData:
    """A named constant tensor (TensorProto)."""

    name: str
    dims: tuple[int, ...]
    data_type: int
    raw: bytes  # little-endian packed values

    @classmethod
    def from_array(cls, name: str, array: np.ndarray) -> "TensorData":
        arr = np.asarray(array)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f4")
            dtype = FLOAT
        elif arr.dtype.kind in "iu":
            arr = arr.astype("<i8")
            dtype = INT64
        else:
            raise SchemaError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
        return cls(name=name, dims=tuple(arr.shape), data_type=dtype, raw=arr.tobytes())

    def to_array(self) -> np.ndarray:
        if self.data_type not in _NP_DTYPES:
            raise SchemaError(
                f"tensor {self.name!r} has unsupported data_type {self.data_type}"
            )
        arr = np.frombuffer(self.raw, dtype=_NP_DTYPES[self.data_type])
        return arr.reshape(self.dims)


@dataclass
class Attribute:
    name: str
    type: int
    value: object  # float | int | bytes | TensorData | list thereof


@dataclass
class Node:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    name: str = ""
    attributes: list[Attribute] = field(default_factory=list)

    def attr(self, name: str, default=None):
        for a in self.attributes:
            if a.name == name:
                return a.value
        return default


@dataclass
class ValueInfo:
    """Graph input/output declaration: name, element type, symbolic shape.

    Dims may be ints or strings (dim_param placeholders such as "batch").
    """

    name: str
    elem_type: int = FLOAT
    dims: tuple[object, ...] = ()


@dataclass
class Graph:
    name: str
    nodes: list[Node] = field(default_factory=list)
    initializers: list[TensorData] = field(default_factory=list)
    inputs: list[ValueInfo] = field(default_factory=list)
    outputs: list[ValueInfo] = field(default_factory=list)


@dataclass
class Model:
    graph: Graph
    ir_version: int = 8
    opset_version: int = 13
    producer_name: str = "hemoclass"


# ---------------------------------------------------------------------------
# Wire-format primitives
# ---------------------------------------------------------------------------

def _varint(value: int) -> bytes:
    if value < 0:
        value &= (1 << 64) - 1  # two's complement, 10-byte form
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise SchemaError("truncated varint")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise SchemaError("varint too long")


def _signed64(value: int) -> int:
    return value - (1 << 64) if value >= (1 << 63) else value


def _tag(field_number: int, wire_type: int) -> bytes:
    return _varint((field_number << 3) | wire_type)


def _len_field(field_number: int, payload: bytes) -> bytes:
    return _tag(field_number, 2) + _varint(len(payload)) + payload


def _str_field(field_number: int, text: str) -> bytes:
    return _len_field(field_number, text.encode("utf-8"))


def _int_field(field_number: int, value: int) -> bytes:
    return _tag(field_number, 0) + _varint(value)


def _float_field(field_number: int, value: float) -> bytes:
    return _tag(field_number, 5) + struct.pack("<f", value)


def _packed_int64(field_number: int, values) -> bytes:
    payload = b"".join(_varint(v) for v in values)
    return _len_field(field_number, payload)


def _skip(buf: bytes, pos: int, wire_type: int) -> int:
    if wire_type == 0:
        _, pos = _read_varint(buf, pos)
        return pos
    if wire_type == 1:
        return pos + 8
    if wire_type == 2:
        size, pos = _read_varint(buf, pos)
        return pos + size
    if wire_type == 5:
        return pos + 4
    raise SchemaError(f"unsupported protobuf wire type {wire_type}")


def _fields(buf: bytes):
    """Yield (field_number, wire_type, value) over a message buffer.

    Length-delimited values are returned as bytes, varints as ints,
    fixed32 as raw 4 bytes, fixed64 as raw 8 bytes.
    """
    pos = 0
    while pos < len(buf):
        key, pos = _read_varint(buf, pos)
        number, wire = key >> 3, key & 7
        if wire == 0:
            value, pos = _read_varint(buf, pos)
        elif wire == 1:
            value, pos = buf[pos : pos + 8], pos + 8
        elif wire == 2:
            size, pos = _read_varint(buf, pos)
            value, pos = buf[pos : pos + size], pos + size
        elif wire == 5:
            value, pos = buf[pos : pos + 4], pos + 4
        else:
            raise SchemaError(f"unsupported protobuf wire type {wire}")
        if pos > len(buf):
            raise SchemaError("truncated protobuf message")
        yield number, wire, value


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def _encode_tensor(t: TensorData) -> bytes:
    out = bytearray()
    if t.dims:
        out += _packed_int64(1, t.dims)
    out += _int_field(2, t.data_type)
    out += _str_field(8, t.name)
    out += _len_field(9, t.raw)
    return bytes(out)


def _encode_attribute(a: Attribute) -> bytes:
    out = bytearray()
    out += _str_field(1, a.name)
    if a.type == ATTR_FLOAT:
        out += _float_field(2, float(a.value))
    elif a.type == ATTR_INT:
        out += _int_field(3, int(a.value))
    elif a.type == ATTR_STRING:
        val = a.value if isinstance(a.value, bytes) else str(a.value).encode()
        out += _len_field(4, val)
    elif a.type == ATTR_TENSOR:
        out += _len_field(5, _encode_tensor(a.value))
    elif a.type == ATTR_FLOATS:
        for v in a.value:
            out += _tag(7, 5) + struct.pack("<f", v)
    elif a.type == ATTR_INTS:
        out += _packed_int64(8, a.value)
    elif a.type == ATTR_STRINGS:
        for v in a.value:
            out += _len_field(9, v if isinstance(v, bytes) else str(v).encode())
    else:
        raise SchemaError(f"cannot encode attribute type {a.type}")
    out += _int_field(20, a.type)
    return bytes(out)


def _encode_node(n: Node) -> bytes:
    out = bytearray()
    for name in n.inputs:
        out += _str_field(1, name)
    for name in n.outputs:
        out += _str_field(2, name)
    if n.name:
        out += _str_field(3, n.name)
    out += _str_field(4, n.op_type)
    for a in n.attributes:
        out += _len_field(5, _encode_attribute(a))
    return bytes(out)


def _encode_shape(dims) -> bytes:
    out = bytearray()
    for d in dims:
        if isinstance(d, str):
            dim = _str_field(2, d)
        else:
            dim = _int_field(1, int(d))
        out += _len_field(1, dim)
    return bytes(out)


def _encode_value_info(vi: ValueInfo) -> bytes:
    tensor_type = _int_field(1, vi.elem_type) + _len_field(2, _encode_shape(vi.dims))
    type_proto = _len_field(1, tensor_type)
    return _str_field(1, vi.name) + _len_field(2, type_proto)


def _encode_graph(g: Graph) -> bytes:
    out = bytearray()
    for n in g.nodes:
        out += _len_field(1, _encode_node(n))
    out += _str_field(2, g.name)
    for t in g.initializers:
        out += _len_field(5, _encode_tensor(t))
    for vi in g.inputs:
        out += _len_field(11, _encode_value_info(vi))
    for vi in g.outputs:
        out += _len_field(12, _encode_value_info(vi))
    return bytes(out)


def encode_model(m: Model) -> bytes:
    opset = _int_field(2, m.opset_version)  # default domain ""
    out = bytearray()
    out += _int_field(1, m.ir_version)
    out += _str_field(2, m.producer_name)
    out += _len_field(7, _encode_graph(m.graph))
    out += _len_field(8, opset)
    return bytes(out)


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

def _decode_tensor(buf: bytes) -> TensorData:
    dims: list[int] = []
    data_type = 0
    name = ""
    raw = b""
    float_data: list[bytes] = []
    int64_data: list[int] = []
    for number, wire, value in _fields(buf):
        if number == 1:  # dims (packed or repeated varint)
            if wire == 2:
                pos = 0
                while pos < len(value):
                    v, pos = _read_varint(value, pos)
                    dims.append(_signed64(v))
            else:
                dims.append(_signed64(value))
        elif number == 2:
            data_type = value
        elif number == 4:  # float_data
            if wire == 2:
                float_data.append(value)
            else:
                float_data.append(value)  # fixed32 bytes
        elif number == 7:  # int64_data
            if wire == 2:
                pos = 0
                while pos < len(value):
                    v, pos = _read_varint(value, pos)
                    int64_data.append(_signed64(v))
            else:
                int64_data.append(_signed64(value))
        elif number == 8:
            name = value.decode("utf-8")
        elif number == 9:
            raw = value
        elif number == 13 or (number == 14 and value == 1):
            # external_data entries / data_location == EXTERNAL
            raise SchemaError("external tensor data is not supported")
    if not raw:
        if float_data:
            raw = b"".join(float_data)
        elif int64_data:
            raw = np.asarray(int64_data, dtype="<i8").tobytes()
    return TensorData(name=name, dims=tuple(dims), data_type=data_type, raw=raw)


def _decode_attribute(buf: bytes) -> Attribute:
    name = ""
    atype = 0
    f_val = i_val = s_val = t_val = None
    floats: list[float] = []
    ints: list[int] = []
    strings: list[bytes] = []
    for number, wire, value in _fields(buf):
        if number == 1:
            name = value.decode("utf-8")
        elif number == 2:
            f_val = struct.unpack("<f", value)[0]
        elif number == 3:
            i_val = _signed64(value)
        elif number == 4:
            s_val = value
        elif number == 5:
            t_val = _decode_tensor(value)
        elif number == 7:
            floats.append(struct.unpack("<f", value)[0])
        elif number == 8:
            if wire == 2:
                pos = 0
                while pos < len(value):
                    v, pos = _read_varint(value, pos)
                    ints.append(_signed64(v))
            else:
                ints.append(_signed64(value))
        elif number == 9:
            strings.append(value)
        elif number == 20:
            atype = value
    # infer the type when the writer omitted field 20
    if atype == 0:
        if f_val is not None:
            atype = ATTR_FLOAT
        elif i_val is not None:
            atype = ATTR_INT
        elif s_val is not None:
            atype = ATTR_STRING
        elif t_val is not None:
            atype = ATTR_TENSOR
        elif floats:
            atype = ATTR_FLOATS
        elif ints:
            atype = ATTR_INTS
        elif strings:
            atype = ATTR_STRINGS
    value_by_type = {
        ATTR_FLOAT: f_val,
        ATTR_INT: i_val,
        ATTR_STRING: s_val,
        ATTR_TENSOR: t_val,
        ATTR_FLOATS: floats,
        ATTR_INTS: ints,
        ATTR_STRINGS: strings,
    }
    return Attribute(name=name, type=atype, value=value_by_type.get(atype))


def _decode_node(buf: bytes) -> Node:
    node = Node(op_type="", inputs=[], outputs=[])
    for number, _wire, value in _fields(buf):
        if number == 1:
            node.inputs.append(value.decode("utf-8"))
        elif number == 2:
            node.outputs.append(value.decode("utf-8"))
        elif number == 3:
            node.name = value.decode("utf-8")
        elif number == 4:
            node.op_type = value.decode("utf-8")
        elif number == 5:
            node.attributes.append(_decode_attribute(value))
    return node


def _decode_dims(shape_buf: bytes) -> tuple[object, ...]:
    dims: list[object] = []
    for number, _wire, value in _fields(shape_buf):
        if number != 1:
            continue
        dim_value = None
        dim_param = None
        for dnum, _dwire, dval in _fields(value):
            if dnum == 1:
                dim_value = _signed64(dval)
            elif dnum == 2:
                dim_param = dval.decode("utf-8")
        dims.append(dim_value if dim_value is not None else (dim_param or "?"))
    return tuple(dims)


def _decode_value_info(buf: bytes) -> ValueInfo:
    vi = ValueInfo(name="")
    for number, _wire, value in _fields(buf):
        if number == 1:
            vi.name = value.decode("utf-8")
        elif number == 2:  # TypeProto
            for tnum, _tw, tval in _fields(value):
                if tnum == 1:  # tensor_type
                    for inum, _iw, ival in _fields(tval):
                        if inum == 1:
                            vi.elem_type = ival
                        elif inum == 2:
                            vi.dims = _decode_dims(ival)
    return vi


def _decode_graph(buf: bytes) -> Graph:
    g = Graph(name="")
    for number, _wire, value in _fields(buf):
        if number == 1:
            g.nodes.append(_decode_node(value))
        elif number == 2:
            g.name = value.decode("utf-8")
        elif number == 5:
            g.initializers.append(_decode_tensor(value))
        elif number == 11:
            g.inputs.append(_decode_value_info(value))
        elif number == 12:
            g.outputs.append(_decode_value_info(value))
    return g


def decode_model(buf: bytes) -> Model:
    graph = None
    ir_version = 0
    opset_version = 0
    producer = ""
    for number, _wire, value in _fields(buf):
        if number == 1:
            ir_version = value
        elif number == 2:
            producer = value.decode("utf-8", errors="replace")
        elif number == 7:
            graph = _decode_graph(value)
        elif number == 8:
            domain = ""
            version = 0
            for onum, _ow, oval in _fields(value):
                if onum == 1:
                    domain = oval.decode("utf-8")
                elif onum == 2:
                    version = oval
            if domain == "":
                opset_version = max(opset_version, version)
    if graph is None:
        raise SchemaError("file does not contain an ONNX graph")
    return Model(
        graph=graph,
        ir_version=ir_version,
        opset_version=opset_version,
        producer_name=producer,
    )


# ---------------------------------------------------------------------------
# File-level helpers
# ---------------------------------------------------------------------------

def save_model(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_model(model))


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return decode_model(data)
    except SchemaError:
        raise
    except Exception as exc:
        raise SchemaError(f"not a readable ONNX file: {path} ({exc})") from exc
