"""
Canonical byte encoding for enclave state, sealed payloads and wire layouts.

Every value is a one-byte tag followed by a 4-byte big-endian length and
the body. Dict keys are sorted by their encoding so two instances that
build the same state always produce the same digest.
"""
from __future__ import annotations
import hashlib
import struct
from typing import Any, List, Tuple

_NONE = b"N"
_TRUE = b"T"
_FALSE = b"F"
_INT = b"I"
_FLOAT = b"D"
_BYTES = b"B"
_STR = b"S"
_LIST = b"L"
_MAP = b"M"

_LEN = struct.Struct(">I")
_F64 = struct.Struct(">d")


def _frame(tag: bytes, body: bytes) -> bytes:
    return tag + _LEN.pack(len(body)) + body


def encode(value: Any) -> bytes:
    if value is None:
        return _frame(_NONE, b"")
    if value is True:
        return _frame(_TRUE, b"")
    if value is False:
        return _frame(_FALSE, b"")
    if isinstance(value, int):
        length = max(1, (value.bit_length() + 8) // 8)
        return _frame(_INT, value.to_bytes(length, "big", signed=True))
    if isinstance(value, float):
        return _frame(_FLOAT, _F64.pack(value))
    if isinstance(value, (bytes, bytearray)):
        return _frame(_BYTES, bytes(value))
    if isinstance(value, str):
        return _frame(_STR, value.encode("utf-8"))
    if isinstance(value, (list, tuple)):
        return _frame(_LIST, b"".join(encode(v) for v in value))
    if isinstance(value, dict):
        pairs = sorted((encode(k), encode(v)) for k, v in value.items())
        return _frame(_MAP, b"".join(k + v for k, v in pairs))
    to_fields = getattr(value, "to_fields", None)
    if callable(to_fields):
        return encode(list(to_fields()))
    raise TypeError(f"cannot encode {type(value).__name__}")


def _decode_at(data: bytes, pos: int) -> Tuple[Any, int]:
    if pos + 5 > len(data):
        raise ValueError("truncated encoding")
    tag = data[pos:pos + 1]
    (length,) = _LEN.unpack_from(data, pos + 1)
    start = pos + 5
    end = start + length
    if end > len(data):
        raise ValueError("truncated encoding")
    body = data[start:end]
    if tag == _NONE:
        return None, end
    if tag == _TRUE:
        return True, end
    if tag == _FALSE:
        return False, end
    if tag == _INT:
        return int.from_bytes(body, "big", signed=True), end
    if tag == _FLOAT:
        return _F64.unpack(body)[0], end
    if tag == _BYTES:
        return body, end
    if tag == _STR:
        return body.decode("utf-8"), end
    if tag == _LIST:
        items: List[Any] = []
        p = start
        while p < end:
            item, p = _decode_at(data, p)
            items.append(item)
        return items, end
    if tag == _MAP:
        out = {}
        p = start
        while p < end:
            k, p = _decode_at(data, p)
            v, p = _decode_at(data, p)
            out[k] = v
        return out, end
    raise ValueError(f"unknown tag {tag!r}")


def decode(data: bytes) -> Any:
    value, end = _decode_at(data, 0)
    if end != len(data):
        raise ValueError("trailing bytes after encoding")
    return value


def pack_fields(*fields: Any) -> bytes:
    """Fixed-order layout used by the wire formats."""
    return encode(list(fields))


def unpack_fields(data: bytes, count: int) -> List[Any]:
    values = decode(data)
    if not isinstance(values, list) or len(values) != count:
        raise ValueError(f"expected {count} fields")
    return values


def digest(value: Any) -> bytes:
    return hashlib.sha256(encode(value)).digest()
