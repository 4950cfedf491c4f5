from __future__ import annotations
from dataclasses import fields, is_dataclass
from enum import Enum
from typing import Any, Dict


def dataclass_record(obj: Any) -> Dict[str, Any]:
    """Declared-order dict of a dataclass, skipping fields marked `record=False`."""
    out: Dict[str, Any] = {}
    for f in fields(obj):
        if f.metadata.get("record", True) is False:
            continue
        out[f.name] = to_record(getattr(obj, f.name))
    return out


def to_record(value: Any) -> Any:
    """
    Convert a value into a JSON-safe structure.

    Dataclasses become dicts (declared field order), bytes become hex,
    enums become their value. Objects exposing `to_record()` decide for
    themselves. Fields declared with `metadata={"record": False}` are
    left out (keys, RNG streams).
    """
    if value is None or isinstance(value, (bool, int, str)):
        return value
    if isinstance(value, float):
        return round(value, 12)
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if isinstance(value, Enum):
        return value.value
    custom = getattr(value, "to_record", None)
    if callable(custom) and not isinstance(value, type):
        return custom()
    if is_dataclass(value) and not isinstance(value, type):
        return dataclass_record(value)
    if isinstance(value, dict):
        return {str(to_record(k)): to_record(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_record(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return sorted((to_record(v) for v in value), key=repr)
    return type(value).__name__
