"""Deterministic byte encoding for step-boundary values.

Values crossing a pipeline step boundary are cached and hashed, so they need
an encoding that is stable across runs and processes.  Sets and mappings are
emitted in sorted order; dataclasses and enums must be registered with
:func:`register` so they can be rebuilt on decode.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
from typing import Any

_TYPES: dict[str, type] = {}


def register(cls: type) -> type:
    """Class decorator making a frozen dataclass or Enum cacheable."""
    if not (dataclasses.is_dataclass(cls) or issubclass(cls, enum.Enum)):
        raise TypeError(f"{cls.__name__} is neither a dataclass nor an Enum")
    _TYPES[cls.__qualname__] = cls
    return cls


def _sort_key(encoded: Any) -> str:
    return json.dumps(encoded, sort_keys=True, separators=(",", ":"))


def _check_registered(cls: type) -> None:
    if _TYPES.get(cls.__qualname__) is not cls:
        raise TypeError(f"{cls.__qualname__} is not registered for canonical encoding")


def to_jsonable(value: Any) -> Any:
    if isinstance(value, enum.Enum):
        _check_registered(type(value))
        return {"@e": type(value).__qualname__, "v": value.value}
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        _check_registered(type(value))
        fields = {f.name: to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
        return {"@c": type(value).__qualname__, "f": fields}
    if isinstance(value, (set, frozenset)):
        return {"@s": sorted((to_jsonable(v) for v in value), key=_sort_key)}
    if isinstance(value, tuple):
        return {"@t": [to_jsonable(v) for v in value]}
    if isinstance(value, list):
        return [to_jsonable(v) for v in value]
    if isinstance(value, dict):
        items = [[to_jsonable(k), to_jsonable(v)] for k, v in value.items()]
        return {"@m": sorted(items, key=lambda kv: _sort_key(kv[0]))}
    raise TypeError(f"cannot canonically encode {type(value).__name__}")


def from_jsonable(data: Any) -> Any:
    if isinstance(data, list):
        return [from_jsonable(v) for v in data]
    if not isinstance(data, dict):
        return data
    if "@s" in data:
        return frozenset(from_jsonable(v) for v in data["@s"])
    if "@t" in data:
        return tuple(from_jsonable(v) for v in data["@t"])
    if "@m" in data:
        return {from_jsonable(k): from_jsonable(v) for k, v in data["@m"]}
    if "@e" in data:
        return _lookup(data["@e"])(data["v"])
    if "@c" in data:
        cls = _lookup(data["@c"])
        return cls(**{k: from_jsonable(v) for k, v in data["f"].items()})
    raise ValueError(f"unrecognised canonical object with keys {sorted(data)}")


def _lookup(name: str) -> type:
    try:
        return _TYPES[name]
    except KeyError:
        raise ValueError(f"type {name!r} is not registered for canonical decoding") from None


def dumps(value: Any) -> bytes:
    return json.dumps(to_jsonable(value), sort_keys=True, separators=(",", ":")).encode()


def loads(data: bytes) -> Any:
    return from_jsonable(json.loads(data))


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def value_hash(value: Any) -> str:
    return digest(dumps(value))
