"""Canonical byte encoding used for signing, digesting and transport.

The canonical form is compact JSON with keys sorted by code point.  Decimals
and floats are written as plain (non-exponent) number literals after
normalization, byte strings as base64 text.  Because the output is itself
valid JSON, it doubles as the wire encoding: decoding it with
:func:`from_wire` and canonicalizing again yields the same bytes.
"""
from __future__ import annotations

import base64
import hashlib
import json
import math
from collections.abc import Mapping
from decimal import Decimal
from typing import Any


class CanonicalizationError(ValueError):
    pass


def format_decimal(value: Decimal) -> str:
    if not value.is_finite():
        raise CanonicalizationError(f"non-finite numeric value: {value}")
    # no normalize(): it rounds to the context precision
    text = format(value, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return "0" if text in ("-0", "0") else text


def _encode(value: Any, out: list[str]) -> None:
    # bool first: it is a subclass of int
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        out.append(str(int(value)))
    elif isinstance(value, Decimal):
        out.append(format_decimal(value))
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise CanonicalizationError(f"non-finite numeric value: {value}")
        out.append(format_decimal(Decimal(repr(value))))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, (bytes, bytearray, memoryview)):
        out.append(json.dumps(base64.b64encode(bytes(value)).decode("ascii")))
    elif isinstance(value, Mapping):
        items = []
        for key in value:
            if not isinstance(key, str):
                raise CanonicalizationError(f"map keys must be strings, got {type(key).__name__}")
            items.append(key)
        items.sort()
        out.append("{")
        for i, key in enumerate(items):
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _encode(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    else:
        raise CanonicalizationError(f"unsupported type in document: {type(value).__name__}")


def canonicalize(document: Any) -> bytes:
    """Return the canonical UTF-8 bytes of ``document``."""
    out: list[str] = []
    _encode(document, out)
    try:
        return "".join(out).encode("utf-8")
    except UnicodeEncodeError as exc:
        raise CanonicalizationError("document contains unencodable text") from exc


def digest(document: Any) -> str:
    """Lowercase hex SHA-256 of the canonical bytes."""
    return hashlib.sha256(canonicalize(document)).hexdigest()


def to_wire(document: Any) -> str:
    return canonicalize(document).decode("utf-8")


def from_wire(text: str | bytes) -> Any:
    """Decode wire text; fractional numbers come back as Decimal."""
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    return json.loads(text, parse_float=Decimal)
