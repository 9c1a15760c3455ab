"""Shared JSON I/O helpers with stable, diff-friendly formatting."""

from __future__ import annotations

import json
from pathlib import Path


class ParseError(ValueError):
    """Malformed input file; message carries file and location context."""


def dump_json(obj, path) -> None:
    """Write JSON with sorted keys and fixed separators (reproducible bytes)."""
    Path(path).write_text(to_json(obj), encoding="utf-8")


def to_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, separators=(",", ": ")) + "\n"


def load_json(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def expect_field(obj: dict, field: str, context: str):
    if field not in obj:
        raise ParseError(f"{context}: missing field {field!r}")
    return obj[field]
