"""Strict parsing of model output with a single, mechanical repair pass."""

from __future__ import annotations

import json
from typing import Any

from .schema import ValidationResult, validate_data


class OutputParseError(ValueError):
    """Model output could not be parsed or did not match its schema, even after repair."""

    def __init__(self, message: str, raw: str = "", violations: ValidationResult | None = None):
        super().__init__(message)
        self.raw = raw
        self.violations = violations


def strip_fences(raw: str) -> str:
    """Drop every line that opens or closes a markdown code fence."""
    kept = [line for line in raw.splitlines() if not line.lstrip().startswith("```")]
    return "\n".join(kept)


def trim_to_structure(text: str) -> str:
    starts = [i for i in (text.find("{"), text.find("[")) if i >= 0]
    if not starts:
        return text
    start = min(starts)
    closer = "}" if text[start] == "{" else "]"
    end = text.rfind(closer)
    return text[start : end + 1] if end > start else text[start:]


def repair(raw: str) -> str:
    return trim_to_structure(strip_fences(raw)).strip()


def parse_json(raw: str) -> Any:
    """Parse ``raw``; on failure apply :func:`repair` once and retry."""
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, TypeError):
        pass
    try:
        return json.loads(repair(raw))
    except (json.JSONDecodeError, TypeError) as exc:
        raise OutputParseError(f"output is not JSON after repair: {exc}", raw=raw) from None


def parse_structured(raw: str, kind: str) -> Any:
    data = parse_json(raw)
    result = validate_data(data, kind)
    if not result.ok:
        detail = "; ".join(str(v) for v in result.violations[:5])
        raise OutputParseError(f"{kind} does not match schema: {detail}", raw=raw, violations=result)
    return data
