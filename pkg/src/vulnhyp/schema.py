"""Canonical schemas for stage artifacts and model outputs.

The shipped ``schemas/<kind>.schema.json`` files are the contract; they are
generated from ``SCHEMAS`` below (``python -m vulnhyp.schema``) and a test
keeps both in sync. Structural checks use JSON Schema, cross-field invariants
are checked in Python.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable

from jsonschema import Draft202012Validator

from .model import CONTEXT_SCHEMA_VERSION, REJECTION_GROUNDS, canonical_dumps, cwe_sort_key, trigger_path_problems

CWE_PATTERN = r"^CWE-[1-9][0-9]*$|^CWE-0$"
ENUMS = {
    "label": ["vulnerable", "benign", "unknown"],
    "language": ["c", "cpp", "python", "other"],
    "status": ["valid", "contradicted", "plausible"],
    "assumption_kind": ["guard", "precondition"],
    "node_kind": ["source", "transform", "guard", "sink"],
    "dep": ["control", "data"],
    "source_class": ["parameter", "file_read", "network_read", "deserialized", "environment", "other"],
    "decision": ["retained", "discarded"],
}


class MalformedDocument(ValueError):
    """The document is not parseable JSON."""


@dataclass(frozen=True)
class Violation:
    path: str
    reason: str

    def __str__(self) -> str:
        return f"{self.path}: {self.reason}"


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def paths(self) -> list[str]:
        return [v.path for v in self.violations]


def _obj(props: dict[str, Any], required: Iterable[str] | None = None, extra: bool = False) -> dict[str, Any]:
    return {
        "type": "object",
        "properties": props,
        "required": sorted(props if required is None else required),
        "additionalProperties": extra,
    }


def _enum(name: str) -> dict[str, Any]:
    return {"enum": ENUMS[name]}


_STR = {"type": "string"}
_NSTR = {"type": ["string", "null"]}
_POS = {"type": "integer", "minimum": 1}
_NAT = {"type": "integer", "minimum": 0}
_CWE = {"type": "string", "pattern": CWE_PATTERN}
_SPAN = {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2}
_EVIDENCE = _obj({"line": _POS, "snippet": _STR, "func": _NSTR})
_NUMBERED_LINES = {"type": "array", "items": {"type": "array", "prefixItems": [_POS, _STR], "minItems": 2, "maxItems": 2}}
_LOC = {"type": "array", "prefixItems": [_STR, _POS], "minItems": 2, "maxItems": 2}
_LOC_EDGE = {"type": "array", "prefixItems": [_LOC, _LOC], "minItems": 2, "maxItems": 2}

_CODE_SAMPLE_PROPS = {
    "id": {"type": "string", "minLength": 1},
    "source": {"type": "string", "minLength": 1},
    "pair_id": _NSTR,
    "label": _enum("label"),
    "project": _STR,
    "cwe_truth": {"type": ["array", "null"], "items": _CWE},
    "language_hint": _enum("language"),
}
_AGENT_REPORT = _obj(
    {
        "source_agent": {"type": "string", "minLength": 1},
        "cwe": _CWE,
        "span": _SPAN,
        "description": _STR,
        "evidence": {"type": "array", "items": _EVIDENCE},
        "trigger_hint": _NSTR,
        "sample_id": _STR,
    }
)
_FINDING = _obj(
    {
        "id": {"type": "string", "minLength": 1},
        "cwe": _CWE,
        "span": _SPAN,
        "description": _STR,
        "evidence": {"type": "array", "items": _EVIDENCE},
        "source_agents": {"type": "array", "items": _STR, "minItems": 1},
    }
)
_ASSUMPTION = _obj(
    {
        "id": {"type": "string", "minLength": 1},
        "text": {"type": "string", "minLength": 1},
        "status": _enum("status"),
        "breaks_path": {"type": "boolean"},
        "evidence": {"type": "array", "items": _EVIDENCE},
        "kind": _enum("assumption_kind"),
        "topic": _NSTR,
        "node_id": _NSTR,
        "line": {"type": ["integer", "null"], "minimum": 1},
    }
)
_TRIGGER_PATH = _obj(
    {
        "nodes": {
            "type": "array",
            "minItems": 2,
            "items": _obj({"node_id": _STR, "line": _POS, "kind": _enum("node_kind")}),
        },
        "edges": {"type": "array", "items": _obj({"from": _STR, "to": _STR, "dep": _enum("dep")})},
        "source_class": _enum("source_class"),
        "sink_line": _POS,
    }
)
_HYPOTHESIS = _obj(
    {
        "id": {"type": "string", "minLength": 1},
        "finding_ref": {"type": "string", "minLength": 1},
        "cwe": _CWE,
        "assumptions": {"type": "array", "items": _ASSUMPTION},
        "unconditional": {"type": "boolean"},
        "path": _TRIGGER_PATH,
    }
)
_VERDICT = _obj(
    {
        "hypothesis_ref": {"type": "string", "minLength": 1},
        "cwe": _CWE,
        "decision": _enum("decision"),
        "rationale": _STR,
        "evidence": {"type": "array", "items": _EVIDENCE},
        "stage": {"enum": ["assumption", "path"]},
        "ground": {"enum": [*REJECTION_GROUNDS, "contradicted_assumption", None]},
    }
)
_ANNOTATION = _obj(
    {
        "func": _STR,
        "line": _POS,
        "end_line": {"type": ["integer", "null"], "minimum": 1},
        "kind": {"enum": ["source", "guard", "sink", "fact"]},
        "topic": _NSTR,
        "label": _STR,
        "source_class": {"enum": [*ENUMS["source_class"], None]},
        "effect": {"enum": ["refutes", "confirms", None]},
    },
    required=["func", "line", "kind"],
)
_WIRE_EVIDENCE = _obj({"line": _POS, "snippet": _STR, "func": _NSTR}, required=["line", "snippet"])
_WIRE_FINDING = _obj(
    {
        "cwe": {"type": "string", "minLength": 1},
        "span": _SPAN,
        "description": _STR,
        "evidence": {"type": "array", "items": _WIRE_EVIDENCE},
        "trigger_hint": _NSTR,
    },
    required=["cwe", "span", "description", "evidence"],
)

SCHEMAS: dict[str, dict[str, Any]] = {
    "code_sample": _obj(_CODE_SAMPLE_PROPS),
    "pair_record": _obj({**_CODE_SAMPLE_PROPS, "pair_id": {"type": "string", "minLength": 1}}),
    "numbered_function": _obj({"sample_id": _STR, "lines": _NUMBERED_LINES}),
    "agent_report": _AGENT_REPORT,
    "aggregated_finding": _FINDING,
    "assumption": _ASSUMPTION,
    "trigger_path": _TRIGGER_PATH,
    "hypothesis": _HYPOTHESIS,
    "verdict": _VERDICT,
    "context_bundle": _obj(
        {
            "schema_version": {"const": CONTEXT_SCHEMA_VERSION},
            "target": _NSTR,
            "functions": {"type": "object", "additionalProperties": _NUMBERED_LINES},
            "externals": {"type": "array", "items": _STR},
            "call_edges": {
                "type": "array",
                "items": {"type": "array", "prefixItems": [_STR, _STR, _POS], "minItems": 3, "maxItems": 3},
            },
            "data_edges": {"type": "array", "items": _LOC_EDGE},
            "control_edges": {"type": "array", "items": _LOC_EDGE},
            "annotations": {"type": "array", "items": _ANNOTATION},
            "imports": {"type": "array", "items": _STR},
            "project_meta": {"type": "object", "additionalProperties": _STR},
        },
        required=["schema_version", "functions", "call_edges", "data_edges", "control_edges", "imports", "project_meta"],
    ),
    "detection_report": _obj(
        {
            "sample_id": _STR,
            "vulnerable": {"type": "boolean"},
            "valid_cwes": {"type": "array", "items": _CWE},
            "verdicts": {"type": "array", "items": _VERDICT},
            "hypotheses": {"type": "array", "items": _HYPOTHESIS},
            "findings": {"type": "array", "items": _FINDING},
            "activated_agents": {"type": "array", "items": _STR},
            "skipped_agents": {"type": "array", "items": _STR},
            "call_count": _NAT,
            "output_tokens": _NAT,
        }
    ),
    "mock_script": {
        "type": "array",
        "items": _obj(
            {"agent_id": {"type": "string", "minLength": 1}, "text": _STR, "output_tokens": _NAT, "sample_id": _STR},
            required=["agent_id", "text", "output_tokens"],
        ),
    },
    "cache_entry": _obj(
        {
            "key": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
            "agent_id": _STR,
            "model_id": _STR,
            "prompt": _STR,
            "text": _STR,
            "output_tokens": _NAT,
        }
    ),
    "pipeline_config": {
        "type": "object",
        "properties": {
            "dispatcher": _obj({"mode": {"enum": ["lexical", "llm"]}}, required=[]),
            "pipeline": _obj({"workers": _POS}, required=[]),
            "agents": _obj({"enabled": {"type": ["array", "null"], "items": _STR}}, required=[]),
            "aggregate": _obj({"mode": {"enum": ["mechanical", "llm"]}}, required=[]),
            "planner": _obj({"mode": {"enum": ["llm", "graph"]}, "max_paths": _POS}, required=[]),
            "pruner": _obj({"mode": {"enum": ["llm", "graph"]}}, required=[]),
            "validator": _obj({"mode": {"enum": ["llm", "graph"]}}, required=[]),
            "gateway": _obj({"max_tokens": _POS}, required=[]),
        },
        "additionalProperties": False,
    },
    "agent_output": {
        "oneOf": [
            {"type": "array", "items": _WIRE_FINDING},
            _obj({"findings": {"type": "array", "items": _WIRE_FINDING}}),
        ]
    },
    "dispatcher_output": _obj({"cues": {"type": "array", "items": _STR}}),
    "aggregator_output": _obj(
        {
            "findings": {
                "type": "array",
                "items": _obj(
                    {
                        "cwe": {"type": "string", "minLength": 1},
                        "span": _SPAN,
                        "description": _STR,
                        "evidence": {"type": "array", "items": _WIRE_EVIDENCE},
                        "source_agents": {"type": "array", "items": _STR, "minItems": 1},
                    }
                ),
            }
        }
    ),
    "planner_output": _obj(
        {
            "source_class": _enum("source_class"),
            "path": {
                "type": "array",
                "minItems": 2,
                "items": _obj(
                    {"line": _POS, "kind": _enum("node_kind"), "func": _STR, "dep": _enum("dep"), "text": _STR},
                    required=["line", "kind"],
                ),
            },
            "assumptions": {
                "type": "array",
                "items": _obj(
                    {
                        "text": {"type": "string", "minLength": 1},
                        "kind": _enum("assumption_kind"),
                        "line": _POS,
                        "topic": _STR,
                    },
                    required=["text"],
                ),
            },
        },
        required=["source_class", "path", "assumptions"],
    ),
    "pruner_output": _obj(
        {
            "status": {"enum": [*ENUMS["status"], "unknown"]},
            "evidence": {"type": "array", "items": _WIRE_EVIDENCE},
            "reasoning": _STR,
        },
        required=["status", "evidence"],
    ),
    "validator_output": _obj(
        {
            "decision": _enum("decision"),
            "ground": {"enum": [*REJECTION_GROUNDS, None]},
            "rationale": _STR,
            "evidence": {"type": "array", "items": _WIRE_EVIDENCE},
        },
        required=["decision", "rationale"],
    ),
}

for _name, _schema in SCHEMAS.items():
    _schema.setdefault("$schema", "https://json-schema.org/draft/2020-12/schema")
    _schema.setdefault("title", _name)

KINDS = tuple(sorted(SCHEMAS))

Problems = list[tuple[str, str]]


def _span_problems(span: Any, path: str) -> Problems:
    if isinstance(span, list) and len(span) == 2 and span[0] > span[1]:
        return [(path, f"start_line {span[0]} > end_line {span[1]}")]
    return []


def _evidence_dupes(items: list[dict], path: str) -> Problems:
    keys = [(e.get("func"), e.get("line"), e.get("snippet")) for e in items]
    return [(path, "evidence is not deduplicated")] if len(keys) != len(set(keys)) else []


def _numbered_problems(lines: list, path: str) -> Problems:
    for i, entry in enumerate(lines):
        if entry[0] != i + 1:
            return [(f"{path}[{i}]", f"line numbers must be contiguous from 1 (found {entry[0]}, expected {i + 1})")]
    return []


def _check_agent_report(d: dict, p: str = "") -> Problems:
    return _span_problems(d["span"], f"{p}span")


def _check_finding(d: dict, p: str = "") -> Problems:
    out = _span_problems(d["span"], f"{p}span")
    agents = d["source_agents"]
    if agents != sorted(set(agents)):
        out.append((f"{p}source_agents", "source_agents must be sorted and free of duplicates"))
    out += _evidence_dupes(d["evidence"], f"{p}evidence")
    return out


def _check_assumption(d: dict, p: str = "") -> Problems:
    if d["breaks_path"] and d["status"] != "contradicted":
        return [(f"{p}breaks_path", "breaks_path may only be set on a contradicted assumption")]
    if d["status"] == "contradicted" and not d["evidence"]:
        return [(f"{p}evidence", "a contradicted assumption must cite evidence")]
    return []


def _check_hypothesis(d: dict, p: str = "") -> Problems:
    out: Problems = []
    if not d["assumptions"] and not d["unconditional"]:
        out.append((f"{p}assumptions", "empty assumptions require the unconditional marker"))
    if d["assumptions"] and d["unconditional"]:
        out.append((f"{p}unconditional", "unconditional marker set alongside assumptions"))
    ids = [a["id"] for a in d["assumptions"]]
    if len(ids) != len(set(ids)):
        out.append((f"{p}assumptions", "assumption ids must be unique"))
    for i, a in enumerate(d["assumptions"]):
        out += _check_assumption(a, f"{p}assumptions[{i}].")
    out += trigger_path_problems(d["path"], f"{p}path.")
    return out


def _check_verdict(d: dict, p: str = "") -> Problems:
    if d["decision"] == "discarded" and not d["rationale"].strip():
        return [(f"{p}rationale", "a discarded verdict needs a rationale")]
    return []


def _check_context(d: dict, p: str = "") -> Problems:
    out: Problems = []
    funcs = d["functions"]
    known = set(funcs) | set(d.get("externals", []))
    for name, lines in funcs.items():
        out += _numbered_problems(lines, f"{p}functions.{name}")
    seen = set()
    for i, (caller, callee, line) in enumerate(d["call_edges"]):
        if caller not in funcs:
            out.append((f"{p}call_edges[{i}][0]", f"caller {caller!r} is not a defined function"))
        if callee not in known:
            out.append((f"{p}call_edges[{i}][1]", f"callee {callee!r} is neither defined nor flagged external"))
        if (caller, callee, line) in seen:
            out.append((f"{p}call_edges[{i}]", "duplicate call edge"))
        seen.add((caller, callee, line))
    for name in ("data_edges", "control_edges"):
        for i, edge in enumerate(d[name]):
            for j, (func, _line) in enumerate(edge):
                if func not in known:
                    out.append((f"{p}{name}[{i}][{j}]", f"function {func!r} is neither defined nor flagged external"))
    for i, a in enumerate(d.get("annotations", [])):
        if a["func"] not in known:
            out.append((f"{p}annotations[{i}].func", f"function {a['func']!r} is not in the bundle"))
        if a.get("end_line") is not None and a["end_line"] < a["line"]:
            out.append((f"{p}annotations[{i}].end_line", "end_line precedes line"))
    target = d.get("target")
    if target is not None and target not in funcs:
        out.append((f"{p}target", f"target {target!r} is not a defined function"))
    return out


def _check_report(d: dict, p: str = "") -> Problems:
    out: Problems = []
    retained = sorted({v["cwe"] for v in d["verdicts"] if v["decision"] == "retained"}, key=cwe_sort_key)
    if d["vulnerable"] != bool(d["valid_cwes"]):
        out.append((f"{p}vulnerable", "vulnerable flag disagrees with valid_cwes"))
    if d["valid_cwes"] != retained:
        out.append((f"{p}valid_cwes", "valid_cwes must list exactly the CWEs of retained verdicts"))
    for i, v in enumerate(d["verdicts"]):
        out += _check_verdict(v, f"{p}verdicts[{i}].")
    for i, h in enumerate(d["hypotheses"]):
        out += _check_hypothesis(h, f"{p}hypotheses[{i}].")
    for i, f in enumerate(d.get("findings", [])):
        out += _check_finding(f, f"{p}findings[{i}].")
    return out


SEMANTIC_CHECKS: dict[str, Callable[[Any], Problems]] = {
    "agent_report": _check_agent_report,
    "aggregated_finding": _check_finding,
    "assumption": _check_assumption,
    "hypothesis": _check_hypothesis,
    "trigger_path": lambda d: trigger_path_problems(d),
    "verdict": _check_verdict,
    "context_bundle": _check_context,
    "detection_report": _check_report,
    "numbered_function": lambda d: _numbered_problems(d["lines"], "lines"),
}


def _schema_dir() -> Path:
    return Path(str(resources.files("vulnhyp").joinpath("schemas")))


@lru_cache(maxsize=None)
def load_schema(kind: str) -> dict[str, Any]:
    if kind not in SCHEMAS:
        raise KeyError(f"unknown artifact kind {kind!r}; expected one of {', '.join(KINDS)}")
    path = _schema_dir() / f"{kind}.schema.json"
    return json.loads(path.read_text(encoding="utf-8"))


def _format_path(parts: Iterable[Any]) -> str:
    out = ""
    for part in parts:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "$"


def validate_data(data: Any, kind: str) -> ValidationResult:
    validator = Draft202012Validator(load_schema(kind))
    errors = sorted(validator.iter_errors(data), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        return ValidationResult(tuple(Violation(_format_path(e.absolute_path), e.message) for e in errors))
    check = SEMANTIC_CHECKS.get(kind)
    if check is None:
        return ValidationResult()
    return ValidationResult(tuple(Violation(path or "$", reason) for path, reason in check(data)))


def validate_schema(document: str | bytes, kind: str) -> ValidationResult:
    """Check a serialized artifact against the canonical schema for ``kind``.

    Raises ``MalformedDocument`` if ``document`` is not JSON at all.
    """
    try:
        data = json.loads(document)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedDocument(f"unparseable {kind} document: {exc}") from exc
    return validate_data(data, kind)


def validate_ndjson(document: str, kind: str) -> ValidationResult:
    """Validate newline-delimited records; violation paths are prefixed with ``[row]``."""
    out: list[Violation] = []
    for i, line in enumerate(l for l in document.splitlines() if l.strip()):
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"record {i}: {exc}") from exc
        for v in validate_data(data, kind).violations:
            out.append(Violation(f"[{i}].{v.path}" if v.path != "$" else f"[{i}]", v.reason))
    return ValidationResult(tuple(out))


def write_schemas(target: Path | None = None) -> list[Path]:
    target = target or _schema_dir()
    target.mkdir(parents=True, exist_ok=True)
    written = []
    for kind, schema in sorted(SCHEMAS.items()):
        path = target / f"{kind}.schema.json"
        path.write_text(canonical_dumps(schema), encoding="utf-8")
        written.append(path)
    return written


if __name__ == "__main__":
    for p in write_schemas():
        print(p)
