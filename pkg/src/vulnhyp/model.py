"""Domain types exchanged between pipeline stages and their canonical JSON form.

Every type is a frozen dataclass. ``to_dict``/``from_dict`` give the wire shape;
``dumps``/``loads`` add the canonical encoding (sorted keys, UTF-8, two-space
indent, trailing newline) so that serialize -> parse -> serialize is
byte-identical.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Optional, Sequence


class Label(str, Enum):
    VULNERABLE = "vulnerable"
    BENIGN = "benign"
    UNKNOWN = "unknown"


class Language(str, Enum):
    C = "c"
    CPP = "cpp"
    PYTHON = "python"
    OTHER = "other"


class AssumptionStatus(str, Enum):
    VALID = "valid"
    CONTRADICTED = "contradicted"
    PLAUSIBLE = "plausible"


class AssumptionKind(str, Enum):
    GUARD = "guard"
    PRECONDITION = "precondition"


class NodeKind(str, Enum):
    SOURCE = "source"
    TRANSFORM = "transform"
    GUARD = "guard"
    SINK = "sink"


class DepKind(str, Enum):
    CONTROL = "control"
    DATA = "data"


class SourceClass(str, Enum):
    PARAMETER = "parameter"
    FILE_READ = "file_read"
    NETWORK_READ = "network_read"
    DESERIALIZED = "deserialized"
    ENVIRONMENT = "environment"
    OTHER = "other"


class Decision(str, Enum):
    RETAINED = "retained"
    DISCARDED = "discarded"


_CWE_RE = re.compile(r"^\s*(?:cwe)?[\s_:-]*0*(\d+)\s*$", re.IGNORECASE)


def normalize_cwe(value: Any) -> str:
    """Return ``CWE-<digits>`` for inputs like ``CWE-089``, ``CWE089``, ``cwe_79`` or ``78``."""
    if isinstance(value, bool):
        raise ValueError(f"not a CWE id: {value!r}")
    if isinstance(value, int):
        value = str(value)
    if not isinstance(value, str):
        raise ValueError(f"not a CWE id: {value!r}")
    m = _CWE_RE.match(value)
    if m is None:
        raise ValueError(f"not a CWE id: {value!r}")
    return f"CWE-{int(m.group(1))}"


def cwe_sort_key(cwe: str) -> tuple[int, str]:
    m = _CWE_RE.match(cwe)
    return (int(m.group(1)) if m else 1 << 30, cwe)


def canonical_dumps(data: Any) -> str:
    return json.dumps(data, sort_keys=True, ensure_ascii=False, indent=2) + "\n"


def _tuple(items: Optional[Iterable[Any]]) -> tuple:
    return tuple(items) if items is not None else ()


def _opt(value: Any, fn):
    return None if value is None else fn(value)


@dataclass(frozen=True)
class Evidence:
    line: int
    snippet: str
    func: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {"line": self.line, "snippet": self.snippet, "func": self.func}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Evidence":
        return cls(line=int(d["line"]), snippet=str(d.get("snippet", "")), func=d.get("func"))

    def key(self) -> tuple:
        return (self.func or "", self.line, self.snippet)


@dataclass(frozen=True)
class CodeSample:
    id: str
    source: str
    label: Label = Label.UNKNOWN
    project: str = ""
    pair_id: Optional[str] = None
    cwe_truth: Optional[tuple[str, ...]] = None
    language_hint: Language = Language.OTHER

    def __post_init__(self) -> None:
        if not self.source:
            raise ValueError(f"sample {self.id!r}: source is empty")
        object.__setattr__(self, "label", Label(self.label))
        object.__setattr__(self, "language_hint", Language(self.language_hint))
        if self.cwe_truth is not None:
            object.__setattr__(self, "cwe_truth", tuple(normalize_cwe(c) for c in self.cwe_truth))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source": self.source,
            "pair_id": self.pair_id,
            "label": self.label.value,
            "project": self.project,
            "cwe_truth": list(self.cwe_truth) if self.cwe_truth is not None else None,
            "language_hint": self.language_hint.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CodeSample":
        return cls(
            id=str(d["id"]),
            source=d["source"],
            label=Label(d.get("label", "unknown")),
            project=d.get("project", ""),
            pair_id=d.get("pair_id"),
            cwe_truth=_opt(d.get("cwe_truth"), tuple),
            language_hint=Language(d.get("language_hint", "other")),
        )


@dataclass(frozen=True)
class NumberedFunction:
    sample_id: str
    lines: tuple[tuple[int, str], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "lines", tuple((int(n), t) for n, t in self.lines))

    def __len__(self) -> int:
        return len(self.lines)

    def text_at(self, line_no: int) -> str:
        return self.lines[line_no - 1][1]

    def render(self) -> str:
        return "\n".join(f"L{n}: {t}" for n, t in self.lines)

    def to_dict(self) -> dict[str, Any]:
        return {"sample_id": self.sample_id, "lines": [[n, t] for n, t in self.lines]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "NumberedFunction":
        return cls(sample_id=d["sample_id"], lines=tuple((n, t) for n, t in d["lines"]))


def _check_span(span: Sequence[int]) -> tuple[int, int]:
    start, end = int(span[0]), int(span[1])
    if start < 1 or start > end:
        raise ValueError(f"invalid span {start}..{end}")
    return (start, end)


@dataclass(frozen=True)
class AgentReport:
    source_agent: str
    cwe: str
    span: tuple[int, int]
    description: str
    evidence: tuple[Evidence, ...] = ()
    trigger_hint: Optional[str] = None
    sample_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "cwe", normalize_cwe(self.cwe))
        object.__setattr__(self, "span", _check_span(self.span))
        object.__setattr__(self, "evidence", _tuple(self.evidence))

    def to_dict(self) -> dict[str, Any]:
        return {
            "source_agent": self.source_agent,
            "cwe": self.cwe,
            "span": list(self.span),
            "description": self.description,
            "evidence": [e.to_dict() for e in self.evidence],
            "trigger_hint": self.trigger_hint,
            "sample_id": self.sample_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AgentReport":
        return cls(
            source_agent=d["source_agent"],
            cwe=d["cwe"],
            span=tuple(d["span"]),
            description=d.get("description", ""),
            evidence=tuple(Evidence.from_dict(e) for e in d.get("evidence", ())),
            trigger_hint=d.get("trigger_hint"),
            sample_id=d.get("sample_id", ""),
        )


@dataclass(frozen=True)
class AggregatedFinding:
    id: str
    cwe: str
    span: tuple[int, int]
    description: str
    evidence: tuple[Evidence, ...]
    source_agents: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "cwe", normalize_cwe(self.cwe))
        object.__setattr__(self, "span", _check_span(self.span))
        object.__setattr__(self, "evidence", _tuple(self.evidence))
        object.__setattr__(self, "source_agents", tuple(sorted(set(self.source_agents))))
        if not self.source_agents:
            raise ValueError("finding has no source agents")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "cwe": self.cwe,
            "span": list(self.span),
            "description": self.description,
            "evidence": [e.to_dict() for e in self.evidence],
            "source_agents": list(self.source_agents),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AggregatedFinding":
        return cls(
            id=d["id"],
            cwe=d["cwe"],
            span=tuple(d["span"]),
            description=d.get("description", ""),
            evidence=tuple(Evidence.from_dict(e) for e in d.get("evidence", ())),
            source_agents=tuple(d["source_agents"]),
        )


@dataclass(frozen=True)
class Assumption:
    """One hypothesis condition.

    ``topic`` is a free-form key (e.g. ``"length:input"``) that ties the
    condition to context facts; ``node_id``/``line`` anchor it in the program
    graph so path attachment can be decided.
    """

    id: str
    text: str
    status: AssumptionStatus = AssumptionStatus.PLAUSIBLE
    breaks_path: bool = False
    evidence: tuple[Evidence, ...] = ()
    kind: AssumptionKind = AssumptionKind.PRECONDITION
    topic: Optional[str] = None
    node_id: Optional[str] = None
    line: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "status", AssumptionStatus(self.status))
        object.__setattr__(self, "kind", AssumptionKind(self.kind))
        object.__setattr__(self, "evidence", _tuple(self.evidence))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "status": self.status.value,
            "breaks_path": self.breaks_path,
            "evidence": [e.to_dict() for e in self.evidence],
            "kind": self.kind.value,
            "topic": self.topic,
            "node_id": self.node_id,
            "line": self.line,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Assumption":
        return cls(
            id=d["id"],
            text=d["text"],
            status=AssumptionStatus(d.get("status", "plausible")),
            breaks_path=bool(d.get("breaks_path", False)),
            evidence=tuple(Evidence.from_dict(e) for e in d.get("evidence", ())),
            kind=AssumptionKind(d.get("kind", "precondition")),
            topic=d.get("topic"),
            node_id=d.get("node_id"),
            line=d.get("line"),
        )


@dataclass(frozen=True)
class PathNode:
    node_id: str
    line: int
    kind: NodeKind

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NodeKind(self.kind))

    def to_dict(self) -> dict[str, Any]:
        return {"node_id": self.node_id, "line": self.line, "kind": self.kind.value}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PathNode":
        return cls(node_id=d["node_id"], line=int(d["line"]), kind=NodeKind(d["kind"]))


@dataclass(frozen=True)
class PathEdge:
    src: str
    dst: str
    dep: DepKind = DepKind.DATA

    def __post_init__(self) -> None:
        object.__setattr__(self, "dep", DepKind(self.dep))

    def to_dict(self) -> dict[str, Any]:
        return {"from": self.src, "to": self.dst, "dep": self.dep.value}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PathEdge":
        return cls(src=d["from"], dst=d["to"], dep=DepKind(d["dep"]))


@dataclass(frozen=True)
class TriggerPath:
    nodes: tuple[PathNode, ...]
    edges: tuple[PathEdge, ...]
    source_class: SourceClass
    sink_line: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", _tuple(self.nodes))
        object.__setattr__(self, "edges", _tuple(self.edges))
        object.__setattr__(self, "source_class", SourceClass(self.source_class))
        problems = trigger_path_problems(self.to_dict())
        if problems:
            raise ValueError("; ".join(f"{p}: {r}" for p, r in problems))

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.node_id for n in self.nodes)

    @property
    def sink(self) -> PathNode:
        return self.nodes[-1]

    def guard_nodes(self) -> tuple[PathNode, ...]:
        return tuple(n for n in self.nodes if n.kind is NodeKind.GUARD)

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": [n.to_dict() for n in self.nodes],
            "edges": [e.to_dict() for e in self.edges],
            "source_class": self.source_class.value,
            "sink_line": self.sink_line,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TriggerPath":
        return cls(
            nodes=tuple(PathNode.from_dict(n) for n in d["nodes"]),
            edges=tuple(PathEdge.from_dict(e) for e in d["edges"]),
            source_class=SourceClass(d["source_class"]),
            sink_line=int(d["sink_line"]),
        )

    @classmethod
    def along(
        cls,
        nodes: Sequence[PathNode],
        source_class: SourceClass | str,
        deps: Optional[Sequence[DepKind | str]] = None,
    ) -> "TriggerPath":
        """Build a path whose edges link consecutive ``nodes``."""
        deps = list(deps) if deps is not None else [DepKind.DATA] * (len(nodes) - 1)
        edges = tuple(PathEdge(a.node_id, b.node_id, dep) for a, b, dep in zip(nodes, nodes[1:], deps))
        return cls(nodes=tuple(nodes), edges=edges, source_class=SourceClass(source_class), sink_line=nodes[-1].line)


def trigger_path_problems(d: Mapping[str, Any], prefix: str = "") -> list[tuple[str, str]]:
    """Structural invariants of a serialized trigger path as (path, reason) pairs."""
    out: list[tuple[str, str]] = []
    nodes = d.get("nodes") or []
    edges = d.get("edges") or []
    if len(nodes) < 2:
        return [(f"{prefix}nodes", "a trigger path needs at least a source and a sink")]
    if nodes[0].get("kind") != "source":
        out.append((f"{prefix}nodes[0].kind", "first node must be the source"))
    if nodes[-1].get("kind") != "sink":
        out.append((f"{prefix}nodes[{len(nodes) - 1}].kind", "last node must be the sink"))
    for i, n in enumerate(nodes[1:-1], start=1):
        if n.get("kind") in ("source", "sink"):
            out.append((f"{prefix}nodes[{i}].kind", "interior nodes are transforms or guards"))
    ids = [n.get("node_id") for n in nodes]
    if len(set(ids)) != len(ids):
        out.append((f"{prefix}nodes", "path is not simple (repeated node)"))
    if d.get("sink_line") != nodes[-1].get("line"):
        out.append((f"{prefix}sink_line", "sink_line must equal the last node's line"))
    expected = list(zip(ids, ids[1:]))
    got = [(e.get("from"), e.get("to")) for e in edges]
    if got != expected:
        out.append((f"{prefix}edges", "edges must link consecutive nodes in order"))
    return out


@dataclass(frozen=True)
class Hypothesis:
    id: str
    finding_ref: str
    cwe: str
    assumptions: tuple[Assumption, ...]
    path: TriggerPath
    unconditional: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "cwe", normalize_cwe(self.cwe))
        object.__setattr__(self, "assumptions", _tuple(self.assumptions))
        if not self.assumptions and not self.unconditional:
            raise ValueError(f"hypothesis {self.id}: no assumptions and not marked unconditional")
        if self.assumptions and self.unconditional:
            raise ValueError(f"hypothesis {self.id}: unconditional marker with assumptions")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "finding_ref": self.finding_ref,
            "cwe": self.cwe,
            "assumptions": [a.to_dict() for a in self.assumptions],
            "unconditional": self.unconditional,
            "path": self.path.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Hypothesis":
        return cls(
            id=d["id"],
            finding_ref=d["finding_ref"],
            cwe=d["cwe"],
            assumptions=tuple(Assumption.from_dict(a) for a in d["assumptions"]),
            path=TriggerPath.from_dict(d["path"]),
            unconditional=bool(d.get("unconditional", False)),
        )


@dataclass(frozen=True)
class NodeAnnotation:
    """A fact about one context-graph node: source, guard, sink, or plain fact.

    ``effect`` says whether the node refutes or confirms assumptions sharing
    its ``topic``.
    """

    func: str
    line: int
    kind: str
    topic: Optional[str] = None
    label: str = ""
    source_class: Optional[SourceClass] = None
    effect: Optional[str] = None
    end_line: Optional[int] = None

    KINDS = ("source", "guard", "sink", "fact")
    EFFECTS = ("refutes", "confirms")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown annotation kind {self.kind!r}")
        if self.effect is not None and self.effect not in self.EFFECTS:
            raise ValueError(f"unknown annotation effect {self.effect!r}")
        if self.source_class is not None:
            object.__setattr__(self, "source_class", SourceClass(self.source_class))

    @property
    def node_id(self) -> str:
        return node_id(self.func, self.line)

    def to_dict(self) -> dict[str, Any]:
        return {
            "func": self.func,
            "line": self.line,
            "end_line": self.end_line,
            "kind": self.kind,
            "topic": self.topic,
            "label": self.label,
            "source_class": self.source_class.value if self.source_class else None,
            "effect": self.effect,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "NodeAnnotation":
        return cls(
            func=d["func"],
            line=int(d["line"]),
            kind=d["kind"],
            topic=d.get("topic"),
            label=d.get("label", ""),
            source_class=d.get("source_class"),
            effect=d.get("effect"),
            end_line=d.get("end_line"),
        )


def node_id(func: str, line: int) -> str:
    return f"{func}:{line}"


def split_node_id(nid: str) -> tuple[str, int]:
    func, _, line = nid.rpartition(":")
    return func, int(line)


CONTEXT_SCHEMA_VERSION = 1

Loc = tuple[str, int]


@dataclass(frozen=True)
class ContextBundle:
    functions: Mapping[str, tuple[tuple[int, str], ...]] = field(default_factory=dict)
    call_edges: tuple[tuple[str, str, int], ...] = ()
    data_edges: tuple[tuple[Loc, Loc], ...] = ()
    control_edges: tuple[tuple[Loc, Loc], ...] = ()
    imports: tuple[str, ...] = ()
    project_meta: Mapping[str, str] = field(default_factory=dict)
    externals: tuple[str, ...] = ()
    annotations: tuple[NodeAnnotation, ...] = ()
    target: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "functions", {k: tuple((int(n), t) for n, t in v) for k, v in sorted(self.functions.items())}
        )
        object.__setattr__(self, "call_edges", tuple(sorted({(a, b, int(n)) for a, b, n in self.call_edges})))
        object.__setattr__(self, "data_edges", _norm_loc_edges(self.data_edges))
        object.__setattr__(self, "control_edges", _norm_loc_edges(self.control_edges))
        object.__setattr__(self, "imports", tuple(sorted(set(self.imports))))
        object.__setattr__(self, "project_meta", {str(k): str(v) for k, v in sorted(self.project_meta.items())})
        object.__setattr__(self, "externals", tuple(sorted(set(self.externals))))
        object.__setattr__(
            self,
            "annotations",
            tuple(sorted(_tuple(self.annotations), key=lambda a: (a.func, a.line, a.kind, a.topic or "", a.label))),
        )

    def annotations_at(self, nid: str) -> list[NodeAnnotation]:
        return [a for a in self.annotations if a.node_id == nid]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": CONTEXT_SCHEMA_VERSION,
            "target": self.target,
            "functions": {k: [[n, t] for n, t in v] for k, v in self.functions.items()},
            "externals": list(self.externals),
            "call_edges": [[a, b, n] for a, b, n in self.call_edges],
            "data_edges": [[[a, la], [b, lb]] for (a, la), (b, lb) in self.data_edges],
            "control_edges": [[[a, la], [b, lb]] for (a, la), (b, lb) in self.control_edges],
            "annotations": [a.to_dict() for a in self.annotations],
            "imports": list(self.imports),
            "project_meta": dict(self.project_meta),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ContextBundle":
        return cls(
            functions={k: tuple((n, t) for n, t in v) for k, v in d.get("functions", {}).items()},
            call_edges=tuple((a, b, n) for a, b, n in d.get("call_edges", ())),
            data_edges=tuple(((a[0], a[1]), (b[0], b[1])) for a, b in d.get("data_edges", ())),
            control_edges=tuple(((a[0], a[1]), (b[0], b[1])) for a, b in d.get("control_edges", ())),
            imports=tuple(d.get("imports", ())),
            project_meta=d.get("project_meta", {}),
            externals=tuple(d.get("externals", ())),
            annotations=tuple(NodeAnnotation.from_dict(a) for a in d.get("annotations", ())),
            target=d.get("target"),
        )


def _norm_loc_edges(edges: Iterable) -> tuple:
    return tuple(sorted({((a[0], int(a[1])), (b[0], int(b[1]))) for a, b in edges}))


REJECTION_GROUNDS = (
    "pre_sink_defense",
    "sanitization",
    "unmet_premise",
    "protective_api",
    "unreachable",
    "harmless_outcome",
)


@dataclass(frozen=True)
class Verdict:
    hypothesis_ref: str
    cwe: str
    decision: Decision
    rationale: str
    evidence: tuple[Evidence, ...] = ()
    stage: str = "path"
    ground: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "cwe", normalize_cwe(self.cwe))
        object.__setattr__(self, "decision", Decision(self.decision))
        object.__setattr__(self, "evidence", _tuple(self.evidence))
        if self.decision is Decision.DISCARDED and not self.rationale.strip():
            raise ValueError("a discarded verdict needs a rationale")

    @property
    def retained(self) -> bool:
        return self.decision is Decision.RETAINED

    def to_dict(self) -> dict[str, Any]:
        return {
            "hypothesis_ref": self.hypothesis_ref,
            "cwe": self.cwe,
            "decision": self.decision.value,
            "rationale": self.rationale,
            "evidence": [e.to_dict() for e in self.evidence],
            "stage": self.stage,
            "ground": self.ground,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Verdict":
        return cls(
            hypothesis_ref=d["hypothesis_ref"],
            cwe=d["cwe"],
            decision=Decision(d["decision"]),
            rationale=d.get("rationale", ""),
            evidence=tuple(Evidence.from_dict(e) for e in d.get("evidence", ())),
            stage=d.get("stage", "path"),
            ground=d.get("ground"),
        )


@dataclass(frozen=True)
class DetectionReport:
    sample_id: str
    vulnerable: bool
    valid_cwes: tuple[str, ...]
    verdicts: tuple[Verdict, ...]
    hypotheses: tuple[Hypothesis, ...]
    call_count: int = 0
    output_tokens: int = 0
    findings: tuple[AggregatedFinding, ...] = ()
    activated_agents: tuple[str, ...] = ()
    skipped_agents: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in ("valid_cwes", "verdicts", "hypotheses", "findings", "activated_agents", "skipped_agents"):
            object.__setattr__(self, name, _tuple(getattr(self, name)))
        expected = tuple(sorted({v.cwe for v in self.verdicts if v.retained}, key=cwe_sort_key))
        if self.valid_cwes != expected or self.vulnerable != bool(expected):
            raise ValueError("vulnerable flag / valid_cwes disagree with retained verdicts")

    @classmethod
    def assemble(cls, sample_id: str, verdicts: Sequence[Verdict], **kw: Any) -> "DetectionReport":
        valid = tuple(sorted({v.cwe for v in verdicts if v.retained}, key=cwe_sort_key))
        return cls(sample_id=sample_id, vulnerable=bool(valid), valid_cwes=valid, verdicts=tuple(verdicts), **kw)

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "vulnerable": self.vulnerable,
            "valid_cwes": list(self.valid_cwes),
            "verdicts": [v.to_dict() for v in self.verdicts],
            "hypotheses": [h.to_dict() for h in self.hypotheses],
            "findings": [f.to_dict() for f in self.findings],
            "activated_agents": list(self.activated_agents),
            "skipped_agents": list(self.skipped_agents),
            "call_count": self.call_count,
            "output_tokens": self.output_tokens,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DetectionReport":
        return cls(
            sample_id=d["sample_id"],
            vulnerable=bool(d["vulnerable"]),
            valid_cwes=tuple(d["valid_cwes"]),
            verdicts=tuple(Verdict.from_dict(v) for v in d["verdicts"]),
            hypotheses=tuple(Hypothesis.from_dict(h) for h in d["hypotheses"]),
            call_count=int(d.get("call_count", 0)),
            output_tokens=int(d.get("output_tokens", 0)),
            findings=tuple(AggregatedFinding.from_dict(f) for f in d.get("findings", ())),
            activated_agents=tuple(d.get("activated_agents", ())),
            skipped_agents=tuple(d.get("skipped_agents", ())),
        )


KIND_TYPES: dict[str, type] = {
    "code_sample": CodeSample,
    "numbered_function": NumberedFunction,
    "agent_report": AgentReport,
    "aggregated_finding": AggregatedFinding,
    "assumption": Assumption,
    "trigger_path": TriggerPath,
    "hypothesis": Hypothesis,
    "context_bundle": ContextBundle,
    "verdict": Verdict,
    "detection_report": DetectionReport,
}


def dumps(obj: Any) -> str:
    return canonical_dumps(obj.to_dict())


def loads(kind: str, text: str) -> Any:
    return KIND_TYPES[kind].from_dict(json.loads(text))
