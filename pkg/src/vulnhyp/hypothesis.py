"""Hypothesis construction: turn a finding into assumptions plus a trigger path.

Two planners share one output type. ``llm`` asks the planner agent for a path
and a condition list; ``graph`` works from an exported context bundle, picks
the shortest attacker-source -> sink route, and records every annotated guard
met along it as a guard assumption.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .agents import fill, stage_prompt
from .context import render_context
from .graph import ProgramGraph, iter_simple_paths, node_key, shortest_path
from .llmgate import Gateway, GatewayRequest
from .model import (
    AggregatedFinding,
    Assumption,
    AssumptionKind,
    ContextBundle,
    DepKind,
    Hypothesis,
    NodeAnnotation,
    NodeKind,
    NumberedFunction,
    PathNode,
    SourceClass,
    TriggerPath,
    canonical_dumps,
    node_id,
    split_node_id,
)
from .structured import OutputParseError, parse_structured

PLANNER_MODES = ("llm", "graph")
DEFAULT_MAX_PATHS = 64


class PlannerError(ValueError):
    pass


class PlannerOutputInvalid(PlannerError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class NoSinkInSpan(PlannerError):
    pass


class NoTriggerPath(PlannerError):
    pass


class ContextMissing(PlannerError):
    pass


def hypothesis_id(finding: AggregatedFinding) -> str:
    fid = finding.id
    return f"H{fid[1:]}" if fid[:1] == "F" and fid[1:].isdigit() else f"H-{fid}"


def target_function(fn: NumberedFunction, ctx: Optional[ContextBundle]) -> str:
    """Name of the function under test inside the program graph."""
    return ctx.target if ctx is not None and ctx.target else fn.sample_id


def attacker_sources(
    ctx: ContextBundle,
    graph: ProgramGraph,
    source_filter: Optional[Iterable[SourceClass | str]] = None,
) -> dict[str, SourceClass]:
    """Annotated attacker sources (falling back to graph roots) with their classes."""
    wanted = None if source_filter is None else {SourceClass(s) for s in source_filter}
    found: dict[str, SourceClass] = {}
    for ann in ctx.annotations:
        if ann.kind == "source" and ann.node_id in graph:
            cls = ann.source_class or SourceClass.OTHER
            if wanted is None or cls in wanted:
                found.setdefault(ann.node_id, cls)
    if not any(a.kind == "source" for a in ctx.annotations):
        if wanted is None or SourceClass.OTHER in wanted:
            found = {n: SourceClass.OTHER for n in graph.roots()}
    return found


def _guard_annotation(ctx: ContextBundle, nid: str) -> Optional[NodeAnnotation]:
    return next((a for a in ctx.annotations_at(nid) if a.kind == "guard"), None)


def guard_text(ann: NodeAnnotation, target: str) -> str:
    lines = f"L{ann.line}" if not ann.end_line or ann.end_line == ann.line else f"L{ann.line}-L{ann.end_line}"
    where = lines if ann.func == target else f"{ann.func}:{lines}"
    return f"{ann.label or 'guard'} at {where} absent or bypassable"


def _path_from_ids(ids: list[str], graph: ProgramGraph, ctx: ContextBundle, cls: SourceClass) -> TriggerPath:
    nodes = []
    for i, nid in enumerate(ids):
        if i == 0:
            kind = NodeKind.SOURCE
        elif i == len(ids) - 1:
            kind = NodeKind.SINK
        elif _guard_annotation(ctx, nid) is not None:
            kind = NodeKind.GUARD
        else:
            kind = NodeKind.TRANSFORM
        nodes.append(PathNode(nid, split_node_id(nid)[1], kind))
    deps = [graph.dep.get((a, b), DepKind.DATA) for a, b in zip(ids, ids[1:])]
    return TriggerPath.along(nodes, cls, deps)


def sink_candidates(finding: AggregatedFinding, fn: NumberedFunction, ctx: ContextBundle, graph: ProgramGraph) -> list[str]:
    """Target-function nodes inside the finding span; annotated sinks first if any."""
    target = target_function(fn, ctx)
    lo, hi = finding.span
    inside = [n for n in graph.nodes if split_node_id(n)[0] == target and lo <= split_node_id(n)[1] <= hi]
    marked = [n for n in inside if any(a.kind == "sink" for a in ctx.annotations_at(n))]
    return marked or inside


def plan_graph(finding: AggregatedFinding, fn: NumberedFunction, ctx: Optional[ContextBundle]) -> Hypothesis:
    if ctx is None:
        raise ContextMissing("graph planning needs a program context")
    graph = ProgramGraph.from_context(ctx)
    sinks = sink_candidates(finding, fn, ctx, graph)
    if not sinks:
        raise NoSinkInSpan(f"{finding.id}: no graph node of {target_function(fn, ctx)} in span {finding.span}")
    sources = attacker_sources(ctx, graph)
    best: Optional[list[str]] = None
    for sink in sinks:
        ids = shortest_path(graph, [s for s in sources if s != sink], sink)
        if ids is not None and (best is None or (len(ids), [node_key(n) for n in ids]) < (len(best), [node_key(n) for n in best])):
            best = ids
    if best is None:
        raise NoTriggerPath(f"{finding.id}: no attacker source reaches the span {finding.span}")
    path = _path_from_ids(best, graph, ctx, sources[best[0]])
    hid = hypothesis_id(finding)
    target = target_function(fn, ctx)
    assumptions = []
    for node in path.guard_nodes():
        ann = _guard_annotation(ctx, node.node_id)
        assert ann is not None
        assumptions.append(
            Assumption(
                id=f"{hid}.A{len(assumptions) + 1}",
                text=guard_text(ann, target),
                kind=AssumptionKind.GUARD,
                topic=ann.topic,
                node_id=node.node_id,
                line=node.line,
            )
        )
    return Hypothesis(hid, finding.id, finding.cwe, tuple(assumptions), path, unconditional=not assumptions)


@dataclass(frozen=True)
class PathSet:
    paths: tuple[TriggerPath, ...]
    truncated: bool


def enumerate_paths(
    ctx: ContextBundle,
    sink: str | tuple[str, int],
    source_filter: Optional[Iterable[SourceClass | str]] = None,
    max_paths: int = DEFAULT_MAX_PATHS,
) -> PathSet:
    """Simple source->sink paths in deterministic order, at most ``max_paths``."""
    if max_paths < 1:
        raise ValueError("max_paths must be positive")
    graph = ProgramGraph.from_context(ctx)
    sink_id = sink if isinstance(sink, str) else node_id(*sink)
    sources = attacker_sources(ctx, graph, source_filter)
    out = []
    truncated = False
    for ids in iter_simple_paths(graph, [s for s in sources if s != sink_id], sink_id):
        if len(out) == max_paths:
            truncated = True
            break
        out.append(_path_from_ids(ids, graph, ctx, sources[ids[0]]))
    return PathSet(tuple(out), truncated)


def planner_prompt(finding: AggregatedFinding, fn: NumberedFunction, ctx: Optional[ContextBundle]) -> tuple[str, str]:
    agent_id, template = stage_prompt("planner")
    focus = [ctx.target] if ctx is not None and ctx.target else []
    prompt = fill(
        template,
        finding=canonical_dumps(finding.to_dict()).rstrip("\n"),
        function_code=fn.render(),
        context=render_context(ctx, focus),
    )
    return agent_id, prompt


def hypothesis_from_output(data: dict, finding: AggregatedFinding, fn: NumberedFunction, target: str, raw: str = "") -> Hypothesis:
    """Validate a planner answer against the finding and build the hypothesis."""
    steps = data["path"]
    n = len(fn)
    nodes = []
    for i, step in enumerate(steps):
        func = step.get("func") or target
        if func == target and step["line"] > n:
            raise PlannerOutputInvalid(f"path[{i}]: line {step['line']} is outside the function (1..{n})", raw)
        nodes.append(PathNode(node_id(func, step["line"]), step["line"], NodeKind(step["kind"])))
    sink = steps[-1]
    lo, hi = finding.span
    if (sink.get("func") or target) == target and not lo <= sink["line"] <= hi:
        raise PlannerOutputInvalid(f"sink line {sink['line']} lies outside the finding span {lo}..{hi}", raw)
    deps = [DepKind(s.get("dep", "data")) for s in steps[1:]]
    try:
        path = TriggerPath.along(nodes, SourceClass(data["source_class"]), deps)
    except ValueError as exc:
        raise PlannerOutputInvalid(f"malformed trigger path: {exc}", raw) from None

    hid = hypothesis_id(finding)
    guard_ids = {g.node_id: g for g in path.guard_nodes()}
    texts = {g.node_id: s.get("text", "") for g, s in zip(path.nodes, steps) if g.node_id in guard_ids}
    assumptions: list[Assumption] = []
    covered = set()
    for item in data["assumptions"]:
        line = item.get("line")
        nid = node_id(target, line) if line is not None else None
        kind = AssumptionKind(item.get("kind", "precondition"))
        # a guard condition is only a guard assumption when the path has that guard
        if kind is AssumptionKind.GUARD and nid not in guard_ids:
            kind = AssumptionKind.PRECONDITION
        if kind is AssumptionKind.GUARD:
            covered.add(nid)
        assumptions.append(
            Assumption(
                id=f"{hid}.A{len(assumptions) + 1}",
                text=item["text"],
                kind=kind,
                topic=item.get("topic"),
                node_id=nid,
                line=line,
            )
        )
    # every guard on the path must be carried as an assumption
    for nid, g in guard_ids.items():
        if nid in covered:
            continue
        code = texts.get(nid) or ""
        label = f"guard `{code.strip()}`" if code.strip() else "guard"
        func = split_node_id(nid)[0]
        where = f"L{g.line}" if func == target else f"{func}:L{g.line}"
        assumptions.append(
            Assumption(
                id=f"{hid}.A{len(assumptions) + 1}",
                text=f"{label} at {where} absent or bypassable",
                kind=AssumptionKind.GUARD,
                node_id=nid,
                line=g.line,
            )
        )
    return Hypothesis(hid, finding.id, finding.cwe, tuple(assumptions), path, unconditional=not assumptions)


def plan_llm(
    finding: AggregatedFinding,
    fn: NumberedFunction,
    ctx: Optional[ContextBundle],
    gateway: Gateway,
    max_tokens: int = 4096,
) -> Hypothesis:
    agent_id, prompt = planner_prompt(finding, fn, ctx)
    resp = gateway.complete(GatewayRequest(prompt=prompt, agent_id=agent_id, sample_id=fn.sample_id, max_tokens=max_tokens))
    try:
        data = parse_structured(resp.text, "planner_output")
    except OutputParseError as exc:
        raise PlannerOutputInvalid(f"planner output: {exc}", resp.text) from None
    return hypothesis_from_output(data, finding, fn, target_function(fn, ctx), resp.text)


def plan(
    finding: AggregatedFinding,
    fn: NumberedFunction,
    ctx: Optional[ContextBundle] = None,
    mode: str = "llm",
    gateway: Optional[Gateway] = None,
    max_tokens: int = 4096,
) -> Hypothesis:
    if mode == "graph":
        return plan_graph(finding, fn, ctx)
    if mode == "llm":
        if gateway is None:
            raise PlannerError("llm planning needs a gateway")
        return plan_llm(finding, fn, ctx, gateway, max_tokens)
    raise PlannerError(f"unknown planner mode {mode!r}")
