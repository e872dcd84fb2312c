"""Two-stage validation of hypotheses.

Assumption pruning judges each condition as valid, contradicted or plausible;
a contradicted condition that the trigger path depends on rejects the whole
hypothesis. Path verification then discards a surviving hypothesis only when
protections ahead of the sink cut every route from an attacker source.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional

from .agents import fill, stage_prompt
from .context import render_context
from .graph import ProgramGraph, bypass_route, dominates, node_key
from .hypothesis import attacker_sources, target_function
from .llmgate import Gateway, GatewayRequest
from .model import (
    REJECTION_GROUNDS,
    Assumption,
    AssumptionKind,
    AssumptionStatus,
    ContextBundle,
    Decision,
    Evidence,
    Hypothesis,
    NumberedFunction,
    Verdict,
    canonical_dumps,
    split_node_id,
)
from .structured import OutputParseError, parse_structured

__all__ = [
    "ContextMissing",
    "Judgement",
    "PruneResult",
    "ValidatorOutputInvalid",
    "PrunerOutputInvalid",
    "breaks_path",
    "dominates",
    "prune_assumption",
    "prune_hypothesis",
    "verify_path",
]

VALIDATION_MODES = ("llm", "graph")
CONTRADICTED_GROUND = "contradicted_assumption"


class ValidationError(ValueError):
    pass


class ContextMissing(ValidationError):
    pass


class PrunerOutputInvalid(ValidationError):
    pass


class ValidatorOutputInvalid(ValidationError):
    pass


class Judgement(NamedTuple):
    status: AssumptionStatus
    evidence: tuple[Evidence, ...]
    reasoning: str = ""


def _snippet(ctx: Optional[ContextBundle], fn: Optional[NumberedFunction], nid: str, fallback: str = "") -> tuple[int, str, str]:
    func, line = split_node_id(nid)
    text = ""
    if ctx is not None and func in ctx.functions:
        text = dict(ctx.functions[func]).get(line, "")
    elif fn is not None and func == fn.sample_id and 1 <= line <= len(fn):
        text = fn.text_at(line)
    return line, (text.strip() or fallback or nid), func


def _evidence_at(nids: Iterable[str], ctx: Optional[ContextBundle], fn: Optional[NumberedFunction], labels: Optional[dict[str, str]] = None) -> tuple[Evidence, ...]:
    out = []
    for nid in sorted(set(nids), key=node_key):
        line, text, func = _snippet(ctx, fn, nid, (labels or {}).get(nid, ""))
        out.append(Evidence(line, text, func))
    return tuple(out)


def anchor_of(assumption: Assumption, target: str) -> Optional[str]:
    if assumption.node_id:
        return assumption.node_id
    if assumption.line is not None:
        return f"{target}:{assumption.line}"
    return None


def prune_graph(assumption: Assumption, fn: NumberedFunction, ctx: ContextBundle, graph: Optional[ProgramGraph] = None) -> Judgement:
    """Judge one condition from context facts sharing its topic.

    Contradicted when refuting facts cut every route from an attacker source
    (graph roots when none is annotated) to the condition's anchor; valid
    when a confirming fact exists; otherwise plausible.
    """
    graph = graph or ProgramGraph.from_context(ctx)
    anchor = anchor_of(assumption, target_function(fn, ctx))
    if not assumption.topic:
        return Judgement(AssumptionStatus.PLAUSIBLE, (), "no topic to match context facts against")
    same = [a for a in ctx.annotations if a.topic == assumption.topic and a.kind in ("guard", "fact")]
    refuting = {a.node_id: a.label for a in same if a.effect == "refutes" and a.node_id != anchor}
    if anchor is not None and anchor in graph and refuting:
        feeding = graph.reaching([anchor]) & set(refuting)
        if feeding and dominates(graph, refuting, attacker_sources(ctx, graph), anchor):
            ev = _evidence_at(feeding, ctx, fn, refuting)
            return Judgement(AssumptionStatus.CONTRADICTED, ev, "refuting facts precede the anchor on every route")
    confirming = {a.node_id: a.label for a in same if a.effect == "confirms"}
    if confirming:
        return Judgement(AssumptionStatus.VALID, _evidence_at(confirming, ctx, fn, confirming), "a confirming fact exists")
    return Judgement(AssumptionStatus.PLAUSIBLE, (), "no decisive fact")


def pruner_prompt(assumption: Assumption, h: Hypothesis, fn: NumberedFunction, ctx: Optional[ContextBundle]) -> tuple[str, str]:
    agent_id, template = stage_prompt("pruner")
    return agent_id, fill(
        template,
        assumption=canonical_dumps(assumption.to_dict()).rstrip("\n"),
        hypothesis=canonical_dumps(h.to_dict()).rstrip("\n"),
        function_code=fn.render(),
        context=render_context(ctx, _focus(h, fn, ctx)),
    )


def prune_llm(assumption: Assumption, h: Hypothesis, fn: NumberedFunction, ctx: Optional[ContextBundle], gateway: Gateway, max_tokens: int = 4096) -> Judgement:
    agent_id, prompt = pruner_prompt(assumption, h, fn, ctx)
    resp = gateway.complete(GatewayRequest(prompt=prompt, agent_id=agent_id, sample_id=fn.sample_id, max_tokens=max_tokens))
    try:
        data = parse_structured(resp.text, "pruner_output")
    except OutputParseError as exc:
        raise PrunerOutputInvalid(f"pruner output for {assumption.id}: {exc}") from None
    evidence = tuple(dict.fromkeys(Evidence(e["line"], e["snippet"], e.get("func")) for e in data["evidence"]))
    status = data["status"]
    if status == "unknown":
        status = "plausible"
    # a contradiction without a cited fact is not decisive
    if status == "contradicted" and not evidence:
        status = "plausible"
    return Judgement(AssumptionStatus(status), evidence, data.get("reasoning", ""))


def prune_assumption(
    assumption: Assumption,
    fn: NumberedFunction,
    ctx: Optional[ContextBundle] = None,
    mode: str = "llm",
    gateway: Optional[Gateway] = None,
    hypothesis: Optional[Hypothesis] = None,
    graph: Optional[ProgramGraph] = None,
    max_tokens: int = 4096,
) -> Judgement:
    if mode == "graph":
        if ctx is None:
            raise ContextMissing("graph pruning needs a program context")
        return prune_graph(assumption, fn, ctx, graph)
    if mode == "llm":
        if gateway is None or hypothesis is None:
            raise ValidationError("llm pruning needs a gateway and the enclosing hypothesis")
        return prune_llm(assumption, hypothesis, fn, ctx, gateway, max_tokens)
    raise ValidationError(f"unknown pruner mode {mode!r}")


def breaks_path(assumption: Assumption, h: Hypothesis) -> bool:
    """A contradicted condition breaks the path when the path is anchored on it.

    Attached means its node (or, lacking one, its line) is on the trigger
    path. A hypothesis resting on a single condition always depends on it.
    """
    if assumption.status is not AssumptionStatus.CONTRADICTED:
        return False
    if len(h.assumptions) == 1:
        return True
    if assumption.node_id is not None:
        return assumption.node_id in h.path.node_ids
    return assumption.line is not None and assumption.line in {n.line for n in h.path.nodes}


@dataclass(frozen=True)
class PruneResult:
    judged: Hypothesis
    pruned: Optional[Hypothesis]
    rejection: Optional[Verdict]

    @property
    def rejected(self) -> bool:
        return self.rejection is not None


def prune_hypothesis(
    h: Hypothesis,
    fn: NumberedFunction,
    ctx: Optional[ContextBundle] = None,
    mode: str = "llm",
    gateway: Optional[Gateway] = None,
    max_tokens: int = 4096,
) -> PruneResult:
    """Judge every condition, then reject or keep the surviving ones."""
    graph = ProgramGraph.from_context(ctx) if mode == "graph" and ctx is not None else None
    judged = []
    for a in h.assumptions:
        j = prune_assumption(a, fn, ctx, mode, gateway, h, graph, max_tokens)
        judged.append(dataclasses.replace(a, status=j.status, evidence=j.evidence))
    full = dataclasses.replace(h, assumptions=tuple(judged))
    judged = [dataclasses.replace(a, breaks_path=breaks_path(a, full)) for a in judged]
    full = dataclasses.replace(h, assumptions=tuple(judged))
    breaking = [a for a in judged if a.breaks_path]
    if breaking:
        a = breaking[0]
        verdict = Verdict(
            hypothesis_ref=h.id,
            cwe=h.cwe,
            decision=Decision.DISCARDED,
            rationale=f"assumption {a.id} is contradicted and the trigger path depends on it: {a.text}",
            evidence=tuple(dict.fromkeys(e for b in breaking for e in b.evidence)),
            stage="assumption",
            ground=CONTRADICTED_GROUND,
        )
        return PruneResult(full, None, verdict)
    kept = tuple(a for a in judged if a.status is not AssumptionStatus.CONTRADICTED)
    pruned = dataclasses.replace(h, assumptions=kept, unconditional=not kept)
    return PruneResult(full, pruned, None)


def _focus(h: Hypothesis, fn: NumberedFunction, ctx: Optional[ContextBundle]) -> list[str]:
    funcs = {split_node_id(n)[0] for n in h.path.node_ids}
    if ctx is not None and ctx.target:
        funcs.add(ctx.target)
    return sorted(funcs)


def verify_graph(h: Hypothesis, fn: NumberedFunction, ctx: Optional[ContextBundle]) -> Verdict:
    graph = ProgramGraph.from_context(ctx) if ctx is not None else ProgramGraph()
    for e in h.path.edges:
        graph.add_edge(e.src, e.dst, e.dep)
    sink = h.path.sink.node_id
    sources = {h.path.nodes[0].node_id}
    guards = {n.node_id for n in h.path.guard_nodes()}
    labels: dict[str, str] = {}
    if ctx is not None:
        if any(a.kind == "source" for a in ctx.annotations):
            sources |= set(attacker_sources(ctx, graph))
        for a in ctx.annotations:
            if a.kind == "guard" and a.node_id in graph:
                guards.add(a.node_id)
                labels[a.node_id] = a.label
    # a guard already shown absent or bypassable does not protect anything
    bypassed = {
        a.node_id
        for a in h.assumptions
        if a.kind is AssumptionKind.GUARD and a.status is AssumptionStatus.VALID and a.node_id
    }
    guards -= bypassed
    sources.discard(sink)
    route = bypass_route(graph, guards, sources, sink)
    if route is None:
        live = graph.reaching([sink]) & guards
        return Verdict(
            hypothesis_ref=h.id,
            cwe=h.cwe,
            decision=Decision.DISCARDED,
            rationale="protections before the sink block every route from an attacker source",
            evidence=_evidence_at(live, ctx, fn, labels),
            stage="path",
            ground="pre_sink_defense",
        )
    return Verdict(
        hypothesis_ref=h.id,
        cwe=h.cwe,
        decision=Decision.RETAINED,
        rationale="unprotected route: " + " -> ".join(route),
        evidence=_evidence_at(route, ctx, fn),
        stage="path",
    )


def validator_prompt(h: Hypothesis, fn: NumberedFunction, ctx: Optional[ContextBundle]) -> tuple[str, str]:
    agent_id, template = stage_prompt("validator")
    return agent_id, fill(
        template,
        hypothesis=canonical_dumps(h.to_dict()).rstrip("\n"),
        function_code=fn.render(),
        context=render_context(ctx, _focus(h, fn, ctx)),
    )


def verify_llm(h: Hypothesis, fn: NumberedFunction, ctx: Optional[ContextBundle], gateway: Gateway, max_tokens: int = 4096) -> Verdict:
    agent_id, prompt = validator_prompt(h, fn, ctx)
    resp = gateway.complete(GatewayRequest(prompt=prompt, agent_id=agent_id, sample_id=fn.sample_id, max_tokens=max_tokens))
    try:
        data = parse_structured(resp.text, "validator_output")
    except OutputParseError as exc:
        raise ValidatorOutputInvalid(f"validator output for {h.id}: {exc}") from None
    evidence = tuple(dict.fromkeys(Evidence(e["line"], e["snippet"], e.get("func")) for e in data.get("evidence", ())))
    rationale = data["rationale"].strip()
    ground = data.get("ground")
    if data["decision"] == "discarded":
        if ground in REJECTION_GROUNDS and rationale:
            return Verdict(h.id, h.cwe, Decision.DISCARDED, rationale, evidence, "path", ground)
        # a block without a recognized ground and a reason is forwarded as uncertain
        rationale = "block not justified by a recognized ground; forwarded" + (f": {rationale}" if rationale else "")
    return Verdict(h.id, h.cwe, Decision.RETAINED, rationale or "no blocking protection evidenced", evidence, "path")


def verify_path(
    h: Hypothesis,
    fn: NumberedFunction,
    ctx: Optional[ContextBundle] = None,
    mode: str = "llm",
    gateway: Optional[Gateway] = None,
    max_tokens: int = 4096,
) -> Verdict:
    if mode == "graph":
        return verify_graph(h, fn, ctx)
    if mode == "llm":
        if gateway is None:
            raise ValidationError("llm verification needs a gateway")
        return verify_llm(h, fn, ctx, gateway, max_tokens)
    raise ValidationError(f"unknown validator mode {mode!r}")
