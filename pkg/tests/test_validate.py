import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import covered, simple_paths
from vulnhyp.graph import ProgramGraph
from vulnhyp.llmgate import Gateway, MockBackend, ScriptEntry
from vulnhyp.model import (
    Assumption,
    AssumptionStatus,
    ContextBundle,
    Hypothesis,
    NodeAnnotation,
    NumberedFunction,
    PathNode,
    TriggerPath,
)
from vulnhyp.scenarios import load_scenario
from vulnhyp.validate import (
    ContextMissing,
    PrunerOutputInvalid,
    ValidatorOutputInvalid,
    breaks_path,
    prune_assumption,
    prune_hypothesis,
    verify_path,
)


def func(n, name="t"):
    return NumberedFunction(name, tuple((i, f"stmt {i}") for i in range(1, n + 1)))


def ctx_from(adj, n, annotations=(), name="t"):
    return ContextBundle(
        functions={name: tuple((i, f"stmt {i}") for i in range(1, n + 1))},
        data_edges=tuple(((name, a), (name, b)) for a, succ in adj.items() for b in succ),
        annotations=tuple(annotations),
        target=name,
    )


def path(*lines, guards=(), name="t"):
    nodes = []
    for i, ln in enumerate(lines):
        kind = "source" if i == 0 else "sink" if i == len(lines) - 1 else "guard" if ln in guards else "transform"
        nodes.append(PathNode(f"{name}:{ln}", ln, kind))
    return TriggerPath.along(nodes, "parameter")


def hyp(p, *assumptions):
    return Hypothesis("H1", "F1", "CWE-476", tuple(assumptions), p, unconditional=not assumptions)


def fact(line, topic, effect="refutes", kind="fact", label="fact", func="t"):
    return NodeAnnotation(func, line, kind, topic=topic, effect=effect, label=label)


def test_caller_length_check_contradicts():
    sc = load_scenario("strcpy_caller_guard")
    a = Assumption("H1.A1", "input is too long", topic="length:input", node_id="func_c:4", line=4)
    fn = func(5, "func_c")
    j = prune_assumption(a, fn, sc.context, mode="graph")
    assert j.status is AssumptionStatus.CONTRADICTED
    assert [(e.func, e.line, e.snippet) for e in j.evidence] == [("func_a", 3, "if (strlen(input) > 256) return;")]


def test_no_facts_is_plausible():
    a = Assumption("H1.A1", "x may be huge", topic="range:x", line=2)
    assert prune_assumption(a, func(3), ctx_from({1: [2]}, 3), mode="graph").status is AssumptionStatus.PLAUSIBLE
    untopical = Assumption("H1.A2", "anything", line=2)
    assert prune_assumption(untopical, func(3), ctx_from({1: [2]}, 3), mode="graph").status is AssumptionStatus.PLAUSIBLE


def test_constructor_fact_contradicts_null():
    adj = {1: [2], 2: [4], 3: [4]}
    ctx = ctx_from(adj, 4, [NodeAnnotation("t", 1, "source", source_class="parameter"), fact(2, "null:p", label="non-null constructor")])
    # oracle: every data edge into the use site starts at the constructor, or at a node no source reaches
    feeding = [a for a, succ in adj.items() if 4 in succ]
    assert all(a == 2 or not simple_paths(adj, 1, a) for a in feeding)
    a = Assumption("H1.A1", "p may be null", topic="null:p", node_id="t:4", line=4)
    j = prune_assumption(a, func(4), ctx, mode="graph")
    assert j.status is AssumptionStatus.CONTRADICTED and [e.line for e in j.evidence] == [2]


def test_refuter_on_one_route_only_stays_plausible():
    adj = {1: [2, 3], 2: [4], 3: [4]}
    ctx = ctx_from(adj, 4, [fact(2, "null:p")])
    a = Assumption("H1.A1", "p may be null", topic="null:p", node_id="t:4")
    assert not covered({k: v for k, v in adj.items()}, {2}, {1}, 4)
    assert prune_assumption(a, func(4), ctx, mode="graph").status is AssumptionStatus.PLAUSIBLE


def test_confirming_fact_is_valid():
    ctx = ctx_from({1: [2]}, 2, [fact(1, "range:i", effect="confirms")])
    a = Assumption("H1.A1", "i unbounded", topic="range:i", line=2)
    j = prune_assumption(a, func(2), ctx, mode="graph")
    assert j.status is AssumptionStatus.VALID and j.evidence


def test_graph_pruning_needs_context():
    with pytest.raises(ContextMissing):
        prune_assumption(Assumption("A", "t"), func(1), None, mode="graph")


def test_rejection_when_contradicted_on_path():
    ctx = ctx_from({1: [2], 2: [3]}, 3, [fact(2, "null:p")])
    h = hyp(path(1, 3), Assumption("H1.A1", "p may be null", topic="null:p", node_id="t:3", line=3))
    res = prune_hypothesis(h, func(3), ctx, mode="graph")
    assert res.rejected and res.pruned is None
    v = res.rejection
    assert (v.decision.value, v.stage, v.ground) == ("discarded", "assumption", "contradicted_assumption")
    assert "H1.A1" in v.rationale
    assert res.judged.assumptions[0].breaks_path


def test_all_valid_passes_through():
    ctx = ctx_from({1: [2], 2: [3]}, 3, [fact(1, "a", effect="confirms"), fact(2, "b", effect="confirms")])
    h = hyp(path(1, 2, 3), Assumption("H1.A1", "one", topic="a", line=2), Assumption("H1.A2", "two", topic="b", line=3))
    res = prune_hypothesis(h, func(3), ctx, mode="graph")
    assert not res.rejected
    assert [a.status.value for a in res.pruned.assumptions] == ["valid", "valid"]
    strip = lambda x: [(a.id, a.text, a.node_id, a.line, a.kind) for a in x.assumptions]
    assert strip(res.pruned) == strip(h) and res.pruned.path == h.path


def test_off_path_contradiction_is_dropped():
    adj = {1: [2, 3], 2: [5], 3: [4], 4: [5]}
    ctx = ctx_from(adj, 5, [fact(3, "y")])
    h = hyp(
        path(1, 2, 5),
        Assumption("H1.A1", "on route", topic="x", node_id="t:2", line=2),
        Assumption("H1.A2", "on other route", topic="y", node_id="t:4", line=4),
    )
    res = prune_hypothesis(h, func(5), ctx, mode="graph")
    assert not res.rejected
    assert res.judged.assumptions[1].status is AssumptionStatus.CONTRADICTED
    assert not res.judged.assumptions[1].breaks_path
    assert [a.id for a in res.pruned.assumptions] == ["H1.A1"]
    # oracle: with the refuted route removed the hypothesis path is still a source->sink route
    reduced = {k: [v for v in succ if v not in (3, 4)] for k, succ in adj.items() if k not in (3, 4)}
    assert [1, 2, 5] in simple_paths(reduced, 1, 5)


def test_breaks_path_rule():
    p = path(1, 2, 5)
    contra = dict(status="contradicted", evidence=())
    sole = hyp(p, Assumption("A1", "x", **contra))
    assert breaks_path(sole.assumptions[0], sole)
    on = Assumption("A1", "x", node_id="t:2", **contra)
    off = Assumption("A2", "y", node_id="t:4", **contra)
    by_line = Assumption("A3", "z", line=5, **contra)
    h = hyp(p, on, off, by_line)
    assert [breaks_path(a, h) for a in h.assumptions] == [True, False, True]
    assert not breaks_path(Assumption("A1", "x", node_id="t:2"), h)


def test_dominated_path_discarded():
    ctx = ctx_from({1: [2], 2: [3]}, 3, [NodeAnnotation("t", 2, "guard", label="bounds check")])
    h = hyp(path(1, 2, 3, guards=(2,)), Assumption("H1.A1", "check bypassable", kind="guard", node_id="t:2", line=2))
    v = verify_path(h, func(3), ctx, mode="graph")
    assert (v.decision.value, v.ground, v.stage) == ("discarded", "pre_sink_defense", "path")
    assert [e.line for e in v.evidence] == [2]


def test_bypass_route_retained():
    adj = {1: [2, 3], 2: [4], 3: [4]}
    ctx = ctx_from(adj, 4, [NodeAnnotation("t", 2, "guard", label="check")])
    h = hyp(path(1, 2, 4, guards=(2,)), Assumption("H1.A1", "g", kind="guard", node_id="t:2", line=2))
    v = verify_path(h, func(4), ctx, mode="graph")
    assert v.retained and v.rationale == "unprotected route: t:1 -> t:3 -> t:4"
    uncovered = [p for p in simple_paths(adj, 1, 4) if 2 not in p[:-1]]
    assert uncovered == [[1, 3, 4]]


def test_guard_shown_bypassable_does_not_protect():
    ctx = ctx_from({1: [2], 2: [3]}, 3, [NodeAnnotation("t", 2, "guard", label="check")])
    a = Assumption("H1.A1", "check bypassable", kind="guard", node_id="t:2", line=2, status="valid")
    v = verify_path(hyp(path(1, 2, 3, guards=(2,)), a), func(3), ctx, mode="graph")
    assert v.retained


def test_path_only_without_context():
    v = verify_path(hyp(path(1, 3), Assumption("A1", "x", line=3)), func(3), None, mode="graph")
    assert v.retained


@st.composite
def verify_cases(draw):
    n = draw(st.integers(3, 12))
    adj = {i: sorted(j for j in range(i + 1, n + 1) if draw(st.booleans())) for i in range(1, n)}
    adj[n] = []
    adj[1] = sorted(set(adj[1]) | {n}) if draw(st.booleans()) else adj[1]
    route = simple_paths(adj, 1, n)
    if not route:
        adj[1] = sorted(set(adj[1]) | {n})
        route = [[1, n]]
    chosen = draw(st.sampled_from(route))
    guards = draw(st.sets(st.integers(2, n - 1)))
    return n, adj, chosen, guards


@settings(max_examples=300)
@given(verify_cases())
def test_retain_by_default(case):
    n, adj, chosen, _ = case
    h = hyp(path(*chosen), Assumption("H1.A1", "cond", line=n))
    assert verify_path(h, func(n), ctx_from(adj, n), mode="graph").retained


@settings(max_examples=300)
@given(verify_cases(), st.integers(2, 11))
def test_adding_a_guard_is_monotone(case, extra):
    n, adj, chosen, guards = case
    if extra >= n:
        return
    h = hyp(path(*chosen, guards=guards), Assumption("H1.A1", "cond", line=n))
    before = verify_path(h, func(n), ctx_from(adj, n, [NodeAnnotation("t", g, "guard") for g in guards]), mode="graph")
    after = verify_path(h, func(n), ctx_from(adj, n, [NodeAnnotation("t", g, "guard") for g in guards | {extra}]), mode="graph")
    if not before.retained:
        assert not after.retained
    sources = {1}
    assert before.retained == (not covered(adj, guards, sources, n))


def _pruner(status, evidence=True):
    ev = [{"line": 2, "snippet": "stmt 2"}] if evidence else []
    return ScriptEntry("AssumptionPrunerAgent", json.dumps({"status": status, "evidence": ev, "reasoning": "r"}), 3)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.sampled_from(["valid", "plausible", "contradicted", "unknown"]), st.sampled_from([None, 2, 4])), min_size=1, max_size=4))
def test_status_soundness_llm(script):
    p = path(1, 2, 5)
    assumptions = [Assumption(f"H1.A{i + 1}", "c", node_id=None if ln is None else f"t:{ln}") for i, (_, ln) in enumerate(script)]
    gw = Gateway(MockBackend([_pruner(s) for s, _ in script]))
    res = prune_hypothesis(hyp(p, *assumptions), func(5), None, mode="llm", gateway=gw)
    contradicted = [i for i, (s, _) in enumerate(script) if s == "contradicted"]
    # independent restatement of the rejection rule
    expect_reject = any(len(script) == 1 or script[i][1] == 2 for i in contradicted)
    assert res.rejected == expect_reject
    if not res.rejected:
        assert all(a.status is not AssumptionStatus.CONTRADICTED for a in res.pruned.assumptions)
        assert len(res.pruned.assumptions) == len(script) - len(contradicted)
    statuses = [a.status.value for a in res.judged.assumptions]
    assert statuses == [("plausible" if s == "unknown" else s) for s, _ in script]


def test_uncited_contradiction_is_plausible():
    gw = Gateway(MockBackend([_pruner("contradicted", evidence=False)]))
    h = hyp(path(1, 2), Assumption("A1", "x"))
    j = prune_assumption(h.assumptions[0], func(2), None, mode="llm", gateway=gw, hypothesis=h)
    assert j.status is AssumptionStatus.PLAUSIBLE


def test_pruner_garbage():
    gw = Gateway(MockBackend([ScriptEntry("AssumptionPrunerAgent", "{\"status\": \"maybe\"}", 1)]))
    h = hyp(path(1, 2), Assumption("A1", "x"))
    with pytest.raises(PrunerOutputInvalid):
        prune_hypothesis(h, func(2), None, mode="llm", gateway=gw)


def _validator(**doc):
    return Gateway(MockBackend([ScriptEntry("FinalValidatorAgent", json.dumps(doc), 5)]))


def test_llm_validator_justified_block():
    gw = _validator(decision="discarded", ground="sanitization", rationale="length clamped at L2", evidence=[{"line": 2, "snippet": "n = min(n, cap)"}])
    v = verify_path(hyp(path(1, 3), Assumption("A1", "x")), func(3), None, mode="llm", gateway=gw)
    assert (v.decision.value, v.ground, v.evidence[0].line) == ("discarded", "sanitization", 2)


def test_llm_validator_unjustified_block_forwarded():
    gw = _validator(decision="discarded", ground=None, rationale="looks fine")
    v = verify_path(hyp(path(1, 3), Assumption("A1", "x")), func(3), None, mode="llm", gateway=gw)
    assert v.retained and v.rationale.startswith("block not justified")


def test_llm_validator_garbage():
    gw = Gateway(MockBackend([ScriptEntry("FinalValidatorAgent", "retain it", 1)]))
    with pytest.raises(ValidatorOutputInvalid):
        verify_path(hyp(path(1, 3), Assumption("A1", "x")), func(3), None, mode="llm", gateway=gw)


def test_case_study_all_discarded():
    sc = load_scenario("search_make_new")
    r = sc.run()
    assert len(r.findings) == 5 and len(r.verdicts) == 5
    assert all(not v.retained for v in r.verdicts)
    assert not r.vulnerable and r.valid_cwes == ()


def test_program_graph_includes_call_edges():
    sc = load_scenario("strcpy_caller_guard")
    g = ProgramGraph.from_context(sc.context)
    assert "func_c:1" in g.successors("func_a:4")
