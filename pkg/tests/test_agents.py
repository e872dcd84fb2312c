import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vulnhyp import agents as ag
from vulnhyp.agents import (
    AgentRegistry,
    AgentSpec,
    DuplicateAgent,
    MissingSlot,
    SpanOutOfRange,
    UnknownAgent,
    default_registry,
    fill,
    parse_agent_output,
    run_agent,
)
from vulnhyp.llmgate import Gateway, MockBackend, ScriptEntry
from vulnhyp.preprocess import number_lines
from vulnhyp.scenarios import load_scenario
from vulnhyp.structured import OutputParseError

ENUMERATED = {
    "StaticAnalyzerAgent",
    "BehaviorAnalyzerAgent",
    "MemoryLayoutAgent",
    "FormatStringAgent",
    "FilePermissionAgent",
    "AuthFlowAgent",
    "CryptoConfigAgent",
    "ConcurrencyAnalyzerAgent",
    "ErrorHandlingAgent",
    "CodeInjectionAgent",
}


def _spec(id="X", template="look at {function_code}"):
    return AgentSpec(id=id, role_text="r", cwe_focus=("CWE-1",), trigger_hints=(), prompt_template=template)


def _finding(span, cwe="CWE-125", line=None):
    return {"cwe": cwe, "span": span, "description": "d", "evidence": [{"line": line or span[0], "snippet": "s"}]}


def test_shipped_registry_is_exactly_the_ten():
    assert set(default_registry().ids) == ENUMERATED
    assert set(ag.ALL_AGENTS) == ENUMERATED


def test_focus_lists_shipped_as_data():
    reg = default_registry()
    assert {"CWE-125", "CWE-787", "CWE-416", "CWE-476"} <= set(reg.get("MemoryLayoutAgent").cwe_focus)
    assert {"CWE-78", "CWE-89"} <= set(reg.get("CodeInjectionAgent").cwe_focus)


def test_every_template_has_function_slot():
    reg = default_registry()
    for a in reg.ids:
        assert "{function_code}" in reg.get(a).prompt_template


def test_alias_resolves_to_static_analyzer():
    assert default_registry().get("AnalyzerAgent").id == "StaticAnalyzerAgent"


def test_register_and_lookup():
    reg = AgentRegistry()
    reg.register(_spec("FormatStringAgent"))
    assert reg.get("FormatStringAgent").id == "FormatStringAgent"
    with pytest.raises(DuplicateAgent):
        reg.register(_spec("FormatStringAgent"))
    with pytest.raises(MissingSlot):
        reg.register(_spec("Y", "no slot"))
    with pytest.raises(UnknownAgent):
        reg.get("Nobody")


def test_fill_is_single_pass():
    assert fill("{a} {b} {zz}", a="{b}", b="B") == "{b} B {zz}"


def test_render_inserts_numbered_body_and_context():
    spec = _spec(template="{function_code}\n--\n{context}")
    out = spec.render(number_lines("int foo()"), "ctx here")
    assert out == "L1: int foo()\n--\nctx here"


def test_parse_two_findings():
    raw = json.dumps([_finding([1, 2]), _finding([3, 4], "CWE-787")])
    reports = parse_agent_output(raw, "MemoryLayoutAgent", 10)
    assert [r.span for r in reports] == [(1, 2), (3, 4)]
    assert {r.source_agent for r in reports} == {"MemoryLayoutAgent"}


def test_parse_wrapped_object_and_empty():
    assert parse_agent_output('{"findings": []}', "A", 5) == []
    assert parse_agent_output("[]", "A", 5) == []


def test_fenced_document_repaired():
    raw = "```json\n" + json.dumps([_finding([2, 2])]) + "\n```"
    assert parse_agent_output(raw, "A", 5)[0].span == (2, 2)


def test_span_out_of_range():
    with pytest.raises(SpanOutOfRange):
        parse_agent_output(json.dumps([_finding([500, 501])]), "A", 40)
    with pytest.raises(SpanOutOfRange):
        parse_agent_output(json.dumps([_finding([1, 2], line=41)]), "A", 40)


def test_reversed_span_and_bad_cwe():
    with pytest.raises(OutputParseError):
        parse_agent_output(json.dumps([_finding([5, 2])]), "A", 40)
    with pytest.raises(OutputParseError):
        parse_agent_output(json.dumps([_finding([1, 2], cwe="heap")]), "A", 40)


def test_cwe_normalized():
    assert parse_agent_output(json.dumps([_finding([1, 1], cwe="CWE-089")]), "A", 3)[0].cwe == "CWE-89"


@given(st.text())
def test_parse_total_over_arbitrary_text(raw):
    try:
        out = parse_agent_output(raw, "A", 10)
    except OutputParseError:
        return
    assert all(r.source_agent == "A" for r in out)


def test_run_agent_on_missing_authorization_fixture():
    sc = load_scenario("missing_auth_check")
    fn = number_lines(sc.sample)
    text = json.dumps([{"cwe": "CWE-862", "span": [106, 106], "description": "history returned without check", "evidence": [{"line": 106, "snippet": fn.text_at(106).strip()}]}])
    gw = Gateway(MockBackend([ScriptEntry("AuthFlowAgent", text, 40)]))
    run = run_agent("AuthFlowAgent", fn, None, gw)
    assert [(r.span, r.cwe, r.source_agent) for r in run.reports] == [((106, 106), "CWE-862", "AuthFlowAgent")]
    assert run.response.output_tokens == 40


def test_run_agent_no_findings():
    gw = Gateway(MockBackend([ScriptEntry("StaticAnalyzerAgent", "[]", 2)]))
    assert run_agent("StaticAnalyzerAgent", number_lines("int x;"), None, gw).reports == []
