import pytest
from hypothesis import given
from hypothesis import strategies as st

from vulnhyp.structured import OutputParseError, parse_json, parse_structured, repair, strip_fences


def test_plain_json():
    assert parse_json('{"cues": []}') == {"cues": []}


def test_fences_stripped_exactly():
    raw = '```json\n{"cues": ["memory_op"]}\n```'
    assert strip_fences(raw) == '{"cues": ["memory_op"]}'
    assert parse_structured(raw, "dispatcher_output") == {"cues": ["memory_op"]}


def test_leading_and_trailing_prose_trimmed():
    raw = 'Here you go: [{"a": 1}] hope that helps'
    assert repair(raw) == '[{"a": 1}]'
    assert parse_json(raw) == [{"a": 1}]


def test_unrepairable_raises_typed_error():
    with pytest.raises(OutputParseError) as ei:
        parse_json("no structure here")
    assert ei.value.raw == "no structure here"


def test_schema_mismatch_carries_violations():
    with pytest.raises(OutputParseError) as ei:
        parse_structured('{"cues": "memory_op"}', "dispatcher_output")
    assert ei.value.violations.paths() == ["cues"]


@given(st.text())
def test_parse_is_total(raw):
    try:
        parse_structured(raw, "agent_output")
    except OutputParseError:
        pass
