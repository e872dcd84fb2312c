from fractions import Fraction
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES
from oracles import pair_table, recount
from vulnhyp.eval import (
    ConfusionCounts,
    DatasetSchemaViolation,
    MissingReport,
    OrphanSample,
    PairOutcome,
    audit_vps,
    cwe_score,
    dump_pairs,
    evaluate,
    exact,
    load_pairs,
    metrics,
    pair_metrics,
    parse_pairs,
    render,
)
from vulnhyp.model import CodeSample, Decision, DetectionReport, Label, Verdict


def pair(pid, cwe="CWE-787"):
    return [
        CodeSample(f"{pid}-v", f"int v_{pid}(void) {{ return 1; }}", label=Label.VULNERABLE, cwe_truth=(cwe,), pair_id=pid),
        CodeSample(f"{pid}-b", f"int b_{pid}(void) {{ return 0; }}", label=Label.BENIGN, cwe_truth=(cwe,), pair_id=pid),
    ]


def flagged(sample_id, yes):
    verdicts = [Verdict("H1", "CWE-787", Decision.RETAINED, "route open", stage="path")] if yes else []
    return DetectionReport.assemble(sample_id, verdicts, hypotheses=())


def test_balanced_counts():
    m = metrics(ConfusionCounts(5, 5, 5, 5))
    assert m["acc"] == Fraction(1, 2) and m["fpr"] == Fraction(1, 2)


def test_no_false_positives():
    assert metrics(ConfusionCounts(tp=3, tn=10, fp=0, fn=0))["fpr"] == 0


def test_three_one_one():
    m = metrics(ConfusionCounts(tp=3, tn=0, fp=1, fn=1))
    assert m["precision"] == m["recall"] == m["f1"] == Fraction(3, 4)


def test_zero_denominators_are_none():
    m = metrics(ConfusionCounts())
    assert all(v is None for v in m.values())
    assert metrics(ConfusionCounts(tn=4))["precision"] is None
    assert metrics(ConfusionCounts(fp=1, fn=1))["f1"] == 0
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1)


def test_tally():
    c = ConfusionCounts.tally([(True, True), (True, False), (False, True), (False, False), (False, False)])
    assert (c.tp, c.fn, c.fp, c.tn) == (1, 1, 1, 2)


@settings(max_examples=1000)
@given(st.integers(0, 40), st.integers(0, 40), st.integers(0, 40), st.integers(0, 40))
def test_metrics_match_record_recount(tp, tn, fp, fn):
    assert metrics(ConfusionCounts(tp, tn, fp, fn)) == recount(tp, tn, fp, fn)


def _outcomes(correct, reversed_, both, neither):
    out = [(True, False)] * correct + [(False, True)] * reversed_ + [(True, True)] * both + [(False, False)] * neither
    return [PairOutcome(f"p{i}", v, f) for i, (v, f) in enumerate(out)]


def test_pair_metrics_headline():
    m = pair_metrics(_outcomes(266, 101, 300, 333))
    assert (m["pc"], m["pr"], m["vps"]) == (Fraction("26.6"), Fraction("10.1"), Fraction("16.5"))


def test_pair_metrics_all_correct():
    m = pair_metrics(_outcomes(7, 0, 0, 0))
    assert (m["pc"], m["pr"], m["vps"]) == (100, 0, 100)


def test_pair_metrics_mixed():
    m = pair_metrics(_outcomes(3, 2, 4, 1))
    assert (m["pc"], m["pr"], m["vps"], m["pr_bothflagged"]) == (30, 20, 10, 40)


def test_pair_ids_without_outcomes_count_in_total():
    m = pair_metrics(_outcomes(1, 0, 0, 0), ["p0", "q1", "q2", "q3"])
    assert m["pc"] == 25
    with pytest.raises(ValueError):
        pair_metrics(_outcomes(2, 0, 0, 0), ["p0"])
    assert pair_metrics([])["vps"] is None


@given(st.lists(st.tuples(st.booleans(), st.booleans()), max_size=60))
def test_pair_metrics_match_oracle(raw):
    outcomes = [PairOutcome(f"p{i}", v, f) for i, (v, f) in enumerate(raw)]
    m = pair_metrics(outcomes)
    if not raw:
        assert m["pc"] is None
        return
    t = pair_table(raw, len(raw))
    assert (m["pc"], m["pr"], m["pr_bothflagged"]) == (t["correct"], t["reversed"], t["both"])
    assert m["vps"] == m["pc"] - m["pr"]


def test_cwe_scores():
    assert cwe_score([("CWE-79", True)] * 8 + [("CWE-79", False)] * 2) == {"CWE-79": Fraction(3, 5)}
    assert cwe_score([("CWE-89", False)] * 3) == {"CWE-89": -1}


@given(st.lists(st.tuples(st.sampled_from(["CWE-20", "CWE-125", "CWE-787"]), st.booleans()), min_size=1, max_size=80))
def test_cwe_scores_recount(records):
    got = cwe_score(records)
    assert list(got) == sorted({c for c, _ in records}, key=lambda c: int(c[4:]))
    for cwe, score in got.items():
        mine = [ok for c, ok in records if c == cwe]
        assert score == Fraction(mine.count(True) - mine.count(False), len(mine))
        assert -1 <= score <= 1


def test_load_pairs(tmp_path):
    p = tmp_path / "pairs.ndjson"
    p.write_text(dump_pairs(pair("a") + pair("b")))
    assert [s.id for s in load_pairs(p)] == ["a-v", "a-b", "b-v", "b-b"]


def test_same_label_twins_rejected():
    rows = [s.to_dict() for s in pair("a")]
    rows[1]["label"] = "vulnerable"
    with pytest.raises(DatasetSchemaViolation) as err:
        parse_pairs("\n".join(json.dumps(r) for r in rows))
    assert [v.path for v in err.value.result.violations] == ["[1].label"]


def test_orphan_rejected():
    with pytest.raises(OrphanSample):
        parse_pairs(dump_pairs(pair("a")[:1]))


def test_bad_record_paths():
    rows = [s.to_dict() for s in pair("a")]
    rows[0]["label"] = "maybe"
    text = json.dumps(rows[0]) + "\n{oops\n" + json.dumps(rows[1])
    with pytest.raises(DatasetSchemaViolation) as err:
        parse_pairs(text)
    paths = [v.path for v in err.value.result.violations]
    assert paths[0] == "[0].label" and paths[-1] == "[1]"


def test_many_pairs_load():
    text = dump_pairs(s for i in range(435) for s in pair(f"p{i}"))
    samples = parse_pairs(text)
    assert len(samples) == 870 and len({s.pair_id for s in samples}) == 435


def test_render_half_up():
    assert render(Fraction(1, 8), 2) == "0.13"
    assert render(Fraction(-1, 8), 2) == "-0.13"
    assert render(Fraction(2, 3)) == "0.67"
    assert render(Fraction(33, 2), 2) == "16.50"
    assert render(None) is None and exact(None) is None
    assert exact(Fraction(6, 4)) == "3/2"


def test_audit_rows():
    rows = json.loads((FIXTURES / "table1.json").read_text())["rows"]
    audited = audit_vps(rows)
    assert len(audited) == 18
    bad = {r.name: float(r.gap) for r, ok in audited if not ok}
    assert bad == pytest.approx(
        {
            "GPT-3.5 GPTLens / PrimeVul": 4.57,
            "GPT-3.5 GPTLens / SVEN": 0.4,
            "GPT-3.5 VulTrial / PrimeVul": 5.82,
            "GPT-4o LLM-MultiRole / PrimeVul": 0.22,
            "GPT-4o GPTLens / PrimeVul": 0.26,
        }
    )
    assert audit_vps([{"name": "x", "pc": 10, "pr": 5, "vps": "5.15"}])[0][1]
    assert not audit_vps([{"name": "x", "pc": 10, "pr": 5, "vps": "5.16"}])[0][1]


def test_evaluate_end_to_end():
    samples = pair("a") + pair("b", "CWE-125") + pair("c")
    preds = {"a-v": True, "a-b": False, "b-v": False, "b-b": True, "c-v": True, "c-b": True}
    reports = {sid: flagged(sid, yes) for sid, yes in preds.items()}
    ev = evaluate(samples, reports)
    assert (ev.confusion.tp, ev.confusion.tn, ev.confusion.fp, ev.confusion.fn) == (2, 1, 2, 1)
    assert ev.pairs["pc"] == Fraction(100, 3) and ev.pairs["pr"] == Fraction(100, 3) and ev.pairs["vps"] == 0
    assert ev.per_cwe == {"CWE-125": -1, "CWE-787": Fraction(1, 2)}
    md = ev.to_markdown()
    assert "| acc | 50.00 |" in md and "| vps | 0.00 |" in md
    d = ev.to_dict()
    assert d["overall"]["acc"] == {"exact": "1/2", "value": "0.5000", "display": "50.00"}


def test_missing_reports():
    samples = pair("a")
    with pytest.raises(MissingReport):
        evaluate(samples, {"a-v": flagged("a-v", True)})
    ev = evaluate(samples, {"a-v": flagged("a-v", True)}, assume_benign=True)
    assert ev.assumed_benign == ("a-b",) and ev.pairs["pc"] == 100
