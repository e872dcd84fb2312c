"""Pair dataset loading and evaluation metrics.

All ratios are exact ``Fraction`` values; a metric whose denominator is zero
is ``None``. Pair metrics are percentages of the loaded pairs. Rendering to
two decimals happens only at the edges (``render``).
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .model import CodeSample, DetectionReport, Label, cwe_sort_key
from .schema import ValidationResult, Violation, validate_data

Ratio = Optional[Fraction]


class DatasetError(ValueError):
    pass


class DatasetSchemaViolation(DatasetError):
    def __init__(self, result: ValidationResult, source: str = ""):
        self.result = result
        detail = "; ".join(map(str, result.violations[:5]))
        super().__init__(f"{source or 'dataset'}: {detail}")


class OrphanSample(DatasetError):
    pass


class MissingReport(DatasetError):
    pass


def load_pairs(path: Path | str) -> list[CodeSample]:
    """Samples from a newline-delimited pair file, in file order.

    Every pair id must occur exactly twice, once labelled vulnerable and once
    benign; sample ids must be unique.
    """
    text = Path(path).read_text(encoding="utf-8")
    return parse_pairs(text, str(path))


def parse_pairs(text: str, source: str = "") -> list[CodeSample]:
    violations: list[Violation] = []
    records: list[dict[str, Any]] = []
    for i, line in enumerate(l for l in text.splitlines() if l.strip()):
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            violations.append(Violation(f"[{i}]", f"not JSON: {exc}"))
            continue
        res = validate_data(data, "pair_record")
        violations.extend(Violation(f"[{i}].{v.path}" if v.path != "$" else f"[{i}]", v.reason) for v in res.violations)
        records.append(data if res.ok else {})
    if violations:
        raise DatasetSchemaViolation(ValidationResult(tuple(violations)), source)

    seen: dict[str, int] = {}
    members: dict[str, list[int]] = defaultdict(list)
    for i, r in enumerate(records):
        if r["id"] in seen:
            violations.append(Violation(f"[{i}].id", f"duplicate sample id {r['id']!r}"))
        seen[r["id"]] = i
        members[r["pair_id"]].append(i)
    for pid, idx in members.items():
        if len(idx) > 2:
            violations.append(Violation(f"[{idx[2]}].pair_id", f"pair {pid!r} has {len(idx)} members"))
        elif len(idx) == 2:
            labels = sorted(records[i]["label"] for i in idx)
            if labels != ["benign", "vulnerable"]:
                violations.append(Violation(f"[{idx[1]}].label", f"pair {pid!r} labels {labels} are not complementary"))
    if violations:
        raise DatasetSchemaViolation(ValidationResult(tuple(violations)), source)
    orphans = sorted(pid for pid, idx in members.items() if len(idx) == 1)
    if orphans:
        raise OrphanSample(f"{source or 'dataset'}: pair ids without a twin: {orphans}")
    return [CodeSample.from_dict(r) for r in records]


def dump_pairs(samples: Iterable[CodeSample]) -> str:
    return "".join(json.dumps(s.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for s in samples)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "tn", "fp", "fn"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def tally(cls, pairs: Iterable[tuple[bool, bool]]) -> "ConfusionCounts":
        """From ``(is_vulnerable, predicted_vulnerable)`` pairs."""
        tp = tn = fp = fn = 0
        for truth, pred in pairs:
            if truth and pred:
                tp += 1
            elif truth:
                fn += 1
            elif pred:
                fp += 1
            else:
                tn += 1
        return cls(tp, tn, fp, fn)


def _ratio(num: int, den: int) -> Ratio:
    return Fraction(num, den) if den else None


def metrics(conf: ConfusionCounts) -> dict[str, Ratio]:
    precision = _ratio(conf.tp, conf.tp + conf.fp)
    recall = _ratio(conf.tp, conf.tp + conf.fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None if precision is None or recall is None else Fraction(0)
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return {
        "acc": _ratio(conf.tp + conf.tn, conf.total),
        "f1": f1,
        "fpr": _ratio(conf.fp, conf.fp + conf.tn),
        "precision": precision,
        "recall": recall,
    }


@dataclass(frozen=True)
class PairOutcome:
    pair_id: str
    vul_pred: bool
    fix_pred: bool

    @property
    def correct(self) -> bool:
        return self.vul_pred and not self.fix_pred

    @property
    def reversed(self) -> bool:
        return self.fix_pred and not self.vul_pred

    @property
    def both_flagged(self) -> bool:
        return self.vul_pred and self.fix_pred


def pair_metrics(outcomes: Iterable[PairOutcome], pair_ids: Optional[Iterable[str]] = None) -> dict[str, Ratio]:
    """Percentages over the loaded pairs.

    ``pr`` counts fully reversed pairs; ``pr_bothflagged`` counts pairs where
    both members were flagged. Pairs listed in ``pair_ids`` without an
    outcome count toward the total only.
    """
    by_id = {o.pair_id: o for o in outcomes}
    ids = set(by_id) if pair_ids is None else set(pair_ids)
    stray = set(by_id) - ids
    if stray:
        raise ValueError(f"outcomes for unknown pairs: {sorted(stray)}")
    total = len(ids)
    got = [by_id[i] for i in ids if i in by_id]

    def pct(n: int) -> Ratio:
        return Fraction(100 * n, total) if total else None

    pc = pct(sum(o.correct for o in got))
    pr = pct(sum(o.reversed for o in got))
    return {
        "pc": pc,
        "pr": pr,
        "pr_bothflagged": pct(sum(o.both_flagged for o in got)),
        "vps": None if pc is None or pr is None else pc - pr,
    }


def cwe_score(results: Iterable[tuple[str, bool]]) -> dict[str, Fraction]:
    """``(correct - wrong) / total`` per CWE from ``(cwe, is_correct)`` records."""
    right: dict[str, int] = defaultdict(int)
    total: dict[str, int] = defaultdict(int)
    for cwe, ok in results:
        total[cwe] += 1
        right[cwe] += bool(ok)
    return {c: Fraction(2 * right[c] - total[c], total[c]) for c in sorted(total, key=cwe_sort_key)}


def render(x: Ratio, places: int = 2) -> Optional[str]:
    """Fixed-point string, halves rounded away from zero; ``None`` stays ``None``."""
    if x is None:
        return None
    q = Decimal(1).scaleb(-places)
    return str((Decimal(x.numerator) / Decimal(x.denominator)).quantize(q, rounding=ROUND_HALF_UP))


def exact(x: Ratio) -> Optional[str]:
    return None if x is None else f"{x.numerator}/{x.denominator}"


@dataclass(frozen=True)
class AuditRow:
    name: str
    pc: Fraction
    pr: Fraction
    vps: Fraction

    @property
    def gap(self) -> Fraction:
        return abs(self.pc - self.pr - self.vps)

    def ok(self, slack: Fraction = Fraction(15, 100)) -> bool:
        return self.gap <= slack


def audit_vps(rows: Iterable[Mapping[str, Any]], slack: Union[str, Fraction] = "0.15") -> list[tuple[AuditRow, bool]]:
    """Recompute vps from each row's printed pc and pr (decimal strings or numbers)."""
    slack = Fraction(slack)
    out = []
    for r in rows:
        row = AuditRow(str(r["name"]), Fraction(str(r["pc"])), Fraction(str(r["pr"])), Fraction(str(r["vps"])))
        out.append((row, row.ok(slack)))
    return out


@dataclass(frozen=True)
class Evaluation:
    confusion: ConfusionCounts
    overall: dict[str, Ratio]
    pairs: dict[str, Ratio]
    per_cwe: dict[str, Fraction]
    cwe_counts: dict[str, int]
    assumed_benign: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        def pack(d: Mapping[str, Ratio]) -> dict[str, Any]:
            return {k: {"exact": exact(v), "value": render(v, 4), "display": render(None if v is None else v * 100)} for k, v in d.items()}

        return {
            "confusion": {"tp": self.confusion.tp, "tn": self.confusion.tn, "fp": self.confusion.fp, "fn": self.confusion.fn},
            "overall": pack(self.overall),
            "pairs": {k: {"exact": exact(v), "display": render(v)} for k, v in self.pairs.items()},
            "per_cwe": {
                c: {"exact": exact(s), "display": render(s), "samples": self.cwe_counts[c]} for c, s in self.per_cwe.items()
            },
            "assumed_benign": list(self.assumed_benign),
        }

    def to_markdown(self) -> str:
        def cell(v: Optional[str]) -> str:
            return "n/a" if v is None else v

        lines = ["# Evaluation", "", "## Overall metrics", "", "| metric | value (%) |", "|---|---|"]
        for k in ("acc", "f1", "fpr", "precision", "recall"):
            v = self.overall[k]
            lines.append(f"| {k} | {cell(render(None if v is None else v * 100))} |")
        c = self.confusion
        lines += ["", f"tp={c.tp} tn={c.tn} fp={c.fp} fn={c.fn}", ""]
        lines += ["## Pair metrics", "", "| metric | value (%) |", "|---|---|"]
        for k in ("pc", "pr", "pr_bothflagged", "vps"):
            lines.append(f"| {k} | {cell(render(self.pairs[k]))} |")
        lines += ["", "## Per-CWE scores", "", "| CWE | samples | score |", "|---|---|---|"]
        for cwe, s in self.per_cwe.items():
            lines.append(f"| {cwe} | {self.cwe_counts[cwe]} | {render(s)} |")
        if self.assumed_benign:
            lines += ["", "Assumed benign (no report): " + ", ".join(self.assumed_benign)]
        return "\n".join(lines) + "\n"


def evaluate(
    samples: Sequence[CodeSample],
    reports: Mapping[str, DetectionReport],
    assume_benign: bool = False,
) -> Evaluation:
    """Score predictions against the labelled pairs.

    A sample without a report is an error unless ``assume_benign``, in which
    case it is predicted benign.
    """
    missing = sorted(s.id for s in samples if s.id not in reports)
    if missing and not assume_benign:
        raise MissingReport(f"no report for samples: {missing}")
    pred = {s.id: (reports[s.id].vulnerable if s.id in reports else False) for s in samples}
    conf = ConfusionCounts.tally((s.label is Label.VULNERABLE, pred[s.id]) for s in samples)

    twins: dict[str, dict[Label, str]] = defaultdict(dict)
    for s in samples:
        if s.pair_id is not None:
            twins[s.pair_id][s.label] = s.id
    outcomes = [
        PairOutcome(pid, pred[m[Label.VULNERABLE]], pred[m[Label.BENIGN]])
        for pid, m in twins.items()
        if Label.VULNERABLE in m and Label.BENIGN in m
    ]
    records = [
        (cwe, pred[s.id] == (s.label is Label.VULNERABLE))
        for s in samples
        if s.label is not Label.UNKNOWN
        for cwe in (s.cwe_truth or ())
    ]
    counts: dict[str, int] = defaultdict(int)
    for cwe, _ in records:
        counts[cwe] += 1
    return Evaluation(
        confusion=conf,
        overall=metrics(conf),
        pairs=pair_metrics(outcomes, twins),
        per_cwe=cwe_score(records),
        cwe_counts=dict(counts),
        assumed_benign=tuple(missing),
    )
