"""Mechanical merge of per-agent reports into deduplicated findings.

Reports with the same CWE whose spans overlap (transitively) form one group.
Each group yields one finding spanning the hull of its members, with evidence
unioned and the contributing agents listed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .model import AgentReport, AggregatedFinding, Evidence, cwe_sort_key


class MixedSampleInput(ValueError):
    pass


Span = tuple[int, int]


def spans_overlap(a: Span, b: Span) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


@dataclass(frozen=True)
class _Member:
    cwe: str
    span: Span
    description: str
    evidence: tuple[Evidence, ...]
    agents: tuple[str, ...]

    @classmethod
    def of(cls, item: Union[AgentReport, AggregatedFinding]) -> "_Member":
        if isinstance(item, AgentReport):
            agents: tuple[str, ...] = (item.source_agent,)
        else:
            agents = item.source_agents
        return cls(item.cwe, item.span, item.description, item.evidence, tuple(sorted(agents)))

    def rank(self) -> tuple:
        # most evidence, then longest description, then smallest agent id;
        # the trailing keys only make the choice total
        return (-len(self.evidence), -len(self.description), self.agents[0], self.description, self.span)


def _find(parent: list[int], i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def group(members: Sequence[_Member]) -> list[list[int]]:
    """Connected components of the same-CWE-and-overlapping relation."""
    parent = list(range(len(members)))
    by_cwe: dict[str, list[int]] = {}
    for i, m in enumerate(members):
        by_cwe.setdefault(m.cwe, []).append(i)
    for idx in by_cwe.values():
        # sweep by start line; a member joins the running component while it overlaps its hull
        idx = sorted(idx, key=lambda i: members[i].span)
        reach = -1
        prev = None
        for i in idx:
            start, end = members[i].span
            if prev is not None and start <= reach:
                parent[_find(parent, i)] = _find(parent, prev)
            reach = max(reach, end) if prev is not None and start <= reach else end
            prev = i
    comps: dict[int, list[int]] = {}
    for i in range(len(members)):
        comps.setdefault(_find(parent, i), []).append(i)
    return list(comps.values())


def aggregate(reports: Iterable[Union[AgentReport, AggregatedFinding]]) -> list[AggregatedFinding]:
    """Merge reports (or previously aggregated findings) into canonical findings.

    Output is sorted by (CWE number, span, description) and ids are assigned
    ``F1``, ``F2``, ... in that order, so the result does not depend on input
    order.
    """
    items = list(reports)
    samples = {r.sample_id for r in items if isinstance(r, AgentReport) and r.sample_id}
    if len(samples) > 1:
        raise MixedSampleInput(f"reports span several samples: {sorted(samples)}")
    members = [_Member.of(r) for r in items]
    merged = []
    for comp in group(members):
        ms = [members[i] for i in comp]
        rep = min(ms, key=_Member.rank)
        evidence = sorted({e for m in ms for e in m.evidence}, key=Evidence.key)
        merged.append(
            (
                rep.cwe,
                (min(m.span[0] for m in ms), max(m.span[1] for m in ms)),
                rep.description,
                tuple(evidence),
                tuple(sorted({a for m in ms for a in m.agents})),
            )
        )
    merged.sort(key=lambda t: (cwe_sort_key(t[0]), t[1], t[2]))
    return [
        AggregatedFinding(id=f"F{k}", cwe=cwe, span=span, description=desc, evidence=ev, source_agents=agents)
        for k, (cwe, span, desc, ev, agents) in enumerate(merged, start=1)
    ]
