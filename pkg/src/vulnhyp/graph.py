"""Directed program graph over ``func:line`` nodes, with cut and path queries."""

from __future__ import annotations

from collections import deque
from typing import Iterable, Iterator, Mapping, Optional

from .model import ContextBundle, DepKind, node_id, split_node_id


class SinkNotFound(KeyError):
    pass


def node_key(nid: str) -> tuple[str, int]:
    """Sort key: function name, then numeric line (so ``f:9`` < ``f:10``)."""
    try:
        return split_node_id(nid)
    except ValueError:
        return (nid, -1)


class ProgramGraph:
    def __init__(self) -> None:
        self.succ: dict[str, set[str]] = {}
        self.pred: dict[str, set[str]] = {}
        self.dep: dict[tuple[str, str], DepKind] = {}

    def add_node(self, n: str) -> None:
        self.succ.setdefault(n, set())
        self.pred.setdefault(n, set())

    def add_edge(self, a: str, b: str, dep: DepKind = DepKind.DATA) -> None:
        self.add_node(a)
        self.add_node(b)
        self.succ[a].add(b)
        self.pred[b].add(a)
        # a data dependence wins over a control dependence on the same pair
        if self.dep.get((a, b)) is not DepKind.DATA:
            self.dep[(a, b)] = DepKind(dep)

    def __contains__(self, n: object) -> bool:
        return n in self.succ

    @property
    def nodes(self) -> list[str]:
        return sorted(self.succ, key=node_key)

    def successors(self, n: str) -> list[str]:
        return sorted(self.succ.get(n, ()), key=node_key)

    def roots(self) -> list[str]:
        return [n for n in self.nodes if not self.pred[n]]

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str]], nodes: Iterable[str] = ()) -> "ProgramGraph":
        g = cls()
        for n in nodes:
            g.add_node(n)
        for a, b in edges:
            g.add_edge(a, b)
        return g

    @classmethod
    def from_mapping(cls, adj: Mapping[str, Iterable[str]]) -> "ProgramGraph":
        g = cls()
        for a, succs in adj.items():
            g.add_node(a)
            for b in succs:
                g.add_edge(a, b)
        return g

    @classmethod
    def from_context(cls, ctx: ContextBundle) -> "ProgramGraph":
        """Data and control edges, plus call-site -> callee-entry (line 1) edges."""
        g = cls()
        for name, lines in ctx.functions.items():
            for n, _ in lines:
                g.add_node(node_id(name, n))
        for (fa, la), (fb, lb) in ctx.data_edges:
            g.add_edge(node_id(fa, la), node_id(fb, lb), DepKind.DATA)
        for (fa, la), (fb, lb) in ctx.control_edges:
            g.add_edge(node_id(fa, la), node_id(fb, lb), DepKind.CONTROL)
        for caller, callee, line in ctx.call_edges:
            if callee in ctx.functions:
                g.add_edge(node_id(caller, line), node_id(callee, 1), DepKind.DATA)
        return g

    def reaching(self, targets: Iterable[str], blocked: frozenset[str] = frozenset()) -> set[str]:
        """Nodes from which some target is reachable without entering ``blocked``."""
        seen = {t for t in targets if t in self}
        todo = deque(seen)
        while todo:
            n = todo.popleft()
            for p in self.pred.get(n, ()):
                if p not in seen and p not in blocked:
                    seen.add(p)
                    todo.append(p)
        return seen


def _as_graph(graph: ProgramGraph | Mapping[str, Iterable[str]]) -> ProgramGraph:
    return graph if isinstance(graph, ProgramGraph) else ProgramGraph.from_mapping(graph)


def bypass_route(
    graph: ProgramGraph | Mapping[str, Iterable[str]],
    guards: Iterable[str],
    sources: Iterable[str],
    sink: str,
) -> Optional[list[str]]:
    """A source->sink route that meets no guard before the sink, or ``None``.

    BFS over the graph with guard nodes (other than the sink itself) removed;
    sources that are guards are removed too, since a route starting at a guard
    already contains it.
    """
    g = _as_graph(graph)
    if sink not in g:
        raise SinkNotFound(sink)
    blocked = frozenset(x for x in guards if x != sink)
    starts = sorted({s for s in sources if s in g and s not in blocked}, key=node_key)
    parent: dict[str, Optional[str]] = {s: None for s in starts}
    todo = deque(starts)
    while todo:
        n = todo.popleft()
        if n == sink:
            route = [n]
            while parent[route[-1]] is not None:
                route.append(parent[route[-1]])  # type: ignore[arg-type]
            return route[::-1]
        for m in g.successors(n):
            if m not in parent and m not in blocked:
                parent[m] = n
                todo.append(m)
    return None


def dominates(
    graph: ProgramGraph | Mapping[str, Iterable[str]],
    guards: Iterable[str],
    sources: Iterable[str],
    sink: str,
) -> bool:
    """True iff every simple source->sink path has a guard strictly before the sink.

    Equivalently the guards form a source/sink vertex cut. Vacuously true when
    no source reaches the sink.
    """
    return bypass_route(graph, guards, sources, sink) is None


def shortest_path(graph: ProgramGraph, sources: Iterable[str], sink: str) -> Optional[list[str]]:
    """Fewest-edge source->sink path; ties go to the smallest node-key sequence."""
    if sink not in graph:
        raise SinkNotFound(sink)
    dist = {sink: 0}
    todo = deque([sink])
    while todo:
        n = todo.popleft()
        for p in graph.pred[n]:
            if p not in dist:
                dist[p] = dist[n] + 1
                todo.append(p)
    reachable = [s for s in set(sources) if s in dist]
    if not reachable:
        return None
    start = min(reachable, key=lambda s: (dist[s], node_key(s)))
    path = [start]
    while path[-1] != sink:
        d = dist[path[-1]]
        path.append(min((m for m in graph.succ[path[-1]] if dist.get(m) == d - 1), key=node_key))
    return path


def iter_simple_paths(graph: ProgramGraph, sources: Iterable[str], sink: str) -> Iterator[list[str]]:
    """Depth-first, in node-key order, only through nodes that can still reach the sink."""
    if sink not in graph:
        raise SinkNotFound(sink)
    useful = graph.reaching([sink])
    for src in sorted(set(sources) & useful, key=node_key):
        stack: list[tuple[str, Iterator[str]]] = [(src, iter(graph.successors(src)))]
        on_path = {src}
        if src == sink:
            yield [src]
            continue
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                on_path.discard(node)
                continue
            if nxt in on_path or nxt not in useful:
                continue
            if nxt == sink:
                yield [n for n, _ in stack] + [sink]
                continue
            stack.append((nxt, iter(graph.successors(nxt))))
            on_path.add(nxt)
