"""Acyclic directed mixed graphs and the graphical primitives used by the planner.

Bidirected edges stand for a latent confounder shared by exactly two observed
nodes. Separation tests materialize one auxiliary latent node per bidirected
edge and run ordinary d-separation on the resulting DAG.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

from .errors import ValidationError

VariableSet = frozenset

_NAME = r"[A-Za-z0-9_.]+"
_NODE_RE = re.compile(rf"^node\s+({_NAME})$")
_LATENT_RE = re.compile(rf"^latent\s+({_NAME})$")
_DIRECTED_RE = re.compile(rf"^({_NAME})\s*->\s*({_NAME})$")
_BIDIRECTED_RE = re.compile(rf"^({_NAME})\s*<->\s*({_NAME})$")


@dataclass(frozen=True)
class Admg:
    """Immutable ADMG. Edge tuples are kept sorted by node position."""

    nodes: tuple[str, ...] = ()
    directed: tuple[tuple[str, str], ...] = ()
    bidirected: tuple[tuple[str, str], ...] = ()

    @classmethod
    def build(
        cls,
        nodes: Iterable[str],
        directed: Iterable[tuple[str, str]] = (),
        bidirected: Iterable[tuple[str, str]] = (),
    ) -> "Admg":
        nodes = tuple(nodes)
        if len(set(nodes)) != len(nodes):
            raise ValidationError("duplicate node names")
        pos = {v: i for i, v in enumerate(nodes)}
        dset = set()
        for a, b in directed:
            _check_endpoints(pos, a, b)
            dset.add((a, b))
        bset = set()
        for a, b in bidirected:
            _check_endpoints(pos, a, b)
            bset.add((a, b) if pos[a] < pos[b] else (b, a))
        g = cls(
            nodes,
            tuple(sorted(dset, key=lambda e: (pos[e[0]], pos[e[1]]))),
            tuple(sorted(bset, key=lambda e: (pos[e[0]], pos[e[1]]))),
        )
        g.topological_order  # raises on cycles
        return g

    @cached_property
    def index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.nodes)}

    @cached_property
    def parents(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {v: [] for v in self.nodes}
        for a, b in self.directed:
            out[b].append(a)
        return {v: tuple(sorted(ps, key=self.index.__getitem__)) for v, ps in out.items()}

    @cached_property
    def children(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {v: [] for v in self.nodes}
        for a, b in self.directed:
            out[a].append(b)
        return {v: tuple(sorted(cs, key=self.index.__getitem__)) for v, cs in out.items()}

    @cached_property
    def spouses(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {v: [] for v in self.nodes}
        for a, b in self.bidirected:
            out[a].append(b)
            out[b].append(a)
        return {v: tuple(sorted(ss, key=self.index.__getitem__)) for v, ss in out.items()}

    @cached_property
    def topological_order(self) -> tuple[str, ...]:
        indeg = {v: len(self.parents[v]) for v in self.nodes}
        ready = [v for v in self.nodes if indeg[v] == 0]
        order = []
        while ready:
            ready.sort(key=self.index.__getitem__)
            v = ready.pop(0)
            order.append(v)
            for c in self.children[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self.nodes):
            stuck = [v for v in self.nodes if indeg[v] > 0]
            raise ValidationError(f"directed cycle among {stuck}")
        return tuple(order)

    def sort(self, s: Iterable[str]) -> tuple[str, ...]:
        """Members of ``s`` in node-declaration order."""
        return tuple(sorted(s, key=self.index.__getitem__))

    def check(self, s: Iterable[str]) -> frozenset[str]:
        s = frozenset(s)
        unknown = s.difference(self.index)
        if unknown:
            raise ValidationError(f"unknown variable(s): {sorted(unknown)}")
        return s

    def __len__(self) -> int:
        return len(self.nodes)


def _check_endpoints(pos: dict[str, int], a: str, b: str) -> None:
    if a not in pos or b not in pos:
        raise ValidationError(f"edge {a}-{b} uses an undeclared node")
    if a == b:
        raise ValidationError(f"self-loop on {a}")


def _parse_lines(text: str):
    """Yield (line number, kind, names) for each statement."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for kind, rx in (
            ("node", _NODE_RE),
            ("latent", _LATENT_RE),
            ("bi", _BIDIRECTED_RE),
            ("di", _DIRECTED_RE),
        ):
            m = rx.match(line)
            if m:
                yield lineno, kind, m.groups()
                break
        else:
            raise ValidationError(f"line {lineno}: cannot parse {raw.strip()!r}")


def _read_graph(text: str):
    nodes: list[str] = []
    declared: set[str] = set()
    latents: list[str] = []
    directed: list[tuple[str, str]] = []
    bidirected: list[tuple[str, str]] = []

    def use(name: str) -> None:
        if name not in declared:
            declared.add(name)
            nodes.append(name)

    for lineno, kind, names in _parse_lines(text):
        if kind in ("node", "latent"):
            (name,) = names
            if name in declared:
                raise ValidationError(f"line {lineno}: duplicate declaration of {name}")
            use(name)
            if kind == "latent":
                latents.append(name)
            continue
        a, b = names
        if a == b:
            raise ValidationError(f"line {lineno}: self-loop on {a}")
        use(a)
        use(b)
        (directed if kind == "di" else bidirected).append((a, b))
    return nodes, latents, directed, bidirected


def parse_admg(text: str) -> Admg:
    """Parse the line-oriented graph format.

    Statements: ``node A``, ``A -> B``, ``A <-> B``. Names used before being
    declared are declared implicitly, in order of first use.
    """
    nodes, latents, directed, bidirected = _read_graph(text)
    if latents:
        raise ValidationError(
            f"latent node(s) {latents} present; convert with split_non_markovian first"
        )
    return Admg.build(nodes, directed, bidirected)


def has_latents(text: str) -> bool:
    return bool(_read_graph(text)[1])


def split_non_markovian(text: str) -> tuple[Admg, list[str]]:
    """Replace each root latent by bidirected edges between all its children.

    Returns the semi-Markovian graph and a list of warnings (latents with fewer
    than two children are dropped).
    """
    nodes, latents, directed, bidirected = _read_graph(text)
    latent_set = set(latents)
    warnings = []
    children: dict[str, list[str]] = {u: [] for u in latents}
    kept = []
    for a, b in directed:
        if b in latent_set:
            raise ValidationError(f"latent {b} has a directed parent {a}")
        if a in latent_set:
            children[a].append(b)
        else:
            kept.append((a, b))
    for a, b in bidirected:
        if a in latent_set or b in latent_set:
            raise ValidationError(f"latent in bidirected edge {a} <-> {b}")
    extra = []
    for u in latents:
        kids = children[u]
        if len(kids) < 2:
            warnings.append(f"latent {u} has {len(kids)} observed child(ren); dropped")
            continue
        for i in range(len(kids)):
            for j in range(i + 1, len(kids)):
                extra.append((kids[i], kids[j]))
    observed = [v for v in nodes if v not in latent_set]
    return Admg.build(observed, kept, bidirected + extra), warnings


def format_admg(g: Admg) -> str:
    lines = [f"node {v}" for v in g.nodes]
    lines += [f"{a} -> {b}" for a, b in g.directed]
    lines += [f"{a} <-> {b}" for a, b in g.bidirected]
    return "\n".join(lines) + ("\n" if lines else "")


def c_components(g: Admg) -> list[frozenset[str]]:
    seen: set[str] = set()
    comps = []
    for v in g.nodes:
        if v in seen:
            continue
        comp = {v}
        queue = deque([v])
        while queue:
            x = queue.popleft()
            for s in g.spouses[x]:
                if s not in comp:
                    comp.add(s)
                    queue.append(s)
        seen |= comp
        comps.append(frozenset(comp))
    return comps


def _closure(start: Iterable[str], step: dict[str, tuple[str, ...]]) -> set[str]:
    found = set(start)
    queue = deque(found)
    while queue:
        x = queue.popleft()
        for y in step[x]:
            if y not in found:
                found.add(y)
                queue.append(y)
    return found


def ancestors(g: Admg, s: Iterable[str], intervention: Iterable[str] = ()) -> frozenset[str]:
    """Strict ancestors of ``s`` in the graph after do(intervention)."""
    s = g.check(s)
    h = graph_do(g, intervention)
    return frozenset(_closure(s, h.parents) - s)


def descendants(g: Admg, s: Iterable[str]) -> frozenset[str]:
    """Strict descendants of ``s``."""
    s = g.check(s)
    return frozenset(_closure(s, g.children) - s)


def parents_of_set(g: Admg, s: Iterable[str]) -> frozenset[str]:
    s = g.check(s)
    out = set()
    for v in s:
        out.update(g.parents[v])
    return frozenset(out - s)


def graph_do(g: Admg, i: Iterable[str]) -> Admg:
    """Remove every directed edge into ``i`` and every bidirected edge touching it."""
    i = g.check(i)
    if not i:
        return g
    return Admg.build(
        g.nodes,
        [(a, b) for a, b in g.directed if b not in i],
        [(a, b) for a, b in g.bidirected if a not in i and b not in i],
    )


def delete_outgoing(g: Admg, s: Iterable[str]) -> Admg:
    s = g.check(s)
    return Admg.build(g.nodes, [(a, b) for a, b in g.directed if a not in s], g.bidirected)


def induced_subgraph(g: Admg, s: Iterable[str]) -> Admg:
    s = g.check(s)
    return Admg.build(
        g.sort(s),
        [(a, b) for a, b in g.directed if a in s and b in s],
        [(a, b) for a, b in g.bidirected if a in s and b in s],
    )


def _latent_dag(g: Admg):
    """Parents/children maps of the DAG with one explicit latent per bidirected edge."""
    parents = {v: list(g.parents[v]) for v in g.nodes}
    children = {v: list(g.children[v]) for v in g.nodes}
    for k, (a, b) in enumerate(g.bidirected):
        u = ("latent", k)
        parents[u] = []
        children[u] = [a, b]
        parents[a].append(u)
        parents[b].append(u)
    return parents, children


def m_separated(
    g: Admg, a: Iterable[str], b: Iterable[str], c: Iterable[str] = ()
) -> bool:
    """True iff every path between ``a`` and ``b`` is blocked given ``c``."""
    a, b, c = g.check(a), g.check(b), g.check(c)
    if a & b:
        raise ValidationError(f"separation sets overlap on {sorted(a & b)}")
    a, b = a - c, b - c
    if not a or not b:
        return True
    parents, children = _latent_dag(g)
    # nodes with a descendant in c: colliders there are open
    opened = set(c)
    queue = deque(c)
    while queue:
        x = queue.popleft()
        for p in parents[x]:
            if p not in opened:
                opened.add(p)
                queue.append(p)
    # reachability over (node, arrived-from-child?) states
    seen = set()
    queue = deque((x, True) for x in a)
    while queue:
        node, up = queue.popleft()
        if (node, up) in seen:
            continue
        seen.add((node, up))
        if node in b:
            return False
        if up:
            if node in c:
                continue
            queue.extend((p, True) for p in parents[node])
            queue.extend((ch, False) for ch in children[node])
        else:
            if node not in c:
                queue.extend((ch, False) for ch in children[node])
            if node in opened:
                queue.extend((p, True) for p in parents[node])
    return True


def rule2_holds(g: Admg, y: Iterable[str], intervention: Iterable[str] = ()) -> bool:
    """Graphical test that conditioning on Pa(y) equals intervening on it under do(I).

    In G_do(I), delete the outgoing edges of p = Pa(y) and check that y and p
    are m-separated by the empty set.
    """
    y, intervention = g.check(y), g.check(intervention)
    if y & intervention:
        raise ValidationError(f"target and intervention overlap on {sorted(y & intervention)}")
    h = graph_do(g, intervention)
    p = parents_of_set(h, y)
    if not p:
        return True
    return m_separated(delete_outgoing(h, p), y, p)
