"""H-graphs over c-components, training order, ancestor sets and training plans."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import networkx as nx

from .errors import UntrainableError, ValidationError
from .graph import (
    Admg,
    ancestors,
    c_components,
    delete_outgoing,
    descendants,
    format_admg,
    graph_do,
    m_separated,
    parents_of_set,
    parse_admg,
    rule2_holds,
)

MINIMAL_SEARCH_CAP = 20


@dataclass(frozen=True)
class HGraph:
    hnodes: tuple[frozenset[str], ...]
    edges: tuple[tuple[int, int], ...]
    source: Admg
    intervention: frozenset[str] = frozenset()
    # c-components of the (post-intervention) graph and the edges between them,
    # before cycle merging or alignment; kept for diagnostics
    components: tuple[frozenset[str], ...] = ()
    component_edges: tuple[tuple[int, int], ...] = ()

    def hnode_of(self, v: str) -> int:
        for k, h in enumerate(self.hnodes):
            if v in h:
                return k
        raise KeyError(v)

    def is_acyclic(self) -> bool:
        dg = nx.DiGraph()
        dg.add_nodes_from(range(len(self.hnodes)))
        dg.add_edges_from(self.edges)
        return nx.is_directed_acyclic_graph(dg)

    def max_hnode_size(self) -> int:
        return max((len(h) for h in self.hnodes), default=0)


def _component_edges(g: Admg, comps: Sequence[frozenset[str]]) -> list[tuple[int, int]]:
    """Edge s->t when the parents of comps[t] inside comps[s] are not a valid proxy.

    The test deletes the outgoing edges of that parent subset and checks
    whether it is still m-connected to comps[t].
    """
    edges = []
    for t, target in enumerate(comps):
        pa = parents_of_set(g, target)
        for s, source in enumerate(comps):
            if s == t:
                continue
            sub = pa & source
            if sub and not m_separated(delete_outgoing(g, sub), sub, target):
                edges.append((s, t))
    return edges


def _order_key(g: Admg, members: Iterable[str]) -> int:
    return min(g.index[v] for v in members)


def _condense(g: Admg, comps, edges):
    """Merge directed cycles into single hnodes and sort hnodes topologically."""
    dg = nx.DiGraph()
    dg.add_nodes_from(range(len(comps)))
    dg.add_edges_from(edges)
    cond = nx.condensation(dg)
    merged = {
        c: frozenset().union(*(comps[k] for k in cond.nodes[c]["members"])) for c in cond.nodes
    }
    order = list(
        nx.lexicographical_topological_sort(cond, key=lambda c: _order_key(g, merged[c]))
    )
    new_index = {c: i for i, c in enumerate(order)}
    hnodes = tuple(merged[c] for c in order)
    new_edges = sorted({(new_index[a], new_index[b]) for a, b in cond.edges})
    return hnodes, tuple(new_edges)


def construct_hgraph(g: Admg) -> HGraph:
    comps = c_components(g)
    edges = _component_edges(g, comps)
    hnodes, hedges = _condense(g, comps, edges)
    return HGraph(hnodes, hedges, g, frozenset(), tuple(comps), tuple(edges))


def construct_hgraph_interventional(g: Admg, i: Iterable[str], base: HGraph) -> HGraph:
    """H-graph of G_do(i) whose hnodes are those of ``base``.

    Post-intervention c-components that fall inside one base hnode are bound
    back together first; the edge test then runs between the bound hnodes in
    G_do(i). ``components``/``component_edges`` keep the unbound pieces and
    their own edges for inspection.
    """
    i = g.check(i)
    h = graph_do(g, i)
    comps = c_components(h)
    for comp in comps:
        if not comp <= base.hnodes[base.hnode_of(next(iter(comp)))]:
            raise ValidationError(f"post-intervention component {sorted(comp)} straddles hnodes")
    aligned = _component_edges(h, base.hnodes)
    return HGraph(base.hnodes, tuple(aligned), g, i, tuple(comps), tuple(_component_edges(h, comps)))


def partial_order(h: HGraph) -> list[list[frozenset[str]]]:
    """Kahn layering: level k holds hnodes whose longest incoming chain has length k."""
    n = len(h.hnodes)
    indeg = [0] * n
    succ: list[list[int]] = [[] for _ in range(n)]
    for a, b in h.edges:
        indeg[b] += 1
        succ[a].append(b)
    level = [k for k in range(n) if indeg[k] == 0]
    levels = []
    placed = 0
    while level:
        level.sort(key=lambda k: _order_key(h.source, h.hnodes[k]))
        levels.append([h.hnodes[k] for k in level])
        placed += len(level)
        nxt = []
        for k in level:
            for b in succ[k]:
                indeg[b] -= 1
                if indeg[b] == 0:
                    nxt.append(b)
        level = nxt
    if placed != n:
        raise ValidationError("H-graph has a directed cycle")
    return levels


def ancestor_set_greedy(
    g: Admg, hnode: Iterable[str], intervention: Iterable[str] = ()
) -> frozenset[str]:
    """Grow A by the parents of hnode ∪ A until the rule-2 test passes."""
    hnode, intervention = g.check(hnode), g.check(intervention)
    h = graph_do(g, intervention)
    a: frozenset[str] = frozenset()
    while not rule2_holds(g, hnode | a, intervention):
        a = a | (parents_of_set(h, hnode | a) - intervention)
    return a


def ancestor_set_minimal(
    g: Admg,
    hnode: Iterable[str],
    intervention: Iterable[str] = (),
    cap: int = MINIMAL_SEARCH_CAP,
) -> frozenset[str]:
    """Smallest ancestor subset S with the rule-2 test passing on hnode ∪ S.

    Subsets are tried by size, then in lexicographic order of sorted names.
    """
    hnode, intervention = g.check(hnode), g.check(intervention)
    if hnode & intervention:
        raise ValidationError("hnode and intervention overlap")
    candidates = sorted(ancestors(g, hnode, intervention) - intervention)
    if len(candidates) > cap:
        raise UntrainableError(
            f"{len(candidates)} ancestors exceed the subset-search cap of {cap}"
        )
    for size in range(len(candidates) + 1):
        for subset in itertools.combinations(candidates, size):
            s = frozenset(subset)
            if rule2_holds(g, hnode | s, intervention):
                return s
    raise AssertionError("unreachable: the full ancestor set always passes")


@dataclass(frozen=True)
class Directive:
    intervention: frozenset[str]
    ancestor_set: frozenset[str]
    conditioning_parents: frozenset[str]
    usable: bool
    reason: str = ""
    search: str = "minimal"

    def target(self, hnode: frozenset[str]) -> frozenset[str]:
        """Variables whose joint is matched: hnode ∪ A minus intervened ones."""
        return (hnode | self.ancestor_set) - self.intervention

    def given(self) -> frozenset[str]:
        """Variables intervened on in the model side of the objective."""
        return self.conditioning_parents | self.intervention


@dataclass(frozen=True)
class PlanStage:
    hnode: frozenset[str]
    level: int
    directives: tuple[Directive, ...]

    def usable(self) -> list[Directive]:
        return [d for d in self.directives if d.usable]


@dataclass(frozen=True)
class TrainingPlan:
    graph: Admg
    labels: tuple[frozenset[str], ...]
    stages: tuple[PlanStage, ...]
    hgraph: HGraph | None = field(default=None, compare=False)

    def levels(self) -> list[list[PlanStage]]:
        out: dict[int, list[PlanStage]] = {}
        for st in self.stages:
            out.setdefault(st.level, []).append(st)
        return [out[k] for k in sorted(out)]

    def to_dict(self) -> dict:
        g = self.graph
        return {
            "format": "modular-causal-plan/1",
            "graph": format_admg(g),
            "labels": [list(g.sort(lab)) for lab in self.labels],
            "stages": [
                {
                    "hnode": list(g.sort(st.hnode)),
                    "level": st.level,
                    "directives": [
                        {
                            "intervention": list(g.sort(d.intervention)),
                            "ancestor_set": list(g.sort(d.ancestor_set)),
                            "conditioning_parents": list(g.sort(d.conditioning_parents)),
                            "usable": d.usable,
                            "reason": d.reason,
                            "search": d.search,
                        }
                        for d in st.directives
                    ],
                }
                for st in self.stages
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TrainingPlan":
        try:
            doc = json.loads(text)
            g = parse_admg(doc["graph"])
            labels = tuple(g.check(lab) for lab in doc["labels"])
            stages = tuple(
                PlanStage(
                    g.check(st["hnode"]),
                    int(st["level"]),
                    tuple(
                        Directive(
                            g.check(d["intervention"]),
                            g.check(d["ancestor_set"]),
                            g.check(d["conditioning_parents"]),
                            bool(d["usable"]),
                            d.get("reason", ""),
                            d.get("search", "minimal"),
                        )
                        for d in st["directives"]
                    ),
                )
                for st in doc["stages"]
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ValidationError(f"malformed plan document: {exc}") from exc
        return cls(g, labels, stages)


def _directive(
    g: Admg,
    hnode: frozenset[str],
    label: frozenset[str],
    trained: set[str],
    observed: frozenset[str] | None,
    cap: int,
) -> Directive:
    inner = hnode - label
    search = "minimal"
    try:
        a = ancestor_set_minimal(g, inner, label, cap)
    except UntrainableError:
        a = ancestor_set_greedy(g, inner, label)
        search = "greedy"
    pa = parents_of_set(graph_do(g, label), hnode | a)
    usable, reason = True, ""
    # a descendant that is also an ancestor (X1 -> Z1 -> X2) still shapes the hnode
    upstream = hnode | ancestors(g, hnode)
    if label and label <= descendants(g, hnode) and not label & upstream:
        usable, reason = False, "intervention on descendants of the hnode"
    elif not a <= trained:
        usable, reason = False, f"ancestor set not yet trained: {list(g.sort(a - trained))}"
    elif observed is not None and not (hnode | a | pa | label) <= observed:
        missing = (hnode | a | pa | label) - observed
        usable, reason = False, f"dataset lacks columns {list(g.sort(missing))}"
    return Directive(label, a, pa, usable, reason, search)


def make_training_plan(
    g: Admg,
    intervention_labels: Sequence[Iterable[str]] = ((),),
    observed: Mapping[frozenset[str], Iterable[str]] | None = None,
    cap: int = MINIMAL_SEARCH_CAP,
) -> TrainingPlan:
    """Order hnodes by the H-graph and attach one directive per dataset label.

    ``observed`` optionally maps a label to the columns its dataset contains;
    directives needing absent columns are marked unusable.

    For an hnode that the intervention does not touch, every usable label
    yields the same c-factor, so only labels with the smallest ancestor set
    are kept.
    """
    labels = []
    for lab in intervention_labels:
        lab = g.check(lab)
        if lab not in labels:
            labels.append(lab)
    obs = None
    if observed is not None:
        obs = {g.check(k): g.check(v) for k, v in observed.items()}
    base = construct_hgraph(g)
    trained: set[str] = set()
    stages = []
    for level_idx, level in enumerate(partial_order(base)):
        for hnode in level:
            ds = [
                _directive(g, hnode, lab, trained, None if obs is None else obs.get(lab), cap)
                for lab in labels
            ]
            outside = [d for d in ds if d.usable and not d.intervention & hnode]
            if outside:
                best = min(len(d.ancestor_set) for d in outside)
                ds = [
                    Directive(
                        d.intervention,
                        d.ancestor_set,
                        d.conditioning_parents,
                        False,
                        "superseded by a label with a smaller ancestor set",
                        d.search,
                    )
                    if d in outside and len(d.ancestor_set) > best
                    else d
                    for d in ds
                ]
            if not any(d.usable for d in ds):
                reasons = "; ".join(
                    f"{list(g.sort(d.intervention))}: {d.reason}" for d in ds
                )
                raise UntrainableError(
                    f"no usable dataset for hnode {list(g.sort(hnode))} ({reasons})"
                )
            stages.append(PlanStage(hnode, level_idx, tuple(ds)))
        trained.update(*level)
    return TrainingPlan(g, tuple(labels), tuple(stages), base)


def hgraph_to_text(h: HGraph) -> str:
    g = h.source
    lines = []
    if h.intervention:
        lines.append(f"# intervention: {' '.join(g.sort(h.intervention))}")
    for k, hn in enumerate(h.hnodes):
        lines.append(f"# hnode: H{k} = {' '.join(g.sort(hn))}")
    lines += [f"node H{k}" for k in range(len(h.hnodes))]
    lines += [f"H{a} -> H{b}" for a, b in h.edges]
    return "\n".join(lines) + "\n"
