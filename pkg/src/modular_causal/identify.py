"""Identification of P(y | do(x)) from the observational joint.

``id_algorithm`` is the complete seven-line recursion over ADMGs. Its output
is an expression tree whose leaves are marginals of P(V); conditionals appear
as explicit quotients of such marginals. ``evaluate_estimand`` turns a tree
into numbers given a joint table. ``tian_c_factors`` computes the c-factor of
every c-component directly from a joint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .distribution import Distribution, align
from .errors import NotIdentifiableError, NumericError, ValidationError
from .graph import Admg, ancestors, c_components, graph_do, induced_subgraph, parents_of_set


# ---------------------------------------------------------------- estimand tree


@dataclass(frozen=True)
class JointTerm:
    """Marginal of the observational joint over ``vars``."""

    vars: frozenset[str]


@dataclass(frozen=True)
class MarginalSum:
    vars: frozenset[str]
    child: "Estimand"


@dataclass(frozen=True)
class Product:
    children: tuple["Estimand", ...]


@dataclass(frozen=True)
class Quotient:
    num: "Estimand"
    den: "Estimand"


@dataclass(frozen=True)
class Unidentifiable:
    """Failure with a hedge witness: two c-forests ``forest`` and ``subforest``."""

    forest: frozenset[str]
    subforest: frozenset[str]


Estimand = Union[JointTerm, MarginalSum, Product, Quotient, Unidentifiable]


def free_variables(e: Estimand) -> frozenset[str]:
    if isinstance(e, JointTerm):
        return e.vars
    if isinstance(e, MarginalSum):
        return free_variables(e.child) - e.vars
    if isinstance(e, Product):
        out: frozenset[str] = frozenset()
        for c in e.children:
            out |= free_variables(c)
        return out
    if isinstance(e, Quotient):
        return free_variables(e.num) | free_variables(e.den)
    return frozenset()


def _names(vs: Iterable[str], order: dict[str, int] | None = None) -> str:
    key = (lambda v: (order.get(v, len(order)), v)) if order else None
    return " ".join(sorted(vs, key=key))


def to_sexpr(e: Estimand, order: dict[str, int] | None = None) -> str:
    """Render as an s-expression: (P ..), (sum (..) ..), (prod ..), (div .. ..)."""
    if isinstance(e, JointTerm):
        return f"(P {_names(e.vars, order)})".replace("(P )", "(P)")
    if isinstance(e, MarginalSum):
        return f"(sum ({_names(e.vars, order)}) {to_sexpr(e.child, order)})"
    if isinstance(e, Product):
        return "(prod " + " ".join(to_sexpr(c, order) for c in e.children) + ")"
    if isinstance(e, Quotient):
        return f"(div {to_sexpr(e.num, order)} {to_sexpr(e.den, order)})"
    return (
        f"(unidentifiable ({_names(e.forest, order)}) ({_names(e.subforest, order)}))"
    )


# ---------------------------------------------------------------- construction helpers


def _marginal(p: Estimand, drop: Iterable[str]) -> Estimand:
    drop = frozenset(drop) & free_variables(p)
    if not drop:
        return p
    if isinstance(p, JointTerm):
        return JointTerm(p.vars - drop)
    if isinstance(p, MarginalSum):
        return MarginalSum(p.vars | drop, p.child)
    return MarginalSum(drop, p)


def _product(factors: list[Estimand]) -> Estimand:
    return factors[0] if len(factors) == 1 else Product(tuple(factors))


def _conditional(p: Estimand, scope: frozenset[str], v: str, before: frozenset[str]) -> Estimand:
    """p(v | before) where ``scope`` are the variables p ranges over."""
    num = _marginal(p, scope - before - {v})
    if not before & scope:
        return num
    return Quotient(num, _marginal(p, scope - before))


def _ancestral(g: Admg, y: frozenset[str]) -> frozenset[str]:
    return y | ancestors(g, y)


def _id(y, x, p, g: Admg, order) -> Estimand:
    v = frozenset(g.nodes)
    # line 1
    if not x:
        return _marginal(p, v - y)
    # line 2
    an = _ancestral(g, y)
    if an != v:
        return _id(y, x & an, _marginal(p, v - an), induced_subgraph(g, an), order)
    # line 3
    w = (v - x) - _ancestral(graph_do(g, x), y)
    if w:
        return _id(y, x | w, p, g, order)
    # line 4
    rest = induced_subgraph(g, v - x)
    comps = c_components(rest)
    if len(comps) > 1:
        factors = [_id(s, v - s, p, g, order) for s in comps]
        for f in factors:
            if isinstance(f, Unidentifiable):
                return f
        return _marginal(_product(factors), v - (y | x))
    s = comps[0]
    whole = c_components(g)
    # line 5
    if len(whole) == 1:
        return Unidentifiable(v, s)
    topo = sorted(v, key=order.__getitem__)
    # line 6
    if s in whole:
        factors = []
        for vi in sorted(s, key=order.__getitem__):
            before = frozenset(topo[: topo.index(vi)])
            factors.append(_conditional(p, v, vi, before))
        return _marginal(_product(factors), s - y)
    # line 7
    bigger = next(c for c in whole if s < c)
    factors = []
    for vi in sorted(bigger, key=order.__getitem__):
        before = frozenset(topo[: topo.index(vi)])
        factors.append(_conditional(p, v, vi, before))
    return _id(y, x & bigger, _product(factors), induced_subgraph(g, bigger), order)


def id_algorithm(g: Admg, x: Iterable[str], y: Iterable[str]) -> Estimand:
    """Estimand for P(y | do(x)) in terms of P(V), or Unidentifiable with a hedge."""
    x, y = g.check(x), g.check(y)
    if x & y:
        raise ValidationError("intervention and outcome sets overlap")
    if not y:
        raise ValidationError("empty outcome set")
    order = {v: i for i, v in enumerate(g.topological_order)}
    e = _id(y, x, JointTerm(frozenset(g.nodes)), g, order)
    if isinstance(e, Unidentifiable):
        return e
    # variables added to the intervention by line 3 leave the effect unchanged;
    # averaging over their observational marginal removes them from the tree
    extra = free_variables(e) - x - y
    if extra:
        e = MarginalSum(extra, Product((JointTerm(extra), e)))
    return e


def is_identifiable(g: Admg, x: Iterable[str], y: Iterable[str]) -> bool:
    return not isinstance(id_algorithm(g, x, y), Unidentifiable)


# ---------------------------------------------------------------- evaluation


class _Factor:
    __slots__ = ("axes", "table")

    def __init__(self, axes: tuple[str, ...], table: np.ndarray):
        self.axes = axes
        self.table = table


def _broadcast(fs: list[_Factor]) -> tuple[tuple[str, ...], list[np.ndarray]]:
    axes: list[str] = []
    for f in fs:
        axes.extend(a for a in f.axes if a not in axes)
    return tuple(axes), [align(f.table, f.axes, axes) for f in fs]


def _eval(e: Estimand, joint: Distribution, cache: dict) -> _Factor:
    if e in cache:
        return cache[e]
    if isinstance(e, JointTerm):
        keep = [v for v in joint.variables if v in e.vars]
        out = _Factor(tuple(keep), joint.marginal(keep).table)
    elif isinstance(e, MarginalSum):
        child = _eval(e.child, joint, cache)
        drop = tuple(i for i, a in enumerate(child.axes) if a in e.vars)
        axes = tuple(a for a in child.axes if a not in e.vars)
        out = _Factor(axes, child.table.sum(axis=drop) if drop else child.table)
    elif isinstance(e, Product):
        axes, tables = _broadcast([_eval(c, joint, cache) for c in e.children])
        table = tables[0]
        for t in tables[1:]:
            table = table * t
        out = _Factor(axes, table)
    elif isinstance(e, Quotient):
        axes, (num, den) = _broadcast([_eval(e.num, joint, cache), _eval(e.den, joint, cache)])
        if np.any(den <= 0):
            raise NumericError("estimand divides by a zero-probability event")
        out = _Factor(axes, num / den)
    else:
        raise NotIdentifiableError(
            f"estimand not evaluable: query unidentifiable (hedge {sorted(e.forest)} / "
            f"{sorted(e.subforest)})"
        )
    cache[e] = out
    return out


def evaluate_estimand(
    e: Estimand,
    joint: Distribution,
    x: Iterable[str],
    y: Iterable[str],
) -> Distribution:
    """Table P(y | do(x)) with axes ``x + y`` in the joint's variable order."""
    if isinstance(e, Unidentifiable):
        _eval(e, joint, {})
    if joint.given:
        raise ValidationError("evaluate_estimand needs a joint table")
    xs = tuple(v for v in joint.variables if v in set(x))
    ys = tuple(v for v in joint.variables if v in set(y))
    if len(xs) != len(set(x)) or len(ys) != len(set(y)):
        raise ValidationError("query variables missing from the joint")
    f = _eval(e, joint, {})
    extra = set(f.axes) - set(xs + ys)
    if extra:
        raise ValidationError(f"estimand has unexpected free variables {sorted(extra)}")
    axes = xs + ys
    table = align(f.table, f.axes, axes)
    table = np.broadcast_to(table, tuple(joint.cards[v] for v in axes)).copy()
    return Distribution(ys, joint.cards, table, xs, check=False)


# ---------------------------------------------------------------- c-factors


def tian_c_factors(g: Admg, joint: Distribution) -> dict[frozenset[str], Distribution]:
    """P(C | do(pa(C))) for every c-component C, from the product of
    P(v_i | v_1..v_{i-1}) over the members of C in topological order."""
    if joint.given or set(joint.variables) != set(g.nodes):
        raise ValidationError("tian_c_factors needs the joint over every graph variable")
    topo = g.topological_order
    full = joint.reorder(topo).table
    # prefix marginals P(v_1..v_i)
    prefix = [full]
    for k in range(len(topo) - 1, 0, -1):
        prefix.append(prefix[-1].sum(axis=k))
    prefix = prefix[::-1]  # prefix[i] has axes topo[: i + 1]
    out = {}
    for comp in c_components(g):
        table = np.ones((1,) * len(topo))
        for v in comp:
            i = topo.index(v)
            num = prefix[i]
            if i == 0:
                cond = num
            else:
                den = prefix[i - 1]
                if np.any(den <= 0):
                    raise NumericError(f"zero-probability conditioning event below {v}")
                cond = num / den[..., None]
            table = table * cond.reshape(cond.shape + (1,) * (len(topo) - i - 1))
        pa = parents_of_set(g, comp)
        keep = [v for v in topo if v in comp or v in pa]
        # the product depends only on C and pa(C); read it off at index 0 elsewhere
        table = table[tuple(slice(None) if v in keep else 0 for v in topo)]
        given, variables = g.sort(pa), g.sort(comp)
        out[comp] = Distribution(variables, joint.cards, align(table, keep, given + variables), given)
    return out
