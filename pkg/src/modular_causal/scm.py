"""Discrete semi-Markovian structural causal models.

Every observed variable V has an optional private noise ``E.V`` and every
bidirected edge a--b has a confounder ``U.a.b`` read by exactly a and b.
Mechanisms are total lookup tables from (parents, E.V, incident U's) to a
category of V. Exact distributions come from enumerating all exogenous
configurations.
"""

from __future__ import annotations

import csv
import itertools
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .distribution import Distribution
from .errors import NumericError, ValidationError
from .graph import Admg, format_admg, parse_admg

ENUMERATION_CAP = 10**8
_CHUNK = 1 << 18


def private_noise(v: str) -> str:
    return f"E.{v}"


def confounder(a: str, b: str) -> str:
    return f"U.{a}.{b}"


def canonical_inputs(g: Admg, v: str, noise: Iterable[str]) -> tuple[str, ...]:
    """Mechanism input order: parents, private noise (if any), confounders."""
    noise = set(noise)
    out = list(g.parents[v])
    if private_noise(v) in noise:
        out.append(private_noise(v))
    for a, b in g.bidirected:
        if v in (a, b):
            out.append(confounder(a, b))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class DiscreteScm:
    graph: Admg
    cards: Mapping[str, int]
    noise: Mapping[str, np.ndarray]
    tables: Mapping[str, np.ndarray]
    inputs: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        g = self.graph
        if not self.inputs:
            object.__setattr__(
                self, "inputs", {v: canonical_inputs(g, v, self.noise) for v in g.nodes}
            )
        for v in g.nodes:
            if v not in self.cards or int(self.cards[v]) < 1:
                raise ValidationError(f"missing or invalid cardinality for {v}")
        for name, p in self.noise.items():
            p = np.asarray(p, dtype=float)
            if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValidationError(f"noise {name}: invalid probability vector")
        for a, b in g.bidirected:
            if confounder(a, b) not in self.noise:
                raise ValidationError(f"bidirected edge {a} <-> {b} has no confounder noise")
        for v in g.nodes:
            want = canonical_inputs(g, v, self.noise)
            if self.inputs[v] != want:
                raise ValidationError(f"mechanism of {v} reads {self.inputs[v]}, expected {want}")
            table = np.asarray(self.tables[v])
            shape = tuple(self.input_card(x) for x in want)
            if table.shape != shape:
                raise ValidationError(f"mechanism of {v}: table shape {table.shape} != {shape}")
            if table.size and (table.min() < 0 or table.max() >= self.cards[v]):
                raise ValidationError(f"mechanism of {v}: output out of range")
        used = {x for v in g.nodes for x in self.inputs[v] if x in self.noise}
        unused = set(self.noise) - used
        if unused:
            raise ValidationError(f"noise {sorted(unused)} feeds no mechanism")

    def input_card(self, name: str) -> int:
        if name in self.noise:
            return len(self.noise[name])
        return int(self.cards[name])

    @property
    def variables(self) -> tuple[str, ...]:
        return self.graph.nodes


# ---------------------------------------------------------------- text format


def _section_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if line.strip():
            yield lineno, line.strip()


def parse_scm(text: str) -> DiscreteScm:
    """Parse the sectioned SCM format written by :func:`format_scm`."""
    section = None
    graph_lines: list[str] = []
    cards: dict[str, int] = {}
    noise: dict[str, np.ndarray] = {}
    mechs: dict[str, tuple[tuple[str, ...], dict[tuple[int, ...], int], int]] = {}
    current = None
    for lineno, line in _section_lines(text):
        if line in ("graph:", "card:", "noise:"):
            section = line[:-1]
            continue
        if line.startswith("mech:"):
            section = "mech"
            head = line[len("mech:"):].strip()
            if "<-" not in head:
                raise ValidationError(f"line {lineno}: expected 'mech: V <- inputs'")
            var, ins = head.split("<-", 1)
            var = var.strip()
            if var in mechs:
                raise ValidationError(f"line {lineno}: second mechanism for {var}")
            mechs[var] = (tuple(ins.split()), {}, lineno)
            current = var
            continue
        if section == "graph":
            graph_lines.append(line)
        elif section == "card":
            parts = line.split()
            if len(parts) != 2:
                raise ValidationError(f"line {lineno}: expected 'NAME CARD'")
            cards[parts[0]] = _int(parts[1], lineno)
        elif section == "noise":
            parts = line.split()
            if len(parts) < 3:
                raise ValidationError(f"line {lineno}: expected 'NAME CARD p1 .. pk'")
            k = _int(parts[1], lineno)
            try:
                probs = np.array([float(x) for x in parts[2:]])
            except ValueError as exc:
                raise ValidationError(f"line {lineno}: bad probability") from exc
            if len(probs) != k:
                raise ValidationError(f"line {lineno}: {parts[0]} has {len(probs)} probs, card {k}")
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
                raise ValidationError(f"line {lineno}: {parts[0]} is not a probability vector")
            noise[parts[0]] = probs / probs.sum()
        elif section == "mech":
            if "->" not in line:
                raise ValidationError(f"line {lineno}: expected 'values -> output'")
            lhs, rhs = line.split("->", 1)
            key = tuple(_int(x, lineno) for x in lhs.split())
            ins, rows, _ = mechs[current]
            if len(key) != len(ins):
                raise ValidationError(f"line {lineno}: {current} needs {len(ins)} input values")
            if key in rows:
                raise ValidationError(f"line {lineno}: duplicate row for {current}")
            rows[key] = _int(rhs.strip(), lineno)
        else:
            raise ValidationError(f"line {lineno}: content outside a section")
    g = parse_admg("\n".join(graph_lines))
    for v in g.nodes:
        if v not in cards:
            raise ValidationError(f"no cardinality for {v}")
        if v not in mechs:
            raise ValidationError(f"no mechanism for {v}")
    extra = set(mechs) - set(g.nodes)
    if extra:
        raise ValidationError(f"mechanisms for unknown variables {sorted(extra)}")
    card_of = {**cards, **{k: len(p) for k, p in noise.items()}}
    tables = {}
    for v in g.nodes:
        ins, rows, lineno = mechs[v]
        want = canonical_inputs(g, v, noise)
        if set(ins) != set(want) or len(ins) != len(want):
            raise ValidationError(
                f"line {lineno}: mechanism of {v} reads {list(ins)}, graph implies {list(want)}"
            )
        unknown = [x for x in ins if x not in card_of]
        if unknown:
            raise ValidationError(f"line {lineno}: unknown inputs {unknown}")
        shape = tuple(card_of[x] for x in ins)
        table = np.full(shape, -1, dtype=np.int64)
        for key, out in rows.items():
            if any(k >= c for k, c in zip(key, shape)):
                raise ValidationError(f"mechanism of {v}: input {key} out of range")
            if not 0 <= out < cards[v]:
                raise ValidationError(f"mechanism of {v}: output {out} out of range")
            table[key] = out
        if np.any(table < 0):
            missing = tuple(int(x) for x in np.argwhere(table < 0)[0])
            assignment = ", ".join(f"{n}={x}" for n, x in zip(ins, missing))
            raise ValidationError(f"mechanism of {v} is not total: no row for {assignment}")
        perm = [ins.index(x) for x in want]
        tables[v] = np.transpose(table, perm)
    return DiscreteScm(g, cards, noise, tables)


def _int(token: str, lineno: int) -> int:
    try:
        return int(token)
    except ValueError as exc:
        raise ValidationError(f"line {lineno}: expected an integer, got {token!r}") from exc


def _fmt_prob(p: float) -> str:
    return repr(float(p))


def format_scm(scm: DiscreteScm) -> str:
    g = scm.graph
    out = ["graph:"]
    out += ["  " + line for line in format_admg(g).splitlines()]
    out.append("card:")
    out += [f"  {v} {scm.cards[v]}" for v in g.nodes]
    out.append("noise:")
    for name in sorted(scm.noise):
        p = scm.noise[name]
        out.append(f"  {name} {len(p)} " + " ".join(_fmt_prob(x) for x in p))
    for v in g.nodes:
        ins = scm.inputs[v]
        out.append(f"mech: {v} <- {' '.join(ins)}")
        table = scm.tables[v]
        for key in itertools.product(*(range(n) for n in table.shape)):
            lhs = " ".join(str(k) for k in key)
            out.append(f"  {lhs} -> {int(table[key])}")
    return "\n".join(out) + "\n"


def load_scm(path: str | os.PathLike) -> DiscreteScm:
    with open(path) as fh:
        return parse_scm(fh.read())


# ------------------------------------------------------------ exact inference


def _evaluate(
    scm: DiscreteScm,
    exo: Mapping[str, np.ndarray],
    fixed: Mapping[str, np.ndarray | int],
    size: int,
) -> dict[str, np.ndarray]:
    values: dict[str, np.ndarray] = {}
    for v in scm.graph.topological_order:
        if v in fixed:
            values[v] = np.broadcast_to(np.asarray(fixed[v], dtype=np.int64), (size,))
            continue
        idx = tuple(values[x] if x in values else exo[x] for x in scm.inputs[v])
        values[v] = scm.tables[v][idx] if idx else np.full(size, scm.tables[v][()])
    return values


def _check_intervention(scm: DiscreteScm, intervention: Mapping[str, int]) -> dict[str, int]:
    out = {}
    for v, x in intervention.items():
        if v not in scm.cards:
            raise ValidationError(f"unknown intervened variable {v}")
        x = int(x)
        if not 0 <= x < scm.cards[v]:
            raise ValidationError(f"do({v}={x}) outside 0..{scm.cards[v] - 1}")
        out[v] = x
    return out


def enumeration_cost(scm: DiscreteScm, randomize: Iterable[str] = ()) -> int:
    cost = 1
    for p in scm.noise.values():
        cost *= len(p)
    for v in scm.graph.nodes:
        cost *= scm.cards[v]
    for v in randomize:
        cost *= scm.cards[v]
    return cost


def scm_exact_joint(
    scm: DiscreteScm,
    intervention: Mapping[str, int] | None = None,
    randomize: Iterable[str] = (),
    cap: int = ENUMERATION_CAP,
) -> Distribution:
    """Exact P(V | do(intervention)) by summing over every exogenous configuration.

    Variables in ``randomize`` are set by an independent uniform draw instead of
    their mechanism.
    """
    intervention = _check_intervention(scm, intervention or {})
    randomize = tuple(randomize)
    if set(randomize) & set(intervention):
        raise ValidationError("a variable cannot be both fixed and randomized")
    cost = enumeration_cost(scm, randomize)
    if cost > cap:
        raise NumericError(f"exact enumeration cost {cost:.3g} exceeds cap {cap:.3g}")
    g = scm.graph
    names = sorted(scm.noise) + list(randomize)
    cards = [len(scm.noise[n]) for n in sorted(scm.noise)] + [scm.cards[v] for v in randomize]
    probs = [scm.noise[n] for n in sorted(scm.noise)]
    probs += [np.full(scm.cards[v], 1.0 / scm.cards[v]) for v in randomize]
    total = int(np.prod(cards, dtype=np.int64)) if cards else 1
    var_cards = [scm.cards[v] for v in g.nodes]
    out = np.zeros(int(np.prod(var_cards, dtype=np.int64)))
    for start in range(0, total, _CHUNK):
        flat = np.arange(start, min(total, start + _CHUNK))
        digits = np.unravel_index(flat, cards) if cards else ()
        weight = np.ones(len(flat))
        exo = {}
        for name, d, p in zip(names, digits, probs):
            exo[name] = d
            weight = weight * p[d]
        fixed = dict(intervention)
        for v in randomize:
            fixed[v] = exo[v]
        values = _evaluate(scm, exo, fixed, len(flat))
        index = np.ravel_multi_index(tuple(values[v] for v in g.nodes), var_cards)
        out += np.bincount(index, weights=weight, minlength=out.size)
    return Distribution(g.nodes, scm.cards, out.reshape(var_cards))


def scm_interventional_oracle(
    scm: DiscreteScm,
    x: Mapping[str, int],
    y: Iterable[str],
    cap: int = ENUMERATION_CAP,
) -> Distribution:
    """Exact P(y | do(x))."""
    y = [v for v in scm.graph.nodes if v in set(y)]
    return scm_exact_joint(scm, x, cap=cap).marginal(y)


def scm_do_conditional(
    scm: DiscreteScm,
    target: Iterable[str],
    do_vars: Sequence[str],
    intervention: Mapping[str, int] | None = None,
) -> Distribution:
    """Exact P(target | do(do_vars), do(intervention)) as a table over every do_vars setting."""
    target = [v for v in scm.graph.nodes if v in set(target)]
    do_vars = tuple(do_vars)
    intervention = dict(intervention or {})
    shape = tuple(scm.cards[v] for v in do_vars)
    table = np.zeros(shape + tuple(scm.cards[v] for v in target))
    for setting in itertools.product(*(range(n) for n in shape)):
        joint = scm_exact_joint(scm, {**intervention, **dict(zip(do_vars, setting))})
        table[setting] = joint.marginal(target).table
    return Distribution(target, scm.cards, table, do_vars)


# ------------------------------------------------------------------- sampling


@dataclass(frozen=True, eq=False)
class Dataset:
    """Sampled rows (category indices) with the intervention that produced them."""

    variables: tuple[str, ...]
    rows: np.ndarray
    cards: Mapping[str, int]
    intervention: Mapping[str, int] = field(default_factory=dict)
    randomized: tuple[str, ...] = ()
    seed: int | None = None
    note: str = ""

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.ndim != 2 or rows.shape[1] != len(self.variables):
            raise ValidationError("rows must be a (n, len(variables)) array")
        object.__setattr__(self, "rows", rows)
        for j, v in enumerate(self.variables):
            if v not in self.cards:
                raise ValidationError(f"no cardinality for column {v}")
            col = rows[:, j]
            if col.size and (col.min() < 0 or col.max() >= self.cards[v]):
                raise ValidationError(f"column {v} has values outside 0..{self.cards[v] - 1}")
        for v, x in self.intervention.items():
            if v in self.variables and np.any(self.column(v) != x):
                raise ValidationError(f"intervened column {v} is not constant at {x}")

    @property
    def label(self) -> frozenset[str]:
        return frozenset(self.intervention) | frozenset(self.randomized)

    def __len__(self) -> int:
        return self.rows.shape[0]

    def column(self, v: str) -> np.ndarray:
        return self.rows[:, self.variables.index(v)]

    def select(self, variables: Sequence[str]) -> "Dataset":
        missing = [v for v in variables if v not in self.variables]
        if missing:
            raise ValidationError(f"dataset has no columns {missing}")
        cols = [self.variables.index(v) for v in variables]
        return Dataset(
            tuple(variables),
            self.rows[:, cols],
            {v: self.cards[v] for v in variables},
            {v: x for v, x in self.intervention.items() if v in variables},
            tuple(v for v in self.randomized if v in variables),
            self.seed,
            self.note,
        )

    def empirical_joint(self, variables: Sequence[str] | None = None) -> Distribution:
        variables = tuple(self.variables if variables is None else variables)
        if len(self) == 0:
            raise ValidationError("empty dataset")
        shape = tuple(self.cards[v] for v in variables)
        idx = np.ravel_multi_index(tuple(self.column(v) for v in variables), shape)
        counts = np.bincount(idx, minlength=int(np.prod(shape, dtype=np.int64)))
        return Distribution(variables, self.cards, (counts / len(self)).reshape(shape))

    def manifest(self) -> dict:
        return {
            "variables": list(self.variables),
            "cards": {v: int(self.cards[v]) for v in self.variables},
            "intervention": {v: int(x) for v, x in self.intervention.items()},
            "randomized": list(self.randomized),
            "seed": self.seed,
            "n": len(self),
            "note": self.note,
        }

    def write_csv(self, path: str | os.PathLike) -> None:
        path = os.fspath(path)
        _atomic_write(path, _csv_text(self.variables, self.rows))
        _atomic_write(manifest_path(path), json.dumps(self.manifest(), indent=2) + "\n")


def manifest_path(csv_path: str) -> str:
    return csv_path + ".manifest.json"


def _csv_text(variables, rows) -> str:
    lines = [",".join(variables)]
    lines += [",".join(str(int(x)) for x in row) for row in rows]
    return "\n".join(lines) + "\n"


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def read_dataset(path: str | os.PathLike) -> Dataset:
    path = os.fspath(path)
    try:
        with open(manifest_path(path)) as fh:
            meta = json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"missing manifest {manifest_path(path)}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed manifest for {path}: {exc}") from exc
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration as exc:
            raise ValidationError(f"{path}: empty file") from exc
        try:
            rows = [[int(x) for x in r] for r in reader if r]
        except ValueError as exc:
            raise ValidationError(f"{path}: non-integer cell") from exc
    arr = np.array(rows, dtype=np.int64).reshape(len(rows), len(header))
    return Dataset(
        tuple(header),
        arr,
        {k: int(v) for k, v in meta["cards"].items()},
        {k: int(v) for k, v in meta.get("intervention", {}).items()},
        tuple(meta.get("randomized", ())),
        meta.get("seed"),
        meta.get("note", ""),
    )


def scm_sample(
    scm: DiscreteScm,
    n: int,
    intervention: Mapping[str, int] | None = None,
    seed: int = 0,
    randomize: Iterable[str] = (),
) -> Dataset:
    """Ancestral sampling; intervened variables bypass their mechanisms."""
    if n < 1:
        raise ValidationError("n >= 1 required")
    intervention = _check_intervention(scm, intervention or {})
    randomize = tuple(randomize)
    if set(randomize) & set(intervention):
        raise ValidationError("a variable cannot be both fixed and randomized")
    rng = np.random.default_rng(seed)
    exo = {}
    for name in sorted(scm.noise):
        p = scm.noise[name]
        exo[name] = rng.choice(len(p), size=n, p=p)
    fixed: dict[str, np.ndarray | int] = dict(intervention)
    for v in randomize:
        fixed[v] = rng.integers(scm.cards[v], size=n)
    values = _evaluate(scm, exo, fixed, n)
    g = scm.graph
    rows = np.stack([values[v] for v in g.nodes], axis=1)
    return Dataset(g.nodes, rows, dict(scm.cards), intervention, randomize, seed)


# ---------------------------------------------------------------- generation


def _positive_simplex(rng: np.random.Generator, k: int) -> np.ndarray:
    p = rng.uniform(0.2, 1.0, size=k)
    return p / p.sum()


def random_scm_on_graph(
    g: Admg,
    cards: Mapping[str, int],
    seed: int | np.random.Generator,
    max_card: int = 3,
) -> DiscreteScm:
    """Random mechanisms whose induced conditionals are strictly positive.

    For each (parents, confounders) setting the map from private noise to
    output is onto, so every outcome keeps positive probability.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = {}
    for a, b in g.bidirected:
        noise[confounder(a, b)] = _positive_simplex(rng, int(rng.integers(2, max_card + 1)))
    for v in g.nodes:
        noise[private_noise(v)] = _positive_simplex(rng, cards[v] + int(rng.integers(0, 2)))
    tables = {}
    for v in g.nodes:
        ins = canonical_inputs(g, v, noise)
        shape = [len(noise[x]) if x in noise else cards[x] for x in ins]
        e_axis = ins.index(private_noise(v))
        other = [n for i, n in enumerate(shape) if i != e_axis]
        n_rows = int(np.prod(other, dtype=np.int64))
        ecard = shape[e_axis]
        rows = np.empty((n_rows, ecard), dtype=np.int64)
        for r in range(n_rows):
            row = np.concatenate(
                [np.arange(cards[v]), rng.integers(cards[v], size=ecard - cards[v])]
            )
            rows[r] = rng.permutation(row)
        table = rows.reshape(other + [ecard])
        tables[v] = np.moveaxis(table, -1, e_axis)
    return DiscreteScm(g, dict(cards), noise, tables)


def random_admg(
    n_vars: int,
    rng: np.random.Generator,
    arc_count: int | None = None,
    latent_count: int | None = None,
) -> Admg:
    """Random ADMG: arcs inserted along a random topological order."""
    if n_vars < 1:
        raise ValidationError("n_vars >= 1 required")
    arc_count = n_vars if arc_count is None else arc_count
    latent_count = n_vars // 3 if latent_count is None else latent_count
    names = [f"V{i}" for i in range(n_vars)]
    order = rng.permutation(n_vars)
    pairs = [(int(order[i]), int(order[j])) for i in range(n_vars) for j in range(i + 1, n_vars)]
    chosen = rng.choice(len(pairs), size=min(arc_count, len(pairs)), replace=False) if pairs else []
    directed = [(names[pairs[k][0]], names[pairs[k][1]]) for k in sorted(chosen)]
    unordered = [(i, j) for i in range(n_vars) for j in range(i + 1, n_vars)]
    picked = (
        rng.choice(len(unordered), size=min(latent_count, len(unordered)), replace=False)
        if unordered
        else []
    )
    bidirected = [(names[unordered[k][0]], names[unordered[k][1]]) for k in sorted(picked)]
    return Admg.build(names, directed, bidirected)


def random_scm(
    n_vars: int,
    seed: int,
    arc_count: int | None = None,
    latent_count: int | None = None,
    max_card: int = 3,
) -> tuple[Admg, DiscreteScm]:
    if n_vars < 2:
        raise ValidationError("n_vars >= 2 required")
    rng = np.random.default_rng(seed)
    g = random_admg(n_vars, rng, arc_count, latent_count)
    cards = {v: int(rng.integers(2, max_card + 1)) for v in g.nodes}
    return g, random_scm_on_graph(g, cards, rng, max_card)


def scm_from_cpts(
    g: Admg, cards: Mapping[str, int], cpts: Mapping[str, np.ndarray]
) -> DiscreteScm:
    """Markovian SCM realizing the given conditional tables.

    ``cpts[v]`` has axes (parents of v in graph order..., v). The private noise
    of v enumerates response functions (one output per parent setting) with
    product probabilities, which reproduces each table exactly.
    """
    if g.bidirected:
        raise ValidationError("scm_from_cpts needs a graph without bidirected edges")
    noise, tables = {}, {}
    for v in g.nodes:
        pa = g.parents[v]
        cpt = np.asarray(cpts[v], dtype=float)
        pa_shape = tuple(cards[p] for p in pa)
        if cpt.shape != pa_shape + (cards[v],):
            raise ValidationError(f"table for {v} has shape {cpt.shape}")
        flat = cpt.reshape(-1, cards[v])
        responses = list(itertools.product(range(cards[v]), repeat=flat.shape[0]))
        probs = np.array([np.prod([flat[s, r[s]] for s in range(len(r))]) for r in responses])
        noise[private_noise(v)] = probs / probs.sum()
        resp = np.array(responses, dtype=np.int64)  # (n_responses, n_parent_settings)
        tables[v] = resp.T.reshape(pa_shape + (len(responses),))
    return DiscreteScm(g, dict(cards), noise, tables)
