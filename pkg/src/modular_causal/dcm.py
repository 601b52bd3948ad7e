"""Discrete deep-causal-model analog with softmax-table mechanisms.

Each variable V has a logits table indexed by (parents, private noise E.V,
incident confounders U) over V's categories. Private noise is uniform and
fixed. A confounder ``U.a.b`` is one shared categorical draw read by both a
and b; its prior is a learnable softmax that starts uniform.

Exact induced distributions are tensor contractions of the per-variable
kernels P(v | parents, u) = mean_e softmax(logits[parents, e, u]) with the
confounder priors. The same contraction gives exact gradients of any
objective that is a function of the contracted table.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .distribution import Distribution, align
from .errors import NumericError, ValidationError
from .graph import Admg, ancestors, format_admg, parse_admg
from .scm import Dataset, canonical_inputs, confounder, private_noise

ENUMERATION_CAP = 10**8
CHECKPOINT_FORMAT = "modular-causal-dcm/1"


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def graph_hash(g: Admg) -> str:
    return hashlib.sha256(format_admg(g).encode()).hexdigest()


def default_noise_cards(g: Admg, cards: Mapping[str, int]) -> dict[str, int]:
    """Private noise as large as the variable, confounders as large as the pair."""
    out = {private_noise(v): int(cards[v]) for v in g.nodes}
    for a, b in g.bidirected:
        out[confounder(a, b)] = int(cards[a]) * int(cards[b])
    return out


class Dcm:
    """Parameters are plain arrays; treat instances as values (use ``copy``)."""

    def __init__(
        self,
        graph: Admg,
        cards: Mapping[str, int],
        noise_cards: Mapping[str, int],
        logits: Mapping[str, np.ndarray],
        prior_logits: Mapping[str, np.ndarray],
        trainable: Iterable[str] | None = None,
    ):
        self.graph = graph
        self.cards = {v: int(cards[v]) for v in graph.nodes}
        self.noise_cards = dict(noise_cards)
        self.inputs = {v: canonical_inputs(graph, v, self.noise_cards) for v in graph.nodes}
        self.logits = {v: np.asarray(logits[v], dtype=float) for v in graph.nodes}
        self.prior_logits = {u: np.asarray(p, dtype=float) for u, p in prior_logits.items()}
        self.trainable = frozenset(graph.nodes if trainable is None else trainable)
        for v in graph.nodes:
            if private_noise(v) not in self.noise_cards:
                raise ValidationError(f"no private noise cardinality for {v}")
            want = tuple(self.input_card(x) for x in self.inputs[v]) + (self.cards[v],)
            if self.logits[v].shape != want:
                raise ValidationError(f"logits of {v}: shape {self.logits[v].shape} != {want}")
        for a, b in graph.bidirected:
            u = confounder(a, b)
            if self.prior_logits[u].shape != (self.noise_cards[u],):
                raise ValidationError(f"prior of {u} has the wrong shape")

    def input_card(self, name: str) -> int:
        if name in self.noise_cards:
            return self.noise_cards[name]
        return self.cards[name]

    @property
    def confounders(self) -> tuple[str, ...]:
        return tuple(confounder(a, b) for a, b in self.graph.bidirected)

    def confounder_endpoints(self, u: str) -> tuple[str, str]:
        for a, b in self.graph.bidirected:
            if confounder(a, b) == u:
                return a, b
        raise KeyError(u)

    def prior_trainable(self, u: str) -> bool:
        a, b = self.confounder_endpoints(u)
        return a in self.trainable and b in self.trainable

    def copy(self) -> "Dcm":
        return Dcm(
            self.graph,
            self.cards,
            self.noise_cards,
            {v: t.copy() for v, t in self.logits.items()},
            {u: p.copy() for u, p in self.prior_logits.items()},
            self.trainable,
        )

    def kernel(self, v: str) -> np.ndarray:
        """P(v | parents, confounders) with the private noise averaged out."""
        e_axis = len(self.graph.parents[v])
        return softmax(self.logits[v]).mean(axis=e_axis)

    def prior(self, u: str) -> np.ndarray:
        return softmax(self.prior_logits[u])

    def parameters(self) -> dict[str, np.ndarray]:
        """Flat name -> array view; confounder priors are keyed by their noise name."""
        return {**self.logits, **self.prior_logits}

    def with_parameters(self, params: Mapping[str, np.ndarray]) -> "Dcm":
        out = self.copy()
        for k, arr in params.items():
            if k in out.logits:
                out.logits[k] = np.array(arr, dtype=float)
            elif k in out.prior_logits:
                out.prior_logits[k] = np.array(arr, dtype=float)
            else:
                raise ValidationError(f"unknown parameter {k}")
        return out


def dcm_init(
    g: Admg,
    cards: Mapping[str, int],
    noise_config: Mapping[str, int] | None = None,
    seed: int = 0,
    scale: float = 0.1,
) -> Dcm:
    """Fresh model with logits drawn from N(0, scale^2); scale=0 gives uniform tables."""
    for v in g.nodes:
        if v not in cards:
            raise ValidationError(f"no cardinality for {v}")
        if int(cards[v]) < 2:
            raise ValidationError(f"cardinality of {v} must be >= 2")
    noise = default_noise_cards(g, cards)
    for k, n in (noise_config or {}).items():
        if k not in noise:
            raise ValidationError(f"unknown noise source {k}")
        if int(n) < 1:
            raise ValidationError(f"noise {k} needs cardinality >= 1")
        noise[k] = int(n)
    rng = np.random.default_rng(seed)
    logits = {}
    for v in g.nodes:
        shape = tuple(
            noise[x] if x in noise else int(cards[x]) for x in canonical_inputs(g, v, noise)
        )
        logits[v] = scale * rng.standard_normal(shape + (int(cards[v]),))
    priors = {confounder(a, b): np.zeros(noise[confounder(a, b)]) for a, b in g.bidirected}
    return Dcm(g, cards, noise, logits, priors)


def dcm_set_trainable(dcm: Dcm, vars: Iterable[str], flag: bool) -> Dcm:
    vars = dcm.graph.check(vars)
    out = dcm.copy()
    out.trainable = (dcm.trainable | vars) if flag else (dcm.trainable - vars)
    return out


# ------------------------------------------------------------- contraction


@dataclass(frozen=True)
class _Factor:
    kind: str  # "kernel" or "prior"
    name: str  # variable or confounder name
    ids: tuple[int, ...]


class Contraction:
    """Exact Q(target | do(do_vars)) for a fixed model structure.

    The table has axes ``do_vars + target``. ``backward`` maps the gradient of
    a scalar objective with respect to that table onto the model parameters.
    """

    def __init__(
        self,
        dcm: Dcm,
        target: Iterable[str],
        do_vars: Sequence[str] = (),
        cap: int = ENUMERATION_CAP,
    ):
        g = dcm.graph
        self.target = g.sort(g.check(target))
        self.do_vars = tuple(do_vars)
        if len(set(self.do_vars)) != len(self.do_vars):
            raise ValidationError("repeated do() variable")
        g.check(self.do_vars)
        fixed = frozenset(self.do_vars)
        if fixed & set(self.target):
            raise ValidationError("target and do() variables overlap")
        relevant = set(self.target) | (ancestors(g, self.target, fixed) - fixed)
        self.relevant = g.sort(relevant)
        ids: dict[str, int] = {}
        for v in g.nodes:
            if v in relevant or v in fixed:
                ids[v] = len(ids)
        confs = []
        for a, b in g.bidirected:
            if a in relevant or b in relevant:
                u = confounder(a, b)
                ids[u] = len(ids)
                confs.append(u)
        self.ids = ids
        self.id_cards = {i: dcm.input_card(n) for n, i in ids.items()}
        factors = []
        for v in self.relevant:
            ins = [x for x in dcm.inputs[v] if x != private_noise(v)]
            factors.append(_Factor("kernel", v, tuple(ids[x] for x in ins) + (ids[v],)))
        for u in confs:
            factors.append(_Factor("prior", u, (ids[u],)))
        self.factors = tuple(factors)
        used = {i for f in factors for i in f.ids}
        self.out_vars = tuple(v for v in self.do_vars if ids[v] in used) + self.target
        self.out_ids = tuple(ids[v] for v in self.out_vars)
        cost = 1
        for i in used:
            cost *= self.id_cards[i]
        for v in self.relevant:
            cost *= dcm.noise_cards[private_noise(v)]
        if cost > cap:
            raise NumericError(f"exact enumeration cost {cost:.3g} exceeds cap {cap:.3g}")
        self.cards = {v: dcm.cards[v] for v in self.do_vars + self.target}
        self._paths: dict[int, list] = {}

    def _arrays(self, dcm: Dcm) -> list[np.ndarray]:
        return [
            dcm.kernel(f.name) if f.kind == "kernel" else dcm.prior(f.name) for f in self.factors
        ]

    def _einsum(self, key: int, operands: list, out: tuple[int, ...]) -> np.ndarray:
        args = []
        for arr, ids in operands:
            args += [arr, list(ids)]
        args.append(list(out))
        path = self._paths.get(key)
        if path is None:
            path = np.einsum_path(*args, optimize="greedy")[0]
            self._paths[key] = path
        return np.einsum(*args, optimize=path)

    def forward(self, dcm: Dcm, arrays: list[np.ndarray] | None = None) -> np.ndarray:
        """Table over ``do_vars + target`` (broadcast over unused do() axes)."""
        arrays = self._arrays(dcm) if arrays is None else arrays
        operands = [(a, f.ids) for a, f in zip(arrays, self.factors)]
        if not operands:
            raise ValidationError("empty target")
        q = self._einsum(-1, operands, self.out_ids)
        full = self.do_vars + self.target
        q = align(q, self.out_vars, full)
        return np.broadcast_to(q, tuple(self.cards[v] for v in full))

    def distribution(self, dcm: Dcm) -> Distribution:
        q = np.array(self.forward(dcm))
        return Distribution(self.target, self.cards, q, self.do_vars, check=False)

    def backward(
        self,
        dcm: Dcm,
        grad_q: np.ndarray,
        wanted: Iterable[str],
        arrays: list[np.ndarray] | None = None,
    ) -> dict[str, np.ndarray]:
        """Gradients w.r.t. the logits of ``wanted`` variables / confounder priors."""
        wanted = set(wanted)
        arrays = self._arrays(dcm) if arrays is None else arrays
        full = self.do_vars + self.target
        # fold gradient over do() axes the table does not depend on
        unused = tuple(i for i, v in enumerate(full) if v not in self.out_vars)
        gq = grad_q.sum(axis=unused) if unused else grad_q
        gq = align(gq, [v for v in full if v in self.out_vars], self.out_vars)
        grads: dict[str, np.ndarray] = {}
        for j, f in enumerate(self.factors):
            if f.name not in wanted:
                continue
            operands = [(a, g.ids) for k, (a, g) in enumerate(zip(arrays, self.factors)) if k != j]
            operands.append((gq, self.out_ids))
            covered = {i for _, ids in operands for i in ids}
            for i in f.ids:
                if i not in covered:
                    operands.append((np.ones(self.id_cards[i]), (i,)))
            g_factor = self._einsum(j, operands, f.ids)
            if f.kind == "prior":
                p = arrays[j]
                g_add = p * (g_factor - np.dot(p, g_factor))
            else:
                g_add = _kernel_logit_grad(dcm, f.name, g_factor)
            grads[f.name] = grads.get(f.name, 0) + g_add
        return grads


def _kernel_logit_grad(dcm: Dcm, v: str, g_kernel: np.ndarray) -> np.ndarray:
    """Chain rule through kernel = mean over E of softmax(logits)."""
    e_axis = len(dcm.graph.parents[v])
    s = softmax(dcm.logits[v])
    n_e = s.shape[e_axis]
    g = np.expand_dims(g_kernel, e_axis) / n_e
    return s * (g - (s * g).sum(axis=-1, keepdims=True))


# ------------------------------------------------------------------ queries


def dcm_exact_distribution(
    dcm: Dcm,
    target: Iterable[str],
    given_do: Mapping[str, int] | Sequence[str] | None = None,
    intervention: Mapping[str, int] | None = None,
    cap: int = ENUMERATION_CAP,
) -> Distribution:
    """Exact Q(target | do(given_do), do(intervention)).

    ``given_do`` may be an assignment (the result is for those values) or a
    list of names (the result is a conditional table over all their settings).
    """
    intervention = dict(intervention or {})
    if given_do is None:
        free, fixed = (), {}
    elif isinstance(given_do, Mapping):
        free, fixed = (), dict(given_do)
    else:
        free, fixed = tuple(given_do), {}
    fixed.update(intervention)
    for v, x in fixed.items():
        if not 0 <= int(x) < dcm.cards[v]:
            raise ValidationError(f"do({v}={x}) outside 0..{dcm.cards[v] - 1}")
    c = Contraction(dcm, target, free + tuple(fixed), cap)
    dist = c.distribution(dcm)
    return dist.slice({v: int(x) for v, x in fixed.items()}) if fixed else dist


def dcm_forward_sample(
    dcm: Dcm,
    n: int,
    intervention: Mapping[str, int] | None = None,
    clamp: Mapping[str, np.ndarray] | Dataset | None = None,
    seed: int = 0,
) -> Dataset:
    """Ancestral sampling; each confounder is drawn once per row and shared."""
    if n < 1:
        raise ValidationError("n >= 1 required")
    g = dcm.graph
    intervention = {v: int(x) for v, x in (intervention or {}).items()}
    g.check(intervention)
    if isinstance(clamp, Dataset):
        clamp = {v: clamp.column(v) for v in clamp.variables}
    clamp = {v: np.asarray(c, dtype=np.int64) for v, c in (clamp or {}).items()}
    g.check(clamp)
    if set(clamp) & set(intervention):
        raise ValidationError("a variable cannot be both clamped and intervened on")
    for v, col in clamp.items():
        if len(col) != n:
            raise ValidationError(f"clamp column {v} has {len(col)} rows, expected {n}")
    rng = np.random.default_rng(seed)
    u_vals = {}
    for u in dcm.confounders:
        p = dcm.prior(u)
        u_vals[u] = rng.choice(len(p), size=n, p=p)
    values: dict[str, np.ndarray] = {}
    for v in g.topological_order:
        e = rng.integers(dcm.noise_cards[private_noise(v)], size=n)
        r = rng.random(n)
        if v in intervention:
            values[v] = np.full(n, intervention[v], dtype=np.int64)
            continue
        if v in clamp:
            values[v] = clamp[v]
            continue
        idx = []
        for x in dcm.inputs[v]:
            if x == private_noise(v):
                idx.append(e)
            elif x in u_vals:
                idx.append(u_vals[x])
            else:
                idx.append(values[x])
        probs = softmax(dcm.logits[v][tuple(idx)])
        cdf = np.cumsum(probs, axis=1)
        values[v] = np.minimum((r[:, None] > cdf).sum(axis=1), dcm.cards[v] - 1)
    rows = np.stack([values[v] for v in g.nodes], axis=1)
    return Dataset(g.nodes, rows, dict(dcm.cards), intervention, (), seed, "dcm sample")


# --------------------------------------------------------------- checkpoints


def checkpoint_dict(dcm: Dcm) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "graph": format_admg(dcm.graph),
        "graph_hash": graph_hash(dcm.graph),
        "cards": dcm.cards,
        "noise_cards": dcm.noise_cards,
        "trainable": list(dcm.graph.sort(dcm.trainable)),
        "logits": {v: t.tolist() for v, t in dcm.logits.items()},
        "prior_logits": {u: p.tolist() for u, p in dcm.prior_logits.items()},
    }


def save_checkpoint(dcm: Dcm, path: str | os.PathLike) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(checkpoint_dict(dcm), fh, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike, expected_graph: Admg | None = None) -> Dcm:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed checkpoint: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"unsupported checkpoint format {doc.get('format')!r}")
    g = parse_admg(doc["graph"])
    if graph_hash(g) != doc["graph_hash"]:
        raise ValidationError("checkpoint graph hash does not match its graph")
    if expected_graph is not None and graph_hash(expected_graph) != doc["graph_hash"]:
        raise ValidationError("checkpoint was trained on a different graph")
    return Dcm(
        g,
        doc["cards"],
        doc["noise_cards"],
        {v: np.array(t) for v, t in doc["logits"].items()},
        {u: np.array(p) for u, p in doc["prior_logits"].items()},
        doc["trainable"],
    )

