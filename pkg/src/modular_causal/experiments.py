"""Desk-scale experiment reproductions and their reports.

Every experiment is a pure function of its config (seeds included), so the
canonical report JSON (which leaves out wall-clock time) is byte-identical
across reruns.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .dcm import Dcm, dcm_exact_distribution, dcm_init
from .distribution import Distribution
from .errors import ValidationError
from .fixtures import asia_hidden_graph, fixture_scm
from .graph import c_components
from .hgraph import TrainingPlan, construct_hgraph, make_training_plan
from .identify import Unidentifiable, evaluate_estimand, id_algorithm, to_sexpr
from .metrics import kl, tvd, tvd_per_slice
from .scm import DiscreteScm, random_admg, scm_exact_joint, scm_interventional_oracle, scm_sample
from .trainer import EXACT_FIT, FitConfig, joint_train, modular_train

SAMPLE_TARGET = 0.05
EXACT_TARGET = 1e-4

_TRAINING_DEFAULTS = {
    "seed": 0,
    "learning_rate": 0.05,
    "max_steps": 2000,
    "tolerance": 1e-3,
    "eval_every": 50,
}

DEFAULTS: dict[str, dict] = {
    "frontdoor": {**_TRAINING_DEFAULTS, "n_samples": 20000, "modes": ["sample"]},
    "diamond": {**_TRAINING_DEFAULTS, "n_samples": 30000, "modes": ["exact", "sample"]},
    "random-graphs": {"seed": 0, "sizes": [15, 25, 35, 50], "seeds_per_size": 5},
    "asia": {**_TRAINING_DEFAULTS, "n_samples": 40000, "modes": ["exact", "sample"]},
    "surrogate": {
        **_TRAINING_DEFAULTS,
        "n_samples": 30000,
        "n_interventional": 10000,
        "modes": ["exact", "sample"],
    },
}


@dataclass
class ExperimentReport:
    name: str
    config: dict
    metrics: list[dict] = field(default_factory=list)
    per_slice: list[dict] = field(default_factory=list)
    hgraph_stats: list[dict] = field(default_factory=list)
    details: dict = field(default_factory=dict)
    criteria: dict[str, bool] = field(default_factory=dict)
    curves: list[dict] = field(default_factory=list)
    runtime: float = 0.0

    @property
    def passed(self) -> bool:
        return all(self.criteria.values())

    def canonical(self) -> dict:
        """Everything reproducible from (seed, config); no wall-clock values."""
        return {
            "name": self.name,
            "config": self.config,
            "metrics": self.metrics,
            "per_slice": self.per_slice,
            "hgraph_stats": self.hgraph_stats,
            "details": self.details,
            "criteria": self.criteria,
        }

    def to_json(self) -> str:
        return json.dumps(_plain(self.canonical()), indent=2, sort_keys=True) + "\n"

    def curves_csv(self) -> str:
        buf = io.StringIO()
        cols = ["run", "mode", "stage", "step", "query", "tvd"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.curves:
            w.writerow({k: row.get(k, "") for k in cols})
        return buf.getvalue()

    def write(self, directory: str | os.PathLike) -> tuple[str, str]:
        """Write ``<name>.json`` and ``<name>.curves.csv`` atomically."""
        os.makedirs(directory, exist_ok=True)
        base = os.path.join(os.fspath(directory), self.name)
        paths = (base + ".json", base + ".curves.csv")
        doc = json.loads(self.to_json())
        doc["runtime_seconds"] = round(self.runtime, 3)
        for path, text in zip(paths, (json.dumps(doc, indent=2, sort_keys=True) + "\n", self.curves_csv())):
            tmp = f"{path}.tmp{os.getpid()}"
            with open(tmp, "w") as fh:
                fh.write(text)
            os.replace(tmp, path)
        return paths

    def summary(self) -> str:
        lines = [f"experiment {self.name}"]
        for m in self.metrics:
            tag = " ".join(f"{k}={m[k]}" for k in ("mode", "model") if k in m)
            lines.append(f"  {tag} {m['query']}: tvd={m['tvd']:.3g} kl={m['kl']:.3g}")
        for s in self.hgraph_stats:
            lines.append("  " + " ".join(f"{k}={v}" for k, v in s.items()))
        for k, ok in self.criteria.items():
            lines.append(f"  [{'PASS' if ok else 'FAIL'}] {k}")
        lines.append(f"  runtime {self.runtime:.2f}s")
        return "\n".join(lines)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(f"{float(x):.12g}")
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def merge_config(name: str, cfg: Mapping | None) -> dict:
    if name not in DEFAULTS:
        raise ValidationError(f"unknown experiment {name!r}; choose from {sorted(DEFAULTS)}")
    out = dict(DEFAULTS[name])
    extra = set(cfg or {}) - set(out)
    if extra:
        raise ValidationError(f"unknown config keys for {name}: {sorted(extra)}")
    out.update(cfg or {})
    for mode in out.get("modes", []):
        if mode not in ("sample", "exact"):
            raise ValidationError(f"unknown mode {mode!r}")
    return out


def _fit_config(cfg: dict, mode: str) -> FitConfig:
    if mode == "exact":
        return EXACT_FIT
    return FitConfig(
        learning_rate=cfg["learning_rate"],
        max_steps=cfg["max_steps"],
        tolerance=cfg["tolerance"],
        seed=cfg["seed"],
        eval_every=cfg["eval_every"],
    )


# ---------------------------------------------------------------- shared pieces


@dataclass(frozen=True)
class Query:
    name: str
    target: tuple[str, ...]
    do: tuple[tuple[str, int], ...] = ()


def _truth(scm: DiscreteScm, q: Query) -> Distribution:
    return scm_interventional_oracle(scm, dict(q.do), q.target)


def _model(dcm: Dcm, q: Query) -> Distribution:
    return dcm_exact_distribution(dcm, q.target, intervention=dict(q.do))


def _score(dcm: Dcm, truths: dict[Query, Distribution], tags: dict) -> tuple[list[dict], list[dict]]:
    rows, slices = [], []
    for q, p in truths.items():
        m = _model(dcm, q).reorder(p.variables)
        rows.append({**tags, "query": q.name, "tvd": tvd(p, m), "kl": kl(p, m)})
        slices.append({**tags, "query": q.name, "tvd": tvd_per_slice(p, m).tolist()})
    return rows, slices


def _curve_callbacks(report: ExperimentReport, truths, tags: dict):
    state = {"stage": None, "base": 0, "last": 0}

    def record(step: int, model: Dcm, stage: str):
        if stage != state["stage"]:
            if state["stage"] is not None:
                state["base"] += state["last"] + 1
            state["stage"] = stage
        state["last"] = step
        for q, p in truths.items():
            value = tvd(p, _model(model, q).reorder(p.variables))
            report.curves.append(
                {**tags, "stage": stage, "step": state["base"] + step, "query": q.name, "tvd": value}
            )

    def modular(stage, step, model):
        record(step, model, "+".join(model.graph.sort(stage.hnode)))

    def joint(step, model):
        record(step, model, "all")

    return modular, joint


def _datasets(scm: DiscreteScm, labels: Sequence[dict], sizes: Sequence[int], seed: int,
              mode: str, observed: Sequence[str]):
    out = {}
    for k, (do, n) in enumerate(zip(labels, sizes)):
        if mode == "exact":
            src = scm_exact_joint(scm, do).marginal(observed)
        else:
            src = scm_sample(scm, n, do, seed=seed + 1000 * k + 1).select(list(observed))
        out[frozenset(do)] = src
    return out


def _train(
    report: ExperimentReport,
    graph,
    cards: Mapping[str, int],
    plan: TrainingPlan,
    datasets: Mapping,
    truths: dict[Query, Distribution],
    cfg: dict,
    mode: str,
    baseline: bool = False,
) -> Dcm:
    fit = _fit_config(cfg, mode)
    tags = {"run": "modular", "mode": mode}
    mod_cb, _ = _curve_callbacks(report, truths, tags)
    model, train = modular_train(
        dcm_init(graph, cards, seed=cfg["seed"]), plan, datasets, fit,
        callback=mod_cb if mode == "sample" else None,
    )
    rows, slices = _score(model, truths, {"mode": mode, "model": "modular"})
    report.metrics += rows
    report.per_slice += slices
    report.details.setdefault("stages", []).append(
        {"mode": mode, "stages": [s.to_dict() | {"seconds": None} for s in train.stages]}
    )
    if baseline:
        steps = sum(s.steps for s in train.stages)
        jfit = FitConfig(**{**fit.__dict__, "max_steps": max(steps, 1)})
        _, joint_cb = _curve_callbacks(report, truths, {"run": "joint", "mode": mode})
        jmodel, jrep = joint_train(
            dcm_init(graph, cards, seed=cfg["seed"]), datasets, jfit,
            callback=joint_cb if mode == "sample" else None,
        )
        rows, slices = _score(jmodel, truths, {"mode": mode, "model": "joint"})
        report.metrics += rows
        report.per_slice += slices
        report.details["joint_budget_steps"] = steps
    return model


def _check_targets(report: ExperimentReport, queries: Sequence[Query], prefix: str = ""):
    for row in report.metrics:
        if row.get("model") != "modular" or row["query"] not in {q.name for q in queries}:
            continue
        bound = SAMPLE_TARGET if row["mode"] == "sample" else EXACT_TARGET
        report.criteria[f"{prefix}{row['mode']} {row['query']} tvd < {bound:g}"] = row["tvd"] < bound


def _hgraph_stats(plan: TrainingPlan, label: str) -> dict:
    h = plan.hgraph
    g = plan.graph
    return {
        "graph": label,
        "nodes": len(g),
        "c_components": len(c_components(g)),
        "hnodes": len(h.hnodes),
        "max_hnode_size": h.max_hnode_size(),
        "levels": [[list(g.sort(st.hnode)) for st in lvl] for lvl in plan.levels()],
    }


def _run(name: str, cfg: Mapping | None, body: Callable[[ExperimentReport, dict], None]):
    cfg = merge_config(name, cfg)
    t0 = time.perf_counter()
    report = ExperimentReport(name, cfg)
    body(report, cfg)
    report.runtime = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------- experiments


def run_frontdoor_experiment(cfg: Mapping | None = None) -> ExperimentReport:
    """P(A | do(D)) through the mediator I, trained from observational samples."""

    def body(report, cfg):
        scm = fixture_scm("frontdoor")
        g = scm.graph
        queries = [
            Query("P(D,A)", ("D", "A")),
            Query("P(A|do(D=0))", ("A",), (("D", 0),)),
            Query("P(A|do(D=1))", ("A",), (("D", 1),)),
        ]
        truths = {q: _truth(scm, q) for q in queries}
        plan = make_training_plan(g)
        report.hgraph_stats.append(_hgraph_stats(plan, "frontdoor"))
        est = id_algorithm(g, {"D"}, {"A"})
        joint = scm_exact_joint(scm)
        ident = evaluate_estimand(est, joint, ["D"], ["A"])
        gap = max(abs(ident.table[d] - truths[queries[1 + d]].table).max() for d in (0, 1))
        report.details["estimand"] = to_sexpr(est)
        report.details["estimand_gap"] = float(gap)
        report.criteria["front-door estimand equals enumeration oracle (1e-9)"] = gap < 1e-9
        report.criteria["plan order [{I}] then [{D,A}]"] = [
            [sorted(st.hnode) for st in lvl] for lvl in plan.levels()
        ] == [[["I"]], [["A", "D"]]]
        for mode in cfg["modes"]:
            data = _datasets(scm, [{}], [cfg["n_samples"]], cfg["seed"], mode, g.nodes)
            _train(report, g, scm.cards, plan, data, truths, cfg, mode, baseline=True)
        _check_targets(report, queries)

    return _run("frontdoor", cfg, body)


def run_diamond_experiment(cfg: Mapping | None = None) -> ExperimentReport:
    """I1 -> D -> I2 -> C with I1 <-> C and D <-> C; I2 is trained first."""

    def body(report, cfg):
        scm = fixture_scm("diamond")
        g = scm.graph
        queries = [
            Query("P(V)", g.nodes),
            *(Query(f"P(I2|do(D={d}))", ("I2",), (("D", d),)) for d in range(scm.cards["D"])),
            *(Query(f"P(C|do(D={d}))", ("C",), (("D", d),)) for d in range(scm.cards["D"])),
        ]
        truths = {q: _truth(scm, q) for q in queries}
        plan = make_training_plan(g)
        report.hgraph_stats.append(_hgraph_stats(plan, "diamond"))
        report.criteria["plan order [{I2}] then [{I1,D,C}]"] = [
            [sorted(st.hnode) for st in lvl] for lvl in plan.levels()
        ] == [[["I2"]], [["C", "D", "I1"]]]
        for mode in cfg["modes"]:
            data = _datasets(scm, [{}], [cfg["n_samples"]], cfg["seed"], mode, g.nodes)
            _train(report, g, scm.cards, plan, data, truths, cfg, mode)
        _check_targets(report, queries[:1])

    return _run("diamond", cfg, body)


def run_random_graph_experiment(cfg: Mapping | None = None) -> ExperimentReport:
    """Largest hnode size on random ADMGs with N arcs and N // 3 bidirected edges."""

    def body(report, cfg):
        rows = []
        for n in cfg["sizes"]:
            sizes = []
            for s in range(cfg["seeds_per_size"]):
                g = random_admg(n, np.random.default_rng([cfg["seed"], n, s]))
                h = construct_hgraph(g)
                sizes.append(h.max_hnode_size())
                report.hgraph_stats.append(
                    {
                        "nodes": n,
                        "seed": s,
                        "c_components": len(c_components(g)),
                        "hnodes": len(h.hnodes),
                        "max_hnode_size": h.max_hnode_size(),
                    }
                )
            rows.append({"nodes": n, "mean_max_hnode_size": float(np.mean(sizes)), "sizes": sizes})
            report.criteria[f"N={n}: every max hnode size <= N"] = max(sizes) <= n
            report.criteria[f"N={n}: mean max hnode size < N"] = float(np.mean(sizes)) < n
        report.details["trend"] = rows

    return _run("random-graphs", cfg, body)


def run_asia_experiment(cfg: Mapping | None = None) -> ExperimentReport:
    """Asia with smoke and bronc hidden; one front-door and one back-door query."""

    def body(report, cfg):
        scm = fixture_scm("asia")
        g, warnings = asia_hidden_graph()
        report.details["hidden_graph_warnings"] = warnings
        cards = {v: scm.cards[v] for v in g.nodes}
        plan = make_training_plan(g)
        report.hgraph_stats.append(_hgraph_stats(plan, "asia-hidden"))
        h = plan.hgraph
        either = h.hnode_of("either")
        lung = h.hnode_of("lung")
        report.criteria["H-graph edge [either] -> [lung,dysp]"] = (
            h.hnodes[lung] == frozenset({"lung", "dysp"}) and (either, lung) in h.edges
        )
        report.criteria["no other H-graph edges"] = set(h.edges) == {(either, lung)}
        queries = [
            *(Query(f"P(dysp|do(lung={x}))", ("dysp",), (("lung", x),)) for x in range(cards["lung"])),
            *(Query(f"P(dysp|do(either={x}))", ("dysp",), (("either", x),)) for x in range(cards["either"])),
        ]
        truths = {q: _truth(scm, q) for q in queries}
        for x, y in (("lung", "dysp"), ("either", "dysp")):
            report.details[f"estimand P({y}|do({x}))"] = to_sexpr(id_algorithm(g, {x}, {y}))
        for mode in cfg["modes"]:
            data = _datasets(scm, [{}], [cfg["n_samples"]], cfg["seed"], mode, g.nodes)
            _train(report, g, cards, plan, data, truths, cfg, mode)
        _check_targets(report, queries)

    return _run("asia", cfg, body)


def run_surrogate_experiment(cfg: Mapping | None = None) -> ExperimentReport:
    """Observational plus do(PKA=2) data make PKA's effects learnable."""

    def body(report, cfg):
        scm = fixture_scm("surrogate")
        g = scm.graph
        labels = [{}, {"PKA": 2}]
        plan = make_training_plan(g, [(), ("PKA",)])
        report.hgraph_stats.append(_hgraph_stats(plan, "surrogate"))
        for y in ("Mek", "Erk", "Akt"):
            est = id_algorithm(g, {"PKA"}, {y})
            report.details[f"estimand P({y}|do(PKA))"] = to_sexpr(est)
            report.criteria[f"P({y}|do(PKA)) unidentifiable from P(V) alone"] = isinstance(
                est, Unidentifiable
            )
        queries = [
            Query("P(V)", g.nodes),
            Query("P(Akt|do(PKA=2))", ("Akt",), (("PKA", 2),)),
            Query("P(Erk|do(PKA=2))", ("Erk",), (("PKA", 2),)),
        ]
        truths = {q: _truth(scm, q) for q in queries}
        sizes = [cfg["n_samples"], cfg["n_interventional"]]
        for mode in cfg["modes"]:
            data = _datasets(scm, labels, sizes, cfg["seed"], mode, g.nodes)
            _train(report, g, scm.cards, plan, data, truths, cfg, mode)
        _check_targets(report, queries)

    return _run("surrogate", cfg, body)


EXPERIMENTS: dict[str, Callable[[Mapping | None], ExperimentReport]] = {
    "frontdoor": run_frontdoor_experiment,
    "diamond": run_diamond_experiment,
    "random-graphs": run_random_graph_experiment,
    "asia": run_asia_experiment,
    "surrogate": run_surrogate_experiment,
}


def run_experiment(name: str, cfg: Mapping | None = None) -> ExperimentReport:
    if name not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    return EXPERIMENTS[name](cfg)
