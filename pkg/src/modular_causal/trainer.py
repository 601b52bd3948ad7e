"""Stage-wise (modular) and joint training of a Dcm against datasets.

Each usable directive of a stage contributes

    sum_g w(g) * CE( P(target | g), Q(target | do(g)) )

where g ranges over settings of the conditioning parents plus intervened
variables, w is the data's marginal over g and P is the data conditional
(empirical or exact). Only the stage's hnode mechanisms move.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .dcm import Contraction, Dcm
from .distribution import Distribution, align
from .errors import NumericError, UntrainableError, ValidationError
from .hgraph import Directive, PlanStage, TrainingPlan
from .scm import Dataset

SMOOTHING = 1e-9

Source = Dataset | Distribution


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 0.05
    max_steps: int = 2000
    tolerance: float = 1e-3
    optimizer: str = "adam"  # "adam" or "lbfgs"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mode: str = "sample"  # "sample" or "exact"
    seed: int = 0
    analytic_init: bool = False
    restarts: int = 0
    restart_scale: float = 1.0
    eval_every: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if self.tolerance < 0:
            raise ValidationError("tolerance must be >= 0")
        if self.max_steps < 0:
            raise ValidationError("max_steps must be >= 0")
        if self.optimizer not in ("adam", "lbfgs"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.mode not in ("sample", "exact"):
            raise ValidationError(f"unknown mode {self.mode!r}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown config keys {sorted(extra)}")
        return cls(**d)


def empirical_conditional(
    d: Dataset, target: Sequence[str], given: Sequence[str]
) -> Distribution:
    """Frequency table P(target | given); slices never observed are NaN."""
    if len(d) == 0:
        raise ValidationError("empty dataset")
    target, given = tuple(target), tuple(given)
    counts = d.empirical_joint(given + target).table * len(d)
    k = int(np.prod([d.cards[v] for v in target], dtype=int))
    norm = counts.sum(axis=tuple(range(len(given), len(given) + len(target))), keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        table = (counts + SMOOTHING) / (norm + SMOOTHING * k)
    table = np.where(np.broadcast_to(norm > 0, table.shape), table, np.nan)
    return Distribution(target, d.cards, table, given, check=False)


@dataclass
class _Term:
    """One directive's matching problem, with data arrays on axes given + target."""

    label: frozenset[str]
    target: tuple[str, ...]
    given: tuple[str, ...]
    contraction: Contraction
    weight: np.ndarray  # over given axes
    p: np.ndarray  # P(target | given); zero where weight is zero
    entropy: float
    unseen: int = 0

    def evaluate(self, dcm: Dcm, wanted: Iterable[str] | None):
        q = np.array(self.contraction.forward(dcm))
        wp = self.p * self.weight.reshape(self.weight.shape + (1,) * len(self.target))
        with np.errstate(divide="ignore"):
            logq = np.log(q)
        ce = -float(np.sum(np.where(wp > 0, wp * logq, 0.0)))
        grads = None
        if wanted is not None:
            grad_q = np.where(wp > 0, -wp / q, 0.0)
            grads = self.contraction.backward(dcm, grad_q, wanted)
        n_given = int(np.prod(self.weight.shape, dtype=int))
        diff = 0.5 * np.abs(self.p - q).reshape(n_given, -1).sum(axis=1)
        seen = self.weight.reshape(-1) > 0
        tvd_max = float(diff[seen].max()) if seen.any() else 0.0
        tvd_weighted = float(np.dot(diff, self.weight.reshape(-1)))
        return ce, grads, tvd_max, tvd_weighted


def _as_joint(source: Source, variables: Sequence[str]) -> tuple[np.ndarray, int]:
    """Joint probabilities (or counts-based frequencies) over ``variables``."""
    if isinstance(source, Dataset):
        missing = [v for v in variables if v not in source.variables]
        if missing:
            raise UntrainableError(f"dataset lacks columns {missing}")
        return source.empirical_joint(variables).table, len(source)
    missing = [v for v in variables if v not in source.variables]
    if missing or source.given:
        raise UntrainableError(f"exact table lacks variables {missing}")
    return source.marginal(variables).reorder(tuple(variables)).table, 0


def _build_term(
    dcm: Dcm, label: frozenset[str], target: Sequence[str], given: Sequence[str], source: Source
) -> _Term:
    g = dcm.graph
    target, given = g.sort(target), g.sort(given)
    joint, n = _as_joint(source, given + target)
    t_axes = tuple(range(len(given), len(given) + len(target)))
    weight = joint.sum(axis=t_axes)
    k = int(np.prod([dcm.cards[v] for v in target], dtype=int))
    norm = weight.reshape(weight.shape + (1,) * len(target))
    with np.errstate(invalid="ignore", divide="ignore"):
        if n:  # empirical: additive smoothing on observed slices
            p = (joint * n + SMOOTHING) / (norm * n + SMOOTHING * k)
        else:
            p = joint / norm
    p = np.where(norm > 0, p, 0.0)
    entropy = -float(np.sum(np.where(p > 0, norm * p * np.log(np.where(p > 0, p, 1.0)), 0.0)))
    contraction = Contraction(dcm, target, given)
    return _Term(label, target, given, contraction, weight, p, entropy, int((weight == 0).sum()))


def _lookup(datasets: Mapping, label: frozenset[str]) -> Source:
    for key, src in datasets.items():
        if frozenset(key) == label:
            return src
    raise UntrainableError(f"no dataset for intervention label {sorted(label)}")


def _stage_terms(dcm: Dcm, stage: PlanStage, datasets: Mapping) -> list[_Term]:
    usable = stage.usable()
    if not usable:
        raise UntrainableError(f"stage {sorted(stage.hnode)} has no usable directive")
    return [
        _build_term(dcm, d.intervention, d.target(stage.hnode), d.given(), _lookup(datasets, d.intervention))
        for d in usable
    ]


@dataclass
class StageResult:
    hnode: tuple[str, ...]
    steps: int
    final: list[dict]
    trace: list[dict] = field(default_factory=list)
    seconds: float = 0.0

    def max_tvd(self) -> float:
        return max((r["tvd"] for r in self.final), default=0.0)

    def to_dict(self, with_trace: bool = False) -> dict:
        d = asdict(self)
        if not with_trace:
            d.pop("trace")
        return d


def _trainable_names(dcm: Dcm, variables: Iterable[str]) -> list[str]:
    vs = [v for v in dcm.graph.sort(variables) if v in dcm.trainable]
    names = list(vs)
    for u in dcm.confounders:
        a, b = dcm.confounder_endpoints(u)
        if a in vs and b in vs:
            names.append(u)
    return names


def _analytic_init(dcm: Dcm, terms: list[_Term], names: list[str]) -> Dcm:
    """Set logits of unconfounded variables to the log data conditional."""
    g = dcm.graph
    params = {}
    for v in names:
        if v not in g.index or g.spouses[v]:
            continue
        pa = g.parents[v]
        for t in terms:
            axes = t.given + t.target
            if v not in t.target or not set(pa) <= set(axes):
                continue
            joint = t.p * t.weight.reshape(t.weight.shape + (1,) * len(t.target))
            keep = [a for a in axes if a in set(pa) | {v}]
            drop = tuple(i for i, a in enumerate(axes) if a not in keep)
            sub = align(joint.sum(axis=drop), keep, list(pa) + [v])
            norm = sub.sum(axis=-1, keepdims=True)
            cond = np.where(norm > 0, sub / np.where(norm > 0, norm, 1.0), 1.0 / dcm.cards[v])
            logits = np.log(np.clip(cond, 1e-300, None))
            e_axis = len(pa)
            shape = dcm.logits[v].shape
            params[v] = np.broadcast_to(np.expand_dims(logits, e_axis), shape).copy()
            break
    return dcm.with_parameters(params) if params else dcm


def _summaries(terms: list[_Term], dcm: Dcm) -> list[dict]:
    rows = []
    for t in terms:
        ce, _, tmax, tw = t.evaluate(dcm, None)
        rows.append(
            {
                "label": sorted(t.label),
                "target": list(t.target),
                "given": list(t.given),
                "tvd": tmax,
                "tvd_weighted": tw,
                "ce": ce,
                "kl": ce - t.entropy,
                "unseen_slices": t.unseen,
            }
        )
    return rows


def _pack(params: Mapping[str, np.ndarray], names: Sequence[str]) -> np.ndarray:
    return np.concatenate([params[n].ravel() for n in names]) if names else np.zeros(0)


def _unpack(x: np.ndarray, like: Mapping[str, np.ndarray], names: Sequence[str]) -> dict:
    out, k = {}, 0
    for n in names:
        size = like[n].size
        out[n] = x[k : k + size].reshape(like[n].shape)
        k += size
    return out


class _Objective:
    def __init__(self, dcm: Dcm, terms: list[_Term], names: list[str]):
        self.base = dcm
        self.terms = terms
        self.names = names
        self.entropy = sum(t.entropy for t in terms)

    def __call__(self, params: Mapping[str, np.ndarray]):
        model = self.base.with_parameters(params)
        loss = 0.0
        grads = {n: np.zeros_like(params[n]) for n in self.names}
        stats = []
        for t in self.terms:
            ce, g, tmax, tw = t.evaluate(model, self.names)
            loss += ce
            for n, arr in g.items():
                grads[n] += arr
            stats.append((ce - t.entropy, tmax, tw))
        if not np.isfinite(loss):
            raise NumericError("training objective is not finite (learning-rate fault?)")
        return loss - self.entropy, grads, stats


def _trace_rows(step: int, stats, terms) -> list[dict]:
    return [
        {"step": step, "label": sorted(t.label), "kl": s[0], "tvd": s[1], "tvd_weighted": s[2]}
        for t, s in zip(terms, stats)
    ]


def _run_adam(obj: _Objective, params: dict, cfg: FitConfig, callback, trace):
    m = {n: np.zeros_like(params[n]) for n in obj.names}
    v = {n: np.zeros_like(params[n]) for n in obj.names}
    steps = 0
    for step in range(cfg.max_steps + 1):
        loss, grads, stats = obj(params)
        trace.extend(_trace_rows(step, stats, obj.terms))
        if callback is not None and cfg.eval_every and step % cfg.eval_every == 0:
            callback(step, obj.base.with_parameters(params))
        if max(s[1] for s in stats) <= cfg.tolerance or step == cfg.max_steps:
            break
        steps += 1
        t = step + 1
        for n in obj.names:
            g = grads[n]
            m[n] = cfg.beta1 * m[n] + (1 - cfg.beta1) * g
            v[n] = cfg.beta2 * v[n] + (1 - cfg.beta2) * g * g
            mhat = m[n] / (1 - cfg.beta1**t)
            vhat = v[n] / (1 - cfg.beta2**t)
            params[n] = params[n] - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
    return params, steps


def _run_lbfgs(obj: _Objective, params: dict, cfg: FitConfig, trace):
    like = {n: params[n] for n in obj.names}
    x0 = _pack(params, obj.names)
    state = {"step": 0}

    def fun(x):
        loss, grads, stats = obj(_unpack(x, like, obj.names))
        state["stats"] = stats
        return loss, _pack(grads, obj.names)

    def record(x):
        state["step"] += 1
        trace.extend(_trace_rows(state["step"], state["stats"], obj.terms))

    res = minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"maxiter": max(1, cfg.max_steps), "ftol": 1e-20, "gtol": 1e-14, "maxcor": 30},
    )
    return _unpack(res.x, like, obj.names), int(res.nit)


def _optimize(
    dcm: Dcm,
    terms: list[_Term],
    variables: Iterable[str],
    cfg: FitConfig,
    callback=None,
) -> tuple[Dcm, int, list[dict]]:
    names = _trainable_names(dcm, variables)
    trace: list[dict] = []
    if not names or cfg.max_steps == 0:
        return dcm, 0, trace
    if cfg.analytic_init:
        dcm = _analytic_init(dcm, terms, names)
    best, best_tvd, total_steps = dcm, np.inf, 0
    start = dcm
    rng = np.random.default_rng(cfg.seed)
    for attempt in range(cfg.restarts + 1):
        obj = _Objective(start, terms, names)
        params = {n: start.parameters()[n].copy() for n in names}
        _, _, stats = obj(params)
        if max(s[1] for s in stats) <= cfg.tolerance:
            model = start
            steps = 0
            trace.extend(_trace_rows(0, stats, terms))
        else:
            if cfg.optimizer == "adam":
                params, steps = _run_adam(obj, params, cfg, callback, trace)
            else:
                params, steps = _run_lbfgs(obj, params, cfg, trace)
            model = start.with_parameters(params)
        total_steps += steps
        tvd_now = max(r["tvd"] for r in _summaries(terms, model))
        if tvd_now < best_tvd:
            best, best_tvd = model, tvd_now
        if best_tvd <= cfg.tolerance:
            break
        # restart: redraw the confounded mechanisms and confounder priors
        fresh = {}
        g = dcm.graph
        for n in names:
            if n in g.index and not g.spouses[n] and cfg.analytic_init:
                fresh[n] = best.parameters()[n]
            else:
                fresh[n] = cfg.restart_scale * rng.standard_normal(dcm.parameters()[n].shape)
        start = dcm.with_parameters(fresh)
    return best, total_steps, trace


def fit_stage(
    dcm: Dcm,
    stage: PlanStage,
    datasets: Mapping,
    cfg: FitConfig = FitConfig(),
    callback: Callable[[int, Dcm], None] | None = None,
) -> tuple[Dcm, StageResult]:
    """Fit the mechanisms of ``stage.hnode``; everything else stays bit-identical."""
    t0 = time.perf_counter()
    terms = _stage_terms(dcm, stage, datasets)
    model, steps, trace = _optimize(dcm, terms, stage.hnode, cfg, callback)
    result = StageResult(
        tuple(dcm.graph.sort(stage.hnode)),
        steps,
        _summaries(terms, model),
        trace,
        time.perf_counter() - t0,
    )
    return model, result


@dataclass
class TrainReport:
    stages: list[StageResult] = field(default_factory=list)
    seconds: float = 0.0

    def to_dict(self, with_trace: bool = False) -> dict:
        return {
            "stages": [s.to_dict(with_trace) for s in self.stages],
            "seconds": self.seconds,
        }

    def max_tvd(self) -> float:
        return max((s.max_tvd() for s in self.stages), default=0.0)


def _merge(base: Dcm, fitted: Dcm, hnode: Iterable[str]) -> Dcm:
    names = _trainable_names(base, hnode)
    return base.with_parameters({n: fitted.parameters()[n] for n in names}) if names else base


def modular_train(
    dcm: Dcm,
    plan: TrainingPlan,
    datasets: Mapping,
    cfg: FitConfig = FitConfig(),
    workers: int = 1,
    callback: Callable[[PlanStage, int, Dcm], None] | None = None,
) -> tuple[Dcm, TrainReport]:
    """Run every stage in plan order; stages of one level may run in parallel."""
    t0 = time.perf_counter()
    report = TrainReport()
    model = dcm
    for level in plan.levels():

        def run(stage, start=model):
            cb = None if callback is None else (lambda step, m, s=stage: callback(s, step, m))
            try:
                return fit_stage(start, stage, datasets, cfg, cb)
            except (UntrainableError, NumericError) as exc:
                raise type(exc)(f"stage {sorted(stage.hnode)}: {exc}") from exc

        if workers > 1 and len(level) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, level))
        else:
            results = [run(stage) for stage in level]
        for stage, (fitted, res) in zip(level, results):
            model = _merge(model, fitted, stage.hnode)
            report.stages.append(res)
    report.seconds = time.perf_counter() - t0
    return model, report


def joint_train(
    dcm: Dcm,
    datasets: Mapping,
    cfg: FitConfig = FitConfig(),
    callback: Callable[[int, Dcm], None] | None = None,
) -> tuple[Dcm, TrainReport]:
    """Baseline: every mechanism at once, matching each dataset's full joint."""
    t0 = time.perf_counter()
    g = dcm.graph
    terms = []
    for label, src in datasets.items():
        label = g.check(label)
        cols = src.variables
        target = [v for v in cols if v not in label]
        given = [v for v in cols if v in label]
        terms.append(_build_term(dcm, label, target, given, src))
    if not terms:
        raise UntrainableError("joint training needs at least one dataset")
    model, steps, trace = _optimize(dcm, terms, g.nodes, cfg, callback)
    res = StageResult(g.nodes, steps, _summaries(terms, model), trace, time.perf_counter() - t0)
    return model, TrainReport([res], time.perf_counter() - t0)


EXACT_FIT = FitConfig(
    mode="exact",
    optimizer="lbfgs",
    tolerance=1e-8,
    max_steps=3000,
    analytic_init=True,
    restarts=4,
)


def exact_fit_stage(
    dcm: Dcm,
    stage: PlanStage,
    true_joint_per_label: Mapping,
    cfg: FitConfig = EXACT_FIT,
) -> Dcm:
    """Solve the stage's matching problems to numerical optimality."""
    model, _ = fit_stage(dcm, stage, true_joint_per_label, cfg)
    return model


def exact_fit(dcm: Dcm, plan: TrainingPlan, true_joint_per_label: Mapping,
              cfg: FitConfig = EXACT_FIT) -> tuple[Dcm, TrainReport]:
    return modular_train(dcm, plan, true_joint_per_label, cfg)
