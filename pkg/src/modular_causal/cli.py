"""Command-line entry point ``modular-causal``.

Exit codes: 0 ok, 1 usage, 2 validation, 3 unidentifiable or untrainable,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from typing import Sequence

from .dcm import dcm_exact_distribution, dcm_forward_sample, dcm_init, load_checkpoint, save_checkpoint
from .errors import ModularCausalError, ValidationError
from .experiments import EXPERIMENTS, run_experiment
from .graph import Admg, c_components, has_latents, parse_admg, split_non_markovian
from .hgraph import TrainingPlan, construct_hgraph, hgraph_to_text, make_training_plan, partial_order
from .identify import Unidentifiable, id_algorithm, to_sexpr
from .metrics import kl, tvd
from .scm import load_scm, read_dataset, scm_interventional_oracle, scm_sample
from .trainer import FitConfig, modular_train

USAGE_EXIT = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _read(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from exc


def _load_graph(path: str) -> Admg:
    text = _read(path)
    if has_latents(text):
        g, warnings = split_non_markovian(text)
        for w in warnings:
            print(f"warning: {w}", file=sys.stderr)
        return g
    return parse_admg(text)


def _names(g: Admg, s) -> str:
    return "{" + ",".join(g.sort(s)) + "}"


def _assignment(items: Sequence[str] | None) -> dict[str, int]:
    """Parse ``V=x`` items (commas allowed) into an assignment."""
    out = {}
    for item in items or ():
        for part in filter(None, item.split(",")):
            name, sep, value = part.partition("=")
            if not sep:
                raise ValidationError(f"expected NAME=VALUE, got {part!r}")
            try:
                out[name.strip()] = int(value)
            except ValueError as exc:
                raise ValidationError(f"non-integer value in {part!r}") from exc
    return out


def _name_list(items: Sequence[str] | None) -> list[str]:
    """Parse ``V`` or ``V=x`` items (commas allowed) into names."""
    out = []
    for item in items or ():
        for part in filter(None, item.split(",")):
            out.append(part.partition("=")[0].strip())
    return out


# ---------------------------------------------------------------- subcommands


def cmd_analyze(args) -> int:
    g = _load_graph(args.graph)
    print("c-components:")
    for comp in c_components(g):
        print(f"  {_names(g, comp)}")
    h = construct_hgraph(g)
    print("h-graph:")
    for line in hgraph_to_text(h).splitlines():
        print(f"  {line}")
    print("partial order:")
    for k, level in enumerate(partial_order(h)):
        print(f"  level {k}: " + " ".join(_names(g, hn) for hn in level))
    return 0


def cmd_plan(args) -> int:
    g = _load_graph(args.graph)
    labels = [()] + [tuple(_name_list([lab])) for lab in args.do or ()]
    plan = make_training_plan(g, labels)
    text = plan.to_json()
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
        for st in plan.stages:
            used = [_names(g, d.intervention) for d in st.usable()]
            print(f"level {st.level}: {_names(g, st.hnode)} from {' '.join(used)}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_identify(args) -> int:
    g = _load_graph(args.graph)
    x, y = _name_list(args.do), _name_list(args.target)
    est = id_algorithm(g, x, y)
    if isinstance(est, Unidentifiable):
        print(f"UNIDENTIFIABLE hedge F={_names(g, est.forest)} F'={_names(g, est.subforest)}")
        return 3
    print(to_sexpr(est, g.index))
    return 0


def cmd_simulate(args) -> int:
    scm = load_scm(args.scm)
    data = scm_sample(scm, args.n, _assignment(args.do), seed=args.seed, randomize=_name_list(args.randomize))
    if args.columns:
        data = data.select(_name_list(args.columns))
    data.write_csv(args.output)
    print(f"wrote {len(data)} rows to {args.output}")
    return 0


_EXTRA_TRAIN_KEYS = {"init_seed", "noise_cards", "workers"}


def cmd_train(args) -> int:
    *data_paths, config_path = args.inputs
    if not data_paths:
        raise ValidationError("train needs at least one dataset and a config file")
    plan = TrainingPlan.from_json(_read(args.plan))
    try:
        raw = json.loads(_read(config_path))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed config {config_path}: {exc}") from exc
    extra = {k: raw.pop(k) for k in list(raw) if k in _EXTRA_TRAIN_KEYS}
    cfg = FitConfig.from_dict(raw)
    datasets, cards = {}, {}
    for path in data_paths:
        d = read_dataset(path)
        if d.label in datasets:
            raise ValidationError(f"two datasets share intervention label {sorted(d.label)}")
        datasets[d.label] = d
        cards.update(d.cards)
    g = plan.graph
    dcm = dcm_init(g, cards, extra.get("noise_cards"), seed=int(extra.get("init_seed", 0)))
    model, report = modular_train(dcm, plan, datasets, cfg, workers=int(extra.get("workers", 1)))
    save_checkpoint(model, args.output)
    for st in report.stages:
        print(f"stage {_names(g, st.hnode)} steps={st.steps}")
        for r in st.final:
            print(
                f"  directive do{_names(g, r['label'])}: tvd={r['tvd']:.4g} "
                f"kl={r['kl']:.4g} ce={r['ce']:.4g} unseen_slices={r['unseen_slices']}"
            )
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"checkpoint written to {args.output}")
    return 0


def cmd_sample(args) -> int:
    dcm = load_checkpoint(args.checkpoint)
    data = dcm_forward_sample(dcm, args.n, _assignment(args.do), seed=args.seed)
    if args.output:
        data.write_csv(args.output)
        print(f"wrote {len(data)} rows to {args.output}")
    else:
        print(",".join(data.variables))
        for row in data.rows:
            print(",".join(str(int(x)) for x in row))
    return 0


_QUERY_RE = re.compile(r"^\s*([^|]+?)\s*(?:\|\s*do\((.*)\)\s*)?$")


def parse_query(text: str) -> tuple[list[str], dict[str, int]]:
    """``Y1,Y2`` or ``Y1,Y2|do(X=0,Z=1)``."""
    m = _QUERY_RE.match(text)
    if not m:
        raise ValidationError(f"malformed query {text!r}")
    target = [t.strip() for t in m.group(1).split(",") if t.strip()]
    return target, _assignment([m.group(2)] if m.group(2) else [])


def cmd_evaluate(args) -> int:
    scm = load_scm(args.scm)
    dcm = load_checkpoint(args.checkpoint)
    queries = args.queries or [",".join(dcm.graph.nodes)]
    for q in queries:
        target, do = parse_query(q)
        p = scm_interventional_oracle(scm, do, target)
        m = dcm_exact_distribution(dcm, target, intervention=do).reorder(p.variables)
        print(f"{q}: tvd={tvd(p, m):.6g} kl={kl(p, m):.6g}")
    return 0


def cmd_experiment(args) -> int:
    cfg = None
    if args.config:
        try:
            cfg = json.loads(_read(args.config))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed config {args.config}: {exc}") from exc
    report = run_experiment(args.name, cfg)
    print(report.summary())
    if args.out:
        paths = report.write(args.out)
        print("wrote " + " ".join(paths))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="modular-causal", description="Modular training of discrete causal models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("analyze", help="c-components, H-graph and training order of a graph")
    s.add_argument("graph")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("plan", help="training plan as JSON")
    s.add_argument("graph")
    s.add_argument("--do", action="append", metavar="VARS", help="interventional dataset label")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("identify", help="estimand for P(target | do(X)) or a hedge")
    s.add_argument("graph")
    s.add_argument("--do", action="append", required=True, metavar="X[=x]")
    s.add_argument("--target", action="append", required=True, metavar="Y")
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("simulate", help="sample rows from an SCM file")
    s.add_argument("scm")
    s.add_argument("-n", type=int, required=True)
    s.add_argument("--do", action="append", metavar="V=x")
    s.add_argument("--randomize", action="append", metavar="V")
    s.add_argument("--columns", action="append", metavar="V", help="keep only these columns")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="modular training: train PLAN DATA... CONFIG")
    s.add_argument("plan")
    s.add_argument("inputs", nargs="+", metavar="DATA... CONFIG")
    s.add_argument("-o", "--output", required=True, help="checkpoint path")
    s.add_argument("--report", help="write the training report as JSON")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="sample rows from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("-n", type=int, required=True)
    s.add_argument("--do", action="append", metavar="V=x")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("evaluate", help="compare a checkpoint with the SCM that made its data")
    s.add_argument("checkpoint")
    s.add_argument("scm")
    s.add_argument("--queries", nargs="+", metavar="Q", help="e.g. 'A|do(D=0)' or 'D,A'")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("experiment", help="run a bundled experiment")
    s.add_argument("name", choices=sorted(EXPERIMENTS))
    s.add_argument("--config", help="JSON overrides of the experiment defaults")
    s.add_argument("--out", help="directory for the report JSON and curves CSV")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModularCausalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
