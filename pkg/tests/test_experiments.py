import csv
import io
import json

import pytest

from modular_causal.errors import ValidationError
from modular_causal.experiments import DEFAULTS, EXPERIMENTS, merge_config, run_experiment


@pytest.fixture(scope="module")
def reports():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = run_experiment(name)
        return cache[name]

    return get


@pytest.mark.parametrize("name", sorted(EXPERIMENTS))
def test_experiment_passes_its_criteria(reports, name):
    report = reports(name)
    assert report.criteria, "every experiment declares criteria"
    failed = [k for k, ok in report.criteria.items() if not ok]
    assert not failed, report.summary()


def test_frontdoor_is_deterministic(reports):
    again = run_experiment("frontdoor")
    assert again.to_json() == reports("frontdoor").to_json()


def test_frontdoor_report_contents(reports):
    report = reports("frontdoor")
    queries = {m["query"] for m in report.metrics}
    assert queries == {"P(D,A)", "P(A|do(D=0))", "P(A|do(D=1))"}
    assert all(m["tvd"] < 0.05 for m in report.metrics)
    rows = list(csv.DictReader(io.StringIO(report.curves_csv())))
    assert rows and set(rows[0]) == {"run", "mode", "stage", "step", "query", "tvd"}
    assert "runtime" not in json.loads(report.to_json())


def test_random_graph_table(reports):
    report = reports("random-graphs")
    sizes = sorted({row["nodes"] for row in report.hgraph_stats})
    assert sizes == DEFAULTS["random-graphs"]["sizes"]
    for n in sizes:
        rows = [r for r in report.hgraph_stats if r["nodes"] == n]
        assert len(rows) == DEFAULTS["random-graphs"]["seeds_per_size"]
        assert all(r["max_hnode_size"] <= n for r in rows)
    trend = report.details["trend"]
    assert [row["nodes"] for row in trend] == sizes
    assert all(row["mean_max_hnode_size"] < row["nodes"] for row in trend)


def test_write_outputs(reports, tmp_path):
    report = reports("random-graphs")
    js, cs = report.write(tmp_path)
    doc = json.loads(open(js).read())
    assert doc["name"] == "random-graphs" and "runtime_seconds" in doc
    assert open(cs).readline().strip() == "run,mode,stage,step,query,tvd"


def test_config_validation():
    with pytest.raises(ValidationError, match="unknown experiment"):
        run_experiment("nope")
    with pytest.raises(ValidationError):
        merge_config("frontdoor", {"bogus": 1})
    assert merge_config("frontdoor", {"seed": 3})["seed"] == 3


def test_small_frontdoor_config_changes_results():
    small = run_experiment("frontdoor", {"n_samples": 2000, "seed": 1})
    assert small.config["n_samples"] == 2000
    assert small.metrics
