import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import PROPERTY, random_instance
from modular_causal.errors import NumericError, ValidationError
from modular_causal.fixtures import SCM_FIXTURES, fixture_scm
from modular_causal.graph import Admg
from modular_causal.metrics import tvd
from modular_causal.scm import (
    enumeration_cost,
    format_scm,
    parse_scm,
    random_scm,
    read_dataset,
    scm_do_conditional,
    scm_exact_joint,
    scm_from_cpts,
    scm_interventional_oracle,
    scm_sample,
)

TINY = """\
graph:
  node X
  node Y
  X -> Y
card:
  X 2
  Y 2
noise:
  E.X 2 0.3 0.7
mech: X <- E.X
  0 -> 0
  1 -> 1
mech: Y <- X
  0 -> 1
  1 -> 0
"""


def test_parse_tiny_and_round_trip():
    scm = parse_scm(TINY)
    assert scm.variables == ("X", "Y")
    joint = scm_exact_joint(scm)
    assert np.allclose(joint.table, [[0.0, 0.3], [0.7, 0.0]])
    again = parse_scm(format_scm(scm))
    assert format_scm(again) == format_scm(scm)


@pytest.mark.parametrize("name", SCM_FIXTURES)
def test_fixture_round_trip_preserves_joint(name):
    scm = fixture_scm(name)
    again = parse_scm(format_scm(scm))
    assert np.allclose(scm_exact_joint(scm).table, scm_exact_joint(again).table, rtol=0, atol=1e-15)


@pytest.mark.parametrize(
    "edit, message",
    [
        (lambda t: t.replace("  1 -> 0\n", ""), "not total"),
        (lambda t: t.replace("0.3 0.7", "0.3 0.6"), "probability vector"),
        (lambda t: t.replace("  1 -> 0\n", "  1 -> 5\n"), "out of range"),
        (lambda t: t.replace("mech: Y <- X", "mech: Y <- E.Y"), "graph implies"),
        (lambda t: t.replace("  Y 2\n", ""), "no cardinality"),
        (lambda t: t.replace("  0 -> 1\n", "  0 -> 1\n  0 -> 0\n"), "duplicate row"),
        (lambda t: "junk\n" + t, "line 1"),
    ],
)
def test_parse_errors(edit, message):
    with pytest.raises(ValidationError, match=message):
        parse_scm(edit(TINY))


def test_frontdoor_interventional_values_by_hand():
    # A = 0 only when U = 0 and [I >= 4] equals E.A; I >= 4 is D xor [E.I >= 4].
    # The constants below are read off the fixture's noise lines.
    p_u0, p_ea1, p_hi = 0.65, 0.15, 0.05 + 0.04 + 0.03 + 0.03
    for d in (0, 1):
        p_i_hi = p_hi if d == 0 else 1 - p_hi
        p_a0 = p_u0 * ((1 - p_i_hi) * (1 - p_ea1) + p_i_hi * p_ea1)
        got = scm_interventional_oracle(fixture_scm("frontdoor"), {"D": d}, ["A"])
        assert got.table[1] == pytest.approx(1 - p_a0, abs=1e-12)
    assert 1 - 0.65 * 0.745 == pytest.approx(0.51575)
    assert 1 - 0.65 * 0.255 == pytest.approx(0.83425)


def test_intervention_validation():
    scm = parse_scm(TINY)
    with pytest.raises(ValidationError, match="outside"):
        scm_exact_joint(scm, {"X": 2})
    with pytest.raises(ValidationError, match="unknown"):
        scm_exact_joint(scm, {"Q": 0})
    with pytest.raises(ValidationError, match="both"):
        scm_exact_joint(scm, {"X": 0}, randomize=["X"])
    with pytest.raises(NumericError, match="cap"):
        scm_exact_joint(scm, cap=2)


def test_randomize_is_uniform():
    joint = scm_exact_joint(parse_scm(TINY), randomize=["X"])
    assert np.allclose(joint.table, [[0.0, 0.5], [0.5, 0.0]])
    assert enumeration_cost(parse_scm(TINY), ["X"]) == 2 * 2 * 2 * 2


@PROPERTY
@given(st.integers(0, 10_000))
def test_exact_joint_is_normalized(seed):
    g, scm = random_instance(seed)
    joint = scm_exact_joint(scm)
    assert joint.table.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(joint.table > 0)  # onto mechanisms keep full support
    v = g.nodes[0]
    do = scm_exact_joint(scm, {v: 1})
    want = np.zeros(scm.cards[v])
    want[1] = 1.0
    assert np.allclose(do.marginal([v]).table, want, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_sampling_converges_to_exact(seed):
    g, scm = random_instance(seed, max_nodes=4)
    data = scm_sample(scm, 60_000, seed=seed)
    assert tvd(data.empirical_joint(g.nodes), scm_exact_joint(scm)) < 0.03
    do = scm_sample(scm, 60_000, {g.nodes[-1]: 0}, seed=seed)
    assert np.all(do.column(g.nodes[-1]) == 0)
    assert tvd(do.empirical_joint(g.nodes), scm_exact_joint(scm, {g.nodes[-1]: 0})) < 0.03


def test_sampling_is_seeded():
    scm = fixture_scm("frontdoor")
    a = scm_sample(scm, 500, seed=3)
    b = scm_sample(scm, 500, seed=3)
    assert np.array_equal(a.rows, b.rows)
    assert not np.array_equal(a.rows, scm_sample(scm, 500, seed=4).rows)


def test_dataset_csv_round_trip(tmp_path):
    scm = fixture_scm("frontdoor")
    data = scm_sample(scm, 200, {"D": 1}, seed=7)
    path = tmp_path / "d.csv"
    data.write_csv(path)
    back = read_dataset(path)
    assert back.variables == data.variables
    assert np.array_equal(back.rows, data.rows)
    assert dict(back.intervention) == {"D": 1} and back.seed == 7
    assert back.label == frozenset({"D"})
    assert back.select(["A"]).variables == ("A",)


def test_dataset_errors(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("A\n0\n")
    with pytest.raises(ValidationError, match="manifest"):
        read_dataset(path)
    scm = fixture_scm("frontdoor")
    data = scm_sample(scm, 10, seed=0)
    with pytest.raises(ValidationError, match="no columns"):
        data.select(["Q"])
    with pytest.raises(ValidationError, match="n >= 1"):
        scm_sample(scm, 0)


def test_scm_from_cpts_reproduces_tables():
    g = Admg.build(["A", "B", "C"], [("A", "B"), ("A", "C"), ("B", "C")])
    cards = {"A": 2, "B": 3, "C": 2}
    rng = np.random.default_rng(0)
    cpts = {
        "A": rng.dirichlet(np.ones(2)),
        "B": rng.dirichlet(np.ones(3), size=2),
        "C": rng.dirichlet(np.ones(2), size=(2, 3)),
    }
    joint = scm_exact_joint(scm_from_cpts(g, cards, cpts))
    for a, b, c in itertools.product(range(2), range(3), range(2)):
        want = cpts["A"][a] * cpts["B"][a, b] * cpts["C"][a, b, c]
        assert joint.table[a, b, c] == pytest.approx(want, abs=1e-12)
    with pytest.raises(ValidationError, match="bidirected"):
        scm_from_cpts(Admg.build("AB", [], [("A", "B")]), {"A": 2, "B": 2}, {})


def test_do_conditional_rows_are_interventions():
    g, scm = random_scm(4, 11)
    v, w = g.nodes[0], g.nodes[1]
    table = scm_do_conditional(scm, [w], [v])
    for x in range(scm.cards[v]):
        want = scm_interventional_oracle(scm, {v: x}, [w])
        assert np.allclose(table.slice({v: x}).table, want.table)
