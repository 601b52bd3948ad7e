import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import PROPERTY, admgs, random_instance
from modular_causal.errors import UntrainableError, ValidationError
from modular_causal.fixtures import (
    long_graph,
    bow_graph,
    diamond_graph,
    two_comp_graph,
    frontdoor_graph,
)
from modular_causal.graph import Admg, graph_do, parents_of_set, rule2_holds
from modular_causal.hgraph import (
    HGraph,
    TrainingPlan,
    ancestor_set_greedy,
    ancestor_set_minimal,
    construct_hgraph,
    construct_hgraph_interventional,
    hgraph_to_text,
    make_training_plan,
    partial_order,
)
from modular_causal.scm import random_admg, scm_do_conditional, scm_exact_joint


def _sets(levels):
    return [[set(h) for h in lvl] for lvl in levels]


def test_frontdoor_hgraph():
    h = construct_hgraph(frontdoor_graph())
    assert [set(x) for x in h.hnodes] == [{"I"}, {"D", "A"}]
    assert h.edges == ((0, 1),)
    assert _sets(partial_order(h)) == [[{"I"}], [{"D", "A"}]]


def test_two_comp_hgraph():
    h = construct_hgraph(two_comp_graph())
    assert [set(x) for x in h.hnodes] == [{"Z1", "Z2", "Z3"}, {"X1", "X2"}]
    assert h.edges == ((0, 1),)


def test_diamond_hgraph():
    h = construct_hgraph(diamond_graph())
    assert _sets(partial_order(h)) == [[{"I2"}], [{"I1", "D", "C"}]]


def test_cycle_is_merged():
    # X1 -> Z1 -> X2 and Z1 <-> ... makes components point at each other
    g = Admg.build(["A", "B", "C", "D"], [("A", "C"), ("C", "B"), ("B", "D")], [("A", "B"), ("C", "D")])
    h = construct_hgraph(g)
    assert h.is_acyclic()
    assert [set(x) for x in h.hnodes] == [{"A", "B", "C", "D"}]


def test_edgeless_partial_order_single_level():
    g = Admg.build(["A", "B", "C"], [], [("A", "B")])
    assert _sets(partial_order(construct_hgraph(g))) == [[{"A", "B"}, {"C"}]]


def test_partial_order_rejects_cycles():
    g = Admg.build(["A", "B"])
    h = HGraph((frozenset("A"), frozenset("B")), ((0, 1), (1, 0)), g, frozenset(), (), ())
    with pytest.raises(ValidationError, match="cycle"):
        partial_order(h)


def test_long_hgraph():
    g = long_graph()
    h = construct_hgraph(g)
    idx = {frozenset(x): k for k, x in enumerate(h.hnodes)}
    h2 = idx[frozenset({"8", "9"})]
    h5 = idx[frozenset({"14", "16"})]
    h6 = idx[frozenset({"17", "18", "19", "20", "21", "22"})]
    h7 = idx[frozenset({"23", "24", "25", "26", "27"})]
    assert {(h2, h5), (h2, h6), (h5, h7), (h6, h7)} <= set(h.edges)
    level = {frozenset(x): k for k, lvl in enumerate(partial_order(h)) for x in lvl}
    assert level[h.hnodes[h2]] < level[h.hnodes[h5]] < level[h.hnodes[h7]]
    assert level[h.hnodes[h6]] < level[h.hnodes[h7]]
    hi = construct_hgraph_interventional(g, {"17"}, h)
    pieces = {c for c in hi.components if c <= h.hnodes[h6]}
    assert pieces == {frozenset({"17"}), frozenset({"18", "19"}), frozenset({"20", "21", "22"})}
    assert hi.hnodes == h.hnodes


def test_interventional_hgraph_two_comp():
    g = two_comp_graph()
    h = construct_hgraph(g)
    hi = construct_hgraph_interventional(g, {"Z1"}, h)
    assert hi.hnodes == h.hnodes
    assert set(hi.edges) <= set(h.edges)
    assert construct_hgraph_interventional(g, set(), h).edges == h.edges


def test_ancestor_sets_examples():
    assert ancestor_set_greedy(frontdoor_graph(), {"D", "A"}) == {"I"}
    assert ancestor_set_minimal(frontdoor_graph(), {"D", "A"}) == {"I"}
    assert ancestor_set_greedy(two_comp_graph(), {"X1", "X2"}) == {"Z1", "Z3"}
    assert ancestor_set_minimal(two_comp_graph(), {"X1", "X2"}, {"Z1"}) == set()
    assert ancestor_set_greedy(frontdoor_graph(), {"D"}) == set()
    assert ancestor_set_minimal(frontdoor_graph(), {"I"}) == set()


def test_minimal_search_cap():
    names = [f"V{i}" for i in range(6)]
    g = Admg.build(names + ["T"], [(v, "T") for v in names], [("V0", "T")])
    with pytest.raises(UntrainableError, match="cap"):
        ancestor_set_minimal(g, {"T"}, cap=3)


def test_frontdoor_plan():
    plan = make_training_plan(frontdoor_graph())
    assert [[set(s.hnode) for s in lvl] for lvl in plan.levels()] == [[{"I"}], [{"D", "A"}]]
    first, second = plan.stages
    (d1,) = first.usable()
    assert d1.target(first.hnode) == {"I"} and d1.given() == {"D"}
    (d2,) = second.usable()
    assert d2.ancestor_set == {"I"}
    assert d2.target(second.hnode) == {"D", "A", "I"} and d2.given() == set()


def test_two_comp_plan_with_interventional_dataset():
    plan = make_training_plan(two_comp_graph(), [(), ("Z1",)])
    z, x = plan.stages
    assert {d.intervention for d in z.usable()} == {frozenset(), frozenset({"Z1"})}
    assert all(d.ancestor_set == set() for d in z.usable())
    (only,) = x.usable()
    assert only.intervention == {"Z1"} and only.ancestor_set == set()


def test_single_node_plan():
    plan = make_training_plan(Admg.build(["A"]))
    (stage,) = plan.stages
    (d,) = stage.directives
    assert d.ancestor_set == set() and d.conditioning_parents == set()


def test_descendant_intervention_skipped():
    g = Admg.build(["A", "B"], [("A", "B")])
    plan = make_training_plan(g, [(), ("B",)])
    a_stage = plan.stages[0]
    skipped = [d for d in a_stage.directives if d.intervention == {"B"}]
    assert skipped and not skipped[0].usable and "descendants" in skipped[0].reason


def test_plan_untrainable_without_usable_dataset():
    g = Admg.build(["A", "B"], [("A", "B")])
    with pytest.raises(UntrainableError, match="no usable dataset"):
        make_training_plan(g, [("B",)])


def test_observed_columns_gate_directives():
    g = frontdoor_graph()
    with pytest.raises(UntrainableError, match="lacks columns"):
        make_training_plan(g, [()], observed={(): ["D", "A"]})


def test_plan_json_round_trip():
    plan = make_training_plan(two_comp_graph(), [(), ("Z1",)])
    again = TrainingPlan.from_json(plan.to_json())
    assert again == plan
    assert again.to_json() == plan.to_json()
    with pytest.raises(ValidationError, match="malformed"):
        TrainingPlan.from_json("{}")


def test_hgraph_text_lists_hnodes():
    text = hgraph_to_text(construct_hgraph(frontdoor_graph()))
    assert "# hnode: H0 = I" in text and "H0 -> H1" in text


def test_interventional_edge_against_order_is_harmless():
    # Under do(V7) the cut edge V0 -> V7 shrinks the parent set that the edge
    # test conditions on, and V8 <-> V0 -> V3 -> V6 then adds H4 -> H3, which
    # runs against the H-graph order. Plans stay sound because directives
    # test the whole parent set of H ∪ A.
    rng = np.random.default_rng(271)
    n = int(rng.integers(3, 11))
    g = random_admg(n, rng, arc_count=int(rng.integers(n - 1, 2 * n)), latent_count=int(rng.integers(0, 5)))
    h = construct_hgraph(g)
    hi = construct_hgraph_interventional(g, {"V7"}, h)
    k3 = h.hnode_of("V7")
    k4 = h.hnode_of("V8")
    assert (k3, k4) in h.edges and (k4, k3) in hi.edges
    plan = make_training_plan(g, [(), ("V7",)])
    for st_ in plan.stages:
        for d in st_.usable():
            assert rule2_holds(g, (st_.hnode | d.ancestor_set) - d.intervention, d.intervention)


@PROPERTY
@given(admgs(max_nodes=7, max_bidirected=4))
def test_hgraph_is_acyclic_partition(g):
    h = construct_hgraph(g)
    assert h.is_acyclic()
    assert sorted(v for x in h.hnodes for v in x) == sorted(g.nodes)
    assert all(a < b for a, b in h.edges)  # hnodes are stored topologically


@PROPERTY
@given(admgs(max_nodes=7, max_bidirected=4))
def test_ancestor_sets_pass_rule2_and_minimal_not_larger(g):
    for hnode in construct_hgraph(g).hnodes:
        greedy = ancestor_set_greedy(g, hnode)
        minimal = ancestor_set_minimal(g, hnode)
        assert rule2_holds(g, hnode | greedy)
        assert rule2_holds(g, hnode | minimal)
        assert len(minimal) <= len(greedy)


@PROPERTY
@given(admgs(max_nodes=7, max_bidirected=4), st.data())
def test_plan_covers_every_variable_once(g, data):
    labels = [()] + [(data.draw(st.sampled_from(g.nodes)),)]
    plan = make_training_plan(g, labels)
    seen = [v for s in plan.stages for v in s.hnode]
    assert sorted(seen) == sorted(g.nodes)
    trained = set()
    for level in plan.levels():
        for stage in level:
            for d in stage.usable():
                assert d.ancestor_set <= trained
                assert rule2_holds(g, (stage.hnode | d.ancestor_set) - d.intervention, d.intervention)
        trained |= {v for s in level for v in s.hnode}


@PROPERTY
@given(admgs(max_nodes=7, max_bidirected=4), st.data())
def test_interventional_hgraph_keeps_hnodes(g, data):
    h = construct_hgraph(g)
    i = data.draw(st.sets(st.sampled_from(g.nodes), max_size=2))
    hi = construct_hgraph_interventional(g, i, h)
    assert hi.hnodes == h.hnodes
    assert sorted(v for c in hi.components for v in c) == sorted(g.nodes)


@pytest.mark.parametrize("seed", range(15))
def test_directive_conditional_equals_interventional(seed):
    g, scm = random_instance(seed, max_nodes=5, max_bidirected=2, max_card=2)
    labels = [()] + [(v,) for v in g.nodes[:2]]
    plan = make_training_plan(g, labels)
    for stage in plan.stages:
        for d in stage.usable():
            target = g.sort(d.target(stage.hnode))
            pa = g.sort(d.conditioning_parents - d.intervention)
            inter = {v: 0 for v in d.intervention}
            joint = scm_exact_joint(scm, inter)
            cond = joint.conditional(target, pa)
            do = scm_do_conditional(scm, target, pa, inter)
            assert np.allclose(cond.reorder(do.variables, do.given).table, do.table, atol=1e-9)


def test_bow_graph_is_one_hnode():
    h = construct_hgraph(bow_graph())
    assert [set(x) for x in h.hnodes] == [{"X", "Y"}]
    assert parents_of_set(graph_do(bow_graph(), {"X"}), {"Y"}) == {"X"}
