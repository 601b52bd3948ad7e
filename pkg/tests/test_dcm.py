import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import SLOW_PROPERTY, random_instance
from modular_causal.dcm import (
    Contraction,
    checkpoint_dict,
    dcm_exact_distribution,
    dcm_forward_sample,
    dcm_init,
    dcm_set_trainable,
    load_checkpoint,
    save_checkpoint,
    softmax,
)
from modular_causal.errors import NumericError, ValidationError
from modular_causal.fixtures import diamond_graph, frontdoor_graph
from modular_causal.graph import Admg
from modular_causal.metrics import tvd
from modular_causal.scm import private_noise


def _brute_joint(dcm, intervention=None):
    """Joint over every variable by looping over all exogenous and endogenous values."""
    intervention = intervention or {}
    g = dcm.graph
    noises = [private_noise(v) for v in g.nodes] + list(dcm.confounders)
    ranges = [range(dcm.noise_cards[n]) for n in noises]
    out = np.zeros(tuple(dcm.cards[v] for v in g.nodes))
    for exo in itertools.product(*ranges):
        env = dict(zip(noises, exo))
        w = 1.0
        for n, x in env.items():
            if n.startswith("U."):
                w *= dcm.prior(n)[x]
            else:
                w *= 1.0 / dcm.noise_cards[n]
        for vals in itertools.product(*(range(dcm.cards[v]) for v in g.nodes)):
            full = {**env, **dict(zip(g.nodes, vals))}
            p = w
            for v in g.nodes:
                if v in intervention:
                    p *= float(full[v] == intervention[v])
                    continue
                idx = tuple(full[x] for x in dcm.inputs[v])
                p *= softmax(dcm.logits[v][idx])[full[v]]
                if p == 0.0:
                    break
            out[vals] += p
    return out


def _model(seed, max_nodes=4):
    g, _ = random_instance(seed, max_nodes=max_nodes, max_bidirected=2, max_card=2)
    rng = np.random.default_rng(seed)
    cards = {v: int(rng.integers(2, 4)) for v in g.nodes}
    noise = {private_noise(v): 2 for v in g.nodes}
    dcm = dcm_init(g, cards, noise, seed=seed, scale=1.0)
    priors = {u: rng.standard_normal(p.shape) for u, p in dcm.prior_logits.items()}
    return dcm.with_parameters(priors)


@pytest.mark.parametrize("seed", range(8))
def test_exact_distribution_matches_brute_force(seed):
    dcm = _model(seed)
    g = dcm.graph
    joint = dcm_exact_distribution(dcm, g.nodes)
    assert np.allclose(joint.table, _brute_joint(dcm), atol=1e-12)
    v = g.nodes[0]
    do = dcm_exact_distribution(dcm, [w for w in g.nodes if w != v], {v: 1})
    assert np.allclose(do.table, _brute_joint(dcm, {v: 1})[1], atol=1e-12)


def test_conditional_table_over_do_settings():
    dcm = _model(3)
    g = dcm.graph
    v, rest = g.nodes[0], list(g.nodes[1:])
    table = dcm_exact_distribution(dcm, rest, [v])
    for x in range(dcm.cards[v]):
        single = dcm_exact_distribution(dcm, rest, {v: x})
        assert np.allclose(table.slice({v: x}).table, single.table)


@pytest.mark.parametrize("seed", range(6))
def test_backward_matches_finite_differences(seed):
    dcm = _model(seed)
    g = dcm.graph
    target = g.nodes[-2:]
    do_vars = [v for v in g.nodes if v not in target][:1]
    c = Contraction(dcm, target, do_vars)
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal(c.forward(dcm).shape)
    grads = c.backward(dcm, weights, set(g.nodes) | set(dcm.confounders))
    h = 1e-6
    for name, arr in dcm.parameters().items():
        got = grads.get(name, np.zeros_like(arr))
        for idx in list(np.ndindex(arr.shape))[:12]:
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += h
            minus[idx] -= h
            fp = (weights * c.forward(dcm.with_parameters({name: plus}))).sum()
            fm = (weights * c.forward(dcm.with_parameters({name: minus}))).sum()
            assert got[idx] == pytest.approx((fp - fm) / (2 * h), abs=1e-7)


def test_forward_sampling_matches_exact():
    dcm = _model(5)
    g = dcm.graph
    data = dcm_forward_sample(dcm, 80_000, seed=1)
    assert tvd(data.empirical_joint(g.nodes), dcm_exact_distribution(dcm, g.nodes)) < 0.03
    v = g.nodes[0]
    do = dcm_forward_sample(dcm, 80_000, {v: 0}, seed=2)
    assert np.all(do.column(v) == 0)
    exact = dcm_exact_distribution(dcm, g.nodes[1:], {v: 0})
    assert tvd(do.empirical_joint(g.nodes[1:]), exact) < 0.03


def test_clamped_sampling_keeps_columns():
    dcm = dcm_init(frontdoor_graph(), {"D": 2, "I": 8, "A": 2})
    col = np.arange(100) % 2
    data = dcm_forward_sample(dcm, 100, clamp={"D": col}, seed=0)
    assert np.array_equal(data.column("D"), col)
    with pytest.raises(ValidationError, match="rows"):
        dcm_forward_sample(dcm, 50, clamp={"D": col})
    with pytest.raises(ValidationError, match="both"):
        dcm_forward_sample(dcm, 100, {"D": 0}, clamp={"D": col})


def test_uniform_init_and_shapes():
    dcm = dcm_init(diamond_graph(), {"I1": 3, "D": 2, "I2": 4, "C": 2}, scale=0.0)
    assert dcm.noise_cards["U.I1.C"] == 6
    joint = dcm_exact_distribution(dcm, dcm.graph.nodes)
    assert np.allclose(joint.table, 1.0 / joint.table.size)
    with pytest.raises(ValidationError, match=">= 2"):
        dcm_init(frontdoor_graph(), {"D": 1, "I": 2, "A": 2})
    with pytest.raises(ValidationError, match="unknown noise"):
        dcm_init(frontdoor_graph(), {"D": 2, "I": 2, "A": 2}, {"E.Q": 2})


def test_enumeration_cap():
    dcm = dcm_init(frontdoor_graph(), {"D": 2, "I": 8, "A": 2})
    with pytest.raises(NumericError, match="cap"):
        dcm_exact_distribution(dcm, ["A"], cap=10)


def test_set_trainable_and_prior_flag():
    dcm = dcm_init(frontdoor_graph(), {"D": 2, "I": 8, "A": 2})
    frozen = dcm_set_trainable(dcm, ["D"], False)
    assert frozen.trainable == {"I", "A"} and dcm.trainable == {"D", "I", "A"}
    assert not frozen.prior_trainable("U.D.A") and dcm.prior_trainable("U.D.A")


def test_checkpoint_round_trip(tmp_path):
    dcm = _model(2)
    path = tmp_path / "m.json"
    save_checkpoint(dcm, path)
    back = load_checkpoint(path, dcm.graph)
    g = dcm.graph
    assert np.array_equal(
        dcm_exact_distribution(back, g.nodes).table, dcm_exact_distribution(dcm, g.nodes).table
    )
    assert checkpoint_dict(back) == json.loads(path.read_text())
    with pytest.raises(ValidationError, match="different graph"):
        load_checkpoint(path, Admg.build(["Q", "R"]))
    doc = json.loads(path.read_text())
    doc["graph_hash"] = "0" * 64
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="hash"):
        load_checkpoint(path)
    path.write_text("{not json")
    with pytest.raises(ValidationError, match="malformed"):
        load_checkpoint(path)


@SLOW_PROPERTY
@given(st.integers(0, 10_000))
def test_marginals_agree_with_joint(seed):
    dcm = _model(seed, max_nodes=5)
    g = dcm.graph
    joint = dcm_exact_distribution(dcm, g.nodes)
    sub = g.nodes[::2]
    assert np.allclose(joint.marginal(sub).table, dcm_exact_distribution(dcm, sub).table)
    assert joint.table.sum() == pytest.approx(1.0)
