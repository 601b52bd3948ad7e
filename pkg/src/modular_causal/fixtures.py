"""Bundled graphs and SCMs used by the experiments and tests."""

from __future__ import annotations

from importlib import resources

from .graph import Admg, parse_admg, split_non_markovian
from .scm import DiscreteScm, parse_scm

SCM_FIXTURES = ("frontdoor", "two_comp", "diamond", "asia", "surrogate")
GRAPH_FIXTURES = ("long", "asia_hidden")


def data_text(name: str) -> str:
    return resources.files("modular_causal").joinpath("data").joinpath(name).read_text()


def fixture_scm(name: str) -> DiscreteScm:
    if name not in SCM_FIXTURES:
        raise KeyError(f"unknown SCM fixture {name!r}; choose from {SCM_FIXTURES}")
    return parse_scm(data_text(f"{name}.scm"))


def frontdoor_graph() -> Admg:
    """D -> I -> A with D <-> A."""
    return Admg.build(("D", "I", "A"), [("D", "I"), ("I", "A")], [("D", "A")])


def two_comp_graph() -> Admg:
    """Two c-components {Z1,Z2,Z3} and {X1,X2} with Z3 -> Z1 -> Z2, X1 -> Z1 -> X2."""
    return fixture_scm("two_comp").graph


def diamond_graph() -> Admg:
    """I1 -> D -> I2 -> C with I1 <-> C and D <-> C."""
    return Admg.build(
        ("I1", "D", "I2", "C"),
        [("I1", "D"), ("D", "I2"), ("I2", "C")],
        [("I1", "C"), ("D", "C")],
    )


def bow_graph() -> Admg:
    """X -> Y with X <-> Y."""
    return Admg.build(("X", "Y"), [("X", "Y")], [("X", "Y")])


def surrogate_graph() -> Admg:
    return fixture_scm("surrogate").graph


def asia_graph() -> Admg:
    """Full eight-node Asia network."""
    return fixture_scm("asia").graph


def asia_hidden_graph() -> tuple[Admg, list[str]]:
    """Asia with smoke and bronc replaced by one latent over lung and dysp."""
    return split_non_markovian(data_text("asia_hidden.graph"))


def long_graph() -> Admg:
    """Thirty-node graph whose H-graph has a long chain of dependent hnodes."""
    return parse_admg(data_text("long.graph"))
