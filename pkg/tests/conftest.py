"""Shared strategies and helpers."""

from __future__ import annotations

import numpy as np
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from modular_causal.graph import Admg
from modular_causal.scm import random_admg, random_scm_on_graph

PROPERTY = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
SLOW_PROPERTY = settings(
    max_examples=20, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)


@st.composite
def admgs(draw, min_nodes: int = 1, max_nodes: int = 6, max_bidirected: int = 3) -> Admg:
    n = draw(st.integers(min_nodes, max_nodes))
    names = [f"V{i}" for i in range(n)]
    order = draw(st.permutations(names))
    pairs = [(order[i], order[j]) for i in range(n) for j in range(i + 1, n)]
    directed = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    bidirected = (
        draw(st.lists(st.sampled_from(pairs), unique=True, max_size=max_bidirected))
        if pairs
        else []
    )
    return Admg.build(names, directed, bidirected)


def random_instance(seed: int, max_nodes: int = 5, max_bidirected: int = 2, max_card: int = 3):
    """Random (graph, SCM) pair with small cardinalities."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_nodes + 1))
    arcs = int(rng.integers(n - 1, 2 * n))
    g = random_admg(n, rng, arc_count=arcs, latent_count=int(rng.integers(0, max_bidirected + 1)))
    cards = {v: int(rng.integers(2, max_card + 1)) for v in g.nodes}
    return g, random_scm_on_graph(g, cards, rng, max_card)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
