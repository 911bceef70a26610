"""Diagram construction, parsing, ordering, mutilation, cliques."""

import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ncmctf.graph import (CausalDiagram, DiagramError, format_diagram,
                          maximal_bidirected_cliques, mutilate, parse_diagram,
                          topological_order)

_NAMES = tuple(f"V{i}" for i in range(6))


@st.composite
def diagrams(draw):
    """Random diagram: directed edges only low-index -> high-index, so the
    directed part is acyclic by construction."""
    n = draw(st.integers(1, 6))
    pairs = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
    directed = draw(st.sets(pairs.filter(lambda ab: ab[0] < ab[1])))
    bidirected = draw(st.sets(pairs.filter(lambda ab: ab[0] != ab[1])))
    dims = draw(st.lists(st.integers(1, 3), min_size=n, max_size=n))
    names = _NAMES[:n]
    return CausalDiagram(
        list(zip(names, dims)),
        [(names[a], names[b]) for a, b in directed],
        [(names[a], names[b]) for a, b in bidirected])


def test_accessors():
    g = parse_diagram("node Z dim=3\nZ -> X\nZ -> Y\nX -> Y\nX <-> Y\n")
    assert g.vertices == ("Z", "X", "Y")
    assert g.dim("Z") == 3 and g.dim("X") == 1
    assert g.parents("Y") == ("X", "Z")
    assert g.children("Z") == ("X", "Y")
    assert g.siblings("X") == ("Y",)
    assert "Z" in g and "W" not in g
    assert len(g) == 3


@given(diagrams())
def test_parse_format_round_trip(g):
    assert parse_diagram(format_diagram(g)) == g


@given(diagrams())
def test_topological_order_respects_edges(g):
    order = topological_order(g)
    assert sorted(order) == sorted(g.vertices)
    pos = {v: i for i, v in enumerate(order)}
    for a, b in g.directed:
        assert pos[a] < pos[b]


def test_topological_order_breaks_ties_by_declaration():
    g = CausalDiagram(["B", "A", "C"], [("B", "C"), ("A", "C")])
    assert topological_order(g) == ("B", "A", "C")


def test_cycle_rejected():
    with pytest.raises(DiagramError, match="cycle"):
        CausalDiagram(["X", "Y"], [("X", "Y"), ("Y", "X")])


@pytest.mark.parametrize("bad", [
    "node X dim=0\n",
    "X -> X\n",
    "X => Y\n",
    "node 9bad\n",
])
def test_parse_errors_carry_line_numbers(bad):
    with pytest.raises(DiagramError, match="line 1"):
        parse_diagram(bad)


def test_constructor_rejects_unknown_endpoint_and_duplicates():
    with pytest.raises(DiagramError, match="not a declared vertex"):
        CausalDiagram(["X"], [("X", "Y")])
    with pytest.raises(DiagramError, match="duplicate"):
        CausalDiagram(["X", "X"])


def test_comments_and_blank_lines_ignored():
    g = parse_diagram("# a comment\n\nX -> Y  # trailing\n")
    assert g.vertices == ("X", "Y")


@given(diagrams(), st.data())
def test_mutilate_removes_incoming_edges_and_is_idempotent(g, data):
    targets = data.draw(st.sets(st.sampled_from(g.vertices)))
    cut = mutilate(g, targets)
    assert cut.vertices == g.vertices
    for a, b in cut.directed:
        assert b not in targets
    for a, b in cut.bidirected:
        assert a not in targets and b not in targets
    kept = {(a, b) for a, b in g.directed if b not in targets}
    assert cut.directed == kept
    assert mutilate(cut, targets) == cut


def test_mutilate_unknown_target():
    g = parse_diagram("X -> Y\n")
    with pytest.raises(DiagramError):
        mutilate(g, ["Q"])


@given(diagrams())
def test_maximal_cliques_cover_and_are_maximal(g):
    cliques = list(maximal_bidirected_cliques(g))
    adj = {v: set(g.siblings(v)) for v in g.vertices}
    covered = set()
    for clique in cliques:
        covered.update(clique)
        for a, b in itertools.combinations(clique, 2):
            assert b in adj[a]
        # no outside vertex is adjacent to the whole clique
        for v in g.vertices:
            if v not in clique:
                assert not all(v in adj[u] for u in clique)
    assert covered == set(g.vertices)
    for a, b in g.bidirected:
        assert any(a in c and b in c for c in cliques)
    # no clique contains another
    for c1, c2 in itertools.permutations(cliques, 2):
        assert not set(c1) <= set(c2)


def test_cliques_on_known_graphs():
    bow = parse_diagram("X -> Y\nX <-> Y\n")
    assert sorted(maximal_bidirected_cliques(bow)) == [("X", "Y")]
    # triangle of bidirected edges is one clique; isolated W its own
    g = parse_diagram("A <-> B\nB <-> C\nA <-> C\nnode W\n")
    assert sorted(maximal_bidirected_cliques(g)) == [("A", "B", "C"), ("W",)]
    assert maximal_bidirected_cliques(g).containing("B") == (("A", "B", "C"),)


def test_clique_order_deterministic():
    g = parse_diagram("A <-> B\nC <-> D\nB <-> C\n")
    assert list(maximal_bidirected_cliques(g)) \
        == list(maximal_bidirected_cliques(g))
