import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphtransfer.graph import (Box, SpatialGraph, adjacency_degree, canonicalize, degrees,
                                 is_valid, read_graph, validate, write_graph)


def graph(nodes, edges=(), dims=2):
    return SpatialGraph.from_lists(dims, nodes, edges)


@st.composite
def raw_graphs(draw, dims=2, max_nodes=8):
    n = draw(st.integers(1, max_nodes))
    coord = st.floats(0.0, 1.0, allow_nan=False)
    nodes = draw(st.lists(st.tuples(*[coord] * dims), min_size=n, max_size=n))
    pair = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda e: e[0] != e[1])
    edges = draw(st.lists(pair, max_size=12)) if n > 1 else []
    return graph(nodes, edges, dims)


def test_validate_accepts_valid_graph():
    assert validate(graph([(0.1, 0.2), (0.9, 0.9)], [(0, 1)])) == []


def test_validate_flags_out_of_range_coordinate():
    problems = validate(graph([(1.5, 0.0)]))
    assert len(problems) == 1
    assert "coordinate out of [0,1]" in problems[0] and "nodes[0]" in problems[0]


def test_validate_flags_self_loop():
    problems = validate(graph([(0.1, 0.1), (0.2, 0.2)], [(1, 1)]))
    assert len(problems) == 1 and "self-loop" in problems[0] and "edges[0]" in problems[0]


def test_validate_flags_order_duplicates_range_and_dims():
    g = graph([(0.1, 0.1), (0.2, 0.2)], [(1, 0), (0, 1), (0, 5)])
    problems = validate(g)
    assert any("not canonical" in p for p in problems)
    assert any("duplicate" in p for p in problems)
    assert any("out of range" in p for p in problems)
    bad_dims = SpatialGraph(2, ((0.1, 0.2, 0.3),), ())
    assert any("length 3 != dims 2" in p for p in validate(bad_dims))
    assert any("dims" in p for p in validate(SpatialGraph(4, (), ())))


def test_coincident_nodes_are_warnings_only():
    g = graph([(0.3, 0.3), (0.3, 0.3)], [(0, 1)])
    problems = validate(g)
    assert len(problems) == 1 and problems[0].startswith("warning:")
    assert is_valid(g)


@pytest.mark.parametrize("edges, expected", [
    ([(1, 0), (0, 1)], ((0, 1),)),
    ([(2, 0), (1, 0)], ((0, 1), (0, 2))),
    ([], ()),
])
def test_canonicalize_examples(edges, expected):
    g = graph([(0.1, 0.1), (0.5, 0.5), (0.9, 0.9)], edges)
    out = canonicalize(g)
    assert out.edges == expected
    assert out.nodes == g.nodes


def test_canonicalize_rejects_out_of_range_edge():
    with pytest.raises(IndexError, match=r"\(0, 7\)"):
        canonicalize(graph([(0.1, 0.1)], [(0, 7)]))


@pytest.mark.parametrize("nodes, edges, i, expected", [
    ([(0.1, 0.5), (0.5, 0.5), (0.9, 0.5)], [(0, 1), (1, 2)], 1, 2),
    ([(0.1, 0.5), (0.5, 0.5)], [], 0, 0),
    ([(0.5, 0.5), (0.1, 0.5), (0.9, 0.5), (0.5, 0.1), (0.5, 0.9)],
     [(0, 1), (0, 2), (0, 3), (0, 4)], 0, 4),
])
def test_adjacency_degree_examples(nodes, edges, i, expected):
    assert adjacency_degree(graph(nodes, edges), i) == expected


def test_adjacency_degree_rejects_bad_index():
    with pytest.raises(IndexError):
        adjacency_degree(graph([(0.5, 0.5)]), 3)


@given(raw_graphs())
def test_canonicalize_is_idempotent(g):
    once = canonicalize(g)
    assert canonicalize(once) == once


@given(raw_graphs(dims=3))
def test_canonical_graphs_have_no_order_or_duplicate_problems(g):
    problems = validate(canonicalize(g))
    assert not any("canonical" in p or "duplicate" in p for p in problems)


@given(raw_graphs())
def test_degree_sum_is_twice_edge_count(g):
    g = canonicalize(g)
    assert sum(adjacency_degree(g, i) for i in range(g.num_nodes)) == 2 * g.num_edges
    assert degrees(g).sum() == 2 * g.num_edges


@settings(max_examples=30)
@given(raw_graphs())
def test_json_round_trip(tmp_path_factory, g):
    g = canonicalize(g)
    path = tmp_path_factory.mktemp("g") / "graph.json"
    write_graph(g, path)
    assert read_graph(path) == g
    assert path.read_text().endswith("\n")
    assert set(json.loads(path.read_text())) == {"dims", "nodes", "edges"}


def test_writer_emits_canonical_form():
    g = graph([(0.1, 0.1), (0.5, 0.5)], [(1, 0), (0, 1)])
    assert g.to_json()["edges"] == [[0, 1]]


def test_malformed_json_is_reported():
    with pytest.raises(ValueError, match="malformed graph JSON"):
        SpatialGraph.from_json({"dims": 2, "nodes": []})


def test_box_bounds_and_clipping():
    b = Box((0.0, 0.5), (0.05, 0.05))
    assert b.lo == pytest.approx((-0.05, 0.45))
    c = b.clip_unit()
    assert c.lo == pytest.approx((0.0, 0.45)) and c.hi == pytest.approx((0.05, 0.55))
    assert Box.from_bounds((0, 0, 0), (1, 2, 3)).volume() == pytest.approx(6.0)
