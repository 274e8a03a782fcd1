import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osdr.errors import FormatError, MissingEmbeddingError, ParseError, UsageError
from osdr.graph import (KnowledgeGraph, NodeRoleSplit, graph_paths, load_graph, neighborhood,
                        save_graph, validate_reachability)


def write_files(tmp_path, edges, embeddings, roles):
    e, v, r = graph_paths(tmp_path)
    e.write_text("".join(f"{a}\t{b}\n" for a, b in edges))
    v.write_text("".join(f"{n} {' '.join(map(str, vec))}\n" for n, vec in embeddings.items()))
    r.write_text("".join(f"{n}\t{role}\n" for n, role in roles.items()))
    return e, v, r


def chain(n, roles=None):
    roles = roles or ["known"] + ["unknown"] * (n - 1)
    return KnowledgeGraph([f"n{i}" for i in range(n)], np.eye(n), [(i, i + 1) for i in range(n - 1)],
                          roles)


def test_load_normalizes_vectors(tmp_path):
    g = load_graph(*write_files(tmp_path, [("a", "b")], {"a": [1, 0], "b": [0, 2]},
                                {"a": "known", "b": "unknown"}))
    assert g.n == 2
    assert np.array_equal(g.vectors[1], [0.0, 1.0])


def test_duplicate_edge_collapses(tmp_path):
    g = load_graph(*write_files(tmp_path, [("a", "b"), ("a", "b"), ("b", "a")],
                                {"a": [1, 0], "b": [0, 1]}, {"a": "known", "b": "unknown"}))
    assert g.edges() == [(0, 1)]


def test_chain_degrees(tmp_path):
    names = "abcd"
    g = load_graph(*write_files(tmp_path, list(zip(names, names[1:])),
                                {n: [1.0, float(i)] for i, n in enumerate(names)},
                                {n: ("known" if n == "a" else "unknown") for n in names}))
    assert [g.degree(i) for i in range(4)] == [1, 2, 2, 1]


def test_comments_and_blank_lines(tmp_path):
    e, v, r = write_files(tmp_path, [("a", "b")], {"a": [1, 0], "b": [0, 1]},
                          {"a": "known", "b": "unknown"})
    e.write_text("# header\n\na\tb\n")
    assert load_graph(e, v, r).edges() == [(0, 1)]


def test_unknown_edge_node_reports_line(tmp_path):
    e, v, r = write_files(tmp_path, [("a", "b"), ("a", "zz")], {"a": [1, 0], "b": [0, 1]},
                          {"a": "known", "b": "unknown"})
    with pytest.raises(ParseError) as info:
        load_graph(e, v, r)
    assert info.value.line == 2
    assert "zz" in str(info.value)


def test_embedding_dimension_mismatch(tmp_path):
    with pytest.raises(FormatError):
        load_graph(*write_files(tmp_path, [("a", "b")], {"a": [1, 0], "b": [0, 1, 2]},
                                {"a": "known", "b": "unknown"}))


def test_missing_embedding_lists_names(tmp_path):
    with pytest.raises(MissingEmbeddingError) as info:
        load_graph(*write_files(tmp_path, [("a", "b"), ("b", "c")], {"a": [1, 0]},
                                {"a": "known", "b": "unknown", "c": "aux"}))
    assert info.value.names == ["b", "c"]


def test_neighborhood_examples():
    g = chain(3)
    assert neighborhood(g, 1) == [0, 1, 2]
    iso = KnowledgeGraph(["x", "y"], np.eye(2), [], ["known", "unknown"])
    assert neighborhood(iso, 0) == [0]
    star = KnowledgeGraph(list("cabd"), np.eye(4), [(0, 1), (0, 2), (0, 3)],
                          ["known", "unknown", "unknown", "aux"])
    assert len(neighborhood(star, 0)) == 4


def test_neighborhood_out_of_range():
    with pytest.raises(UsageError):
        neighborhood(chain(3), 3)
    with pytest.raises(UsageError):
        neighborhood(chain(3), -1)


def test_reachability_examples():
    assert validate_reachability(chain(3, ["known", "aux", "unknown"])) is None
    g = KnowledgeGraph(["k", "u", "lonely"], np.eye(3), [(0, 1)], ["known", "unknown", "unknown"])
    assert validate_reachability(g) == ["lonely"]
    two = KnowledgeGraph(list("abcd"), np.eye(4), [(0, 1), (2, 3)],
                         ["known", "unknown", "known", "unknown"])
    assert validate_reachability(two) is None


def test_role_split_validation():
    with pytest.raises(UsageError):
        NodeRoleSplit((0,), (0,), ())
    with pytest.raises(UsageError):
        NodeRoleSplit((), (1,), ())
    with pytest.raises(UsageError):
        NodeRoleSplit((0,), (), ())


def test_zero_vector_stays_zero():
    g = KnowledgeGraph(["a", "b"], [[0.0, 0.0], [3.0, 4.0]], [(0, 1)], ["known", "unknown"])
    assert not g.vectors[0].any()
    assert np.allclose(g.vectors[1], [0.6, 0.8])


@st.composite
def random_graphs(draw):
    n = draw(st.integers(2, 9))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), max_size=12)) if pairs else []
    roles = ["known", "unknown"] + draw(st.lists(st.sampled_from(["known", "unknown", "aux"]),
                                                 min_size=n - 2, max_size=n - 2))
    seed = draw(st.integers(0, 2**31 - 1))
    vecs = np.random.default_rng(seed).normal(size=(n, 3))
    return KnowledgeGraph([f"v{i}" for i in range(n)], vecs, edges, roles)


@settings(max_examples=80, deadline=None)
@given(random_graphs())
def test_neighborhood_symmetric(g):
    for i in range(g.n):
        assert i in neighborhood(g, i)
        for j in neighborhood(g, i):
            assert i in neighborhood(g, j)


@settings(max_examples=40, deadline=None)
@given(random_graphs())
def test_save_load_round_trip(tmp_path_factory, g):
    d = tmp_path_factory.mktemp("g")
    save_graph(g, *graph_paths(d))
    once = load_graph(*graph_paths(d))
    save_graph(once, *graph_paths(d))
    twice = load_graph(*graph_paths(d))
    assert once == g
    assert twice == once


@settings(max_examples=80, deadline=None)
@given(random_graphs(), st.randoms(use_true_random=False))
def test_reachability_invariant_under_relabeling(g, rnd):
    perm = list(range(g.n))
    rnd.shuffle(perm)
    assert (validate_reachability(g) is None) == (validate_reachability(g.permuted(perm)) is None)
