import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recon.errors import ContractError, NoPath
from recon.latentmodel import init_params, predicted_distance
from recon.topomap import (DELTA_1, DELTA_2, TopoGraph, associate_to_vertex, expand_graph, increment_count,
                           least_explored_neighbor, path_cost, shortest_path)

K = 8


@pytest.fixture
def zero_model():
    # zero output heads: every predicted distance is exactly 0
    return init_params(K, latent_dim=4, seed=0)


def _obs(i):
    return np.full(K, i / 10.0)


def test_empty_graph_cannot_associate(zero_model):
    with pytest.raises(ContractError):
        associate_to_vertex(TopoGraph(K), zero_model, _obs(0))
    with pytest.raises(ContractError):
        least_explored_neighbor(TopoGraph(K), zero_model, _obs(0))


def test_single_vertex_cases(zero_model):
    G = TopoGraph(K)
    node, new = expand_graph(G, zero_model, _obs(1))
    assert new and len(G) == 1 and not G.edges
    assert associate_to_vertex(G, zero_model, _obs(5)) is node
    o, d, v = least_explored_neighbor(G, zero_model, _obs(5))
    np.testing.assert_array_equal(o, _obs(1))
    assert v is node and d == 0.0


def test_second_vertex_adds_two_edges(zero_model):
    G = TopoGraph(K)
    expand_graph(G, zero_model, _obs(1))
    _, new = expand_graph(G, zero_model, _obs(2), delta_1=None)
    assert new and set(G.edges) == {(0, 1), (1, 0)}


def test_near_duplicate_bumps_count(zero_model):
    G = TopoGraph(K)
    expand_graph(G, zero_model, _obs(1))
    node, new = expand_graph(G, zero_model, _obs(2))  # predicted 0 < delta_1
    assert not new and len(G) == 1 and node.count == 2


def test_equal_distances_tie_to_lowest_id(zero_model):
    G = TopoGraph(K)
    for i in range(4):
        G.add_node(_obs(i))
    assert associate_to_vertex(G, zero_model, _obs(9)).id == 0


def test_least_explored_prefers_smallest_count(zero_model):
    G = TopoGraph(K)
    G.add_node(_obs(0), count=5)
    G.add_node(_obs(1), count=3)
    G.add_node(_obs(2), count=1)
    G.set_edge(0, 1, 5.0)
    G.set_edge(0, 2, 5.0)
    _, _, v = least_explored_neighbor(G, zero_model, _obs(0))
    assert v.id == 2
    # the same neighbors beyond delta_2 leave only the associated vertex
    G.set_edge(0, 1, DELTA_2 + 1)
    G.set_edge(0, 2, DELTA_2 + 1)
    _, _, v = least_explored_neighbor(G, zero_model, _obs(0))
    assert v.id == 0


def test_least_explored_count_ties_go_to_lowest_id(zero_model):
    G = TopoGraph(K)
    for i, c in enumerate([4, 2, 2]):
        G.add_node(_obs(i), count=c)
    G.set_edge(0, 2, 1.0)
    G.set_edge(0, 1, 1.0)
    assert least_explored_neighbor(G, zero_model, _obs(0))[2].id == 1


def test_increment_count():
    G = TopoGraph(K)
    G.add_node(_obs(0))
    assert increment_count(G, 0).count == 2
    for _ in range(4):
        increment_count(G, 0)
    assert G.node(0).count == 6
    with pytest.raises(ContractError):
        increment_count(G, 3)


def test_edge_contracts():
    G = TopoGraph(K)
    G.add_node(_obs(0))
    G.add_node(_obs(1))
    with pytest.raises(ContractError):
        G.set_edge(0, 0, 1.0)
    with pytest.raises(ContractError):
        G.set_edge(0, 1, -1.0)
    with pytest.raises(ContractError):
        G.add_node(np.zeros(K + 1))


def _triangle():
    G = TopoGraph(K)
    for i in range(3):
        G.add_node(_obs(i))
    G.set_edge(0, 1, 2.0)
    G.set_edge(1, 2, 2.0)
    G.set_edge(0, 2, 10.0)
    return G


def test_shortest_path_trivial_and_triangle():
    G = _triangle()
    assert shortest_path(G, 1, 1) == [1]
    assert shortest_path(G, 0, 2, w_max=20) == [0, 1, 2]
    assert path_cost(G, [0, 1, 2]) == 4.0


def test_w_max_filters_edges():
    G = _triangle()
    G.set_edge(1, 2, 25.0)
    assert shortest_path(G, 0, 2, w_max=20) == [0, 2]
    with pytest.raises(NoPath):
        shortest_path(G, 0, 2, w_max=5)
    with pytest.raises(NoPath):
        shortest_path(G, 2, 0)  # edges are directed


def _brute_force(G, s, t, w_max):
    best = math.inf
    others = [v for v in range(len(G)) if v not in (s, t)]
    # enumerate simple paths depth-first
    stack = [(s, 0.0, {s})]
    while stack:
        u, cost, seen = stack.pop()
        for v, w in G.neighbors(u).items():
            if w >= w_max or v in seen:
                continue
            if v == t:
                best = min(best, cost + w)
            elif v in others:
                stack.append((v, cost + w, seen | {v}))
    return best


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10**6), st.floats(0.2, 0.9))
def test_shortest_path_matches_exhaustive_search(n, seed, density):
    rng = np.random.default_rng(seed)
    G = TopoGraph(K)
    for i in range(n):
        G.add_node(_obs(i))
    for i, j in itertools.permutations(range(n), 2):
        if rng.random() < density:
            G.set_edge(i, j, float(rng.uniform(0, 30)))
    s, t = 0, n - 1
    expect = _brute_force(G, s, t, 20.0)
    if math.isinf(expect):
        with pytest.raises(NoPath):
            shortest_path(G, s, t, 20.0)
    else:
        path = shortest_path(G, s, t, 20.0)
        assert path[0] == s and path[-1] == t
        assert len(set(path)) == len(path)
        assert all(G.edges[(a, b)] < 20.0 for a, b in zip(path[:-1], path[1:]))
        assert path_cost(G, path) == pytest.approx(expect)


def test_shortest_path_fifteen_vertices_sparse():
    # a sparse 15-vertex graph keeps the simple-path enumeration tractable
    rng = np.random.default_rng(11)
    for _ in range(10):
        G = TopoGraph(K)
        for i in range(15):
            G.add_node(_obs(i))
        for i, j in itertools.permutations(range(15), 2):
            if rng.random() < 0.2:
                G.set_edge(i, j, float(rng.uniform(0, 25)))
        expect = _brute_force(G, 0, 14, 20.0)
        if math.isinf(expect):
            with pytest.raises(NoPath):
                shortest_path(G, 0, 14)
        else:
            assert path_cost(G, shortest_path(G, 0, 14)) == pytest.approx(expect)


def test_expand_without_dedup_is_complete(trained, small_data):
    params, _ = trained
    ds, _ = small_data
    G = TopoGraph(ds.n_rays)
    for o in ds.bank[:: len(ds.bank) // 12][:12]:
        expand_graph(G, params, o, delta_1=None)
    n = len(G)
    assert len(G.edges) == n * (n - 1)
    assert all(w >= 0 for w in G.edges.values())


def test_trained_association_finds_own_vertex(trained, small_data):
    params, _ = trained
    ds, _ = small_data
    G = TopoGraph(ds.n_rays)
    # observations far apart in the collection order
    picks = ds.bank[np.linspace(0, len(ds.bank) - 1, 10).astype(int)]
    for o in picks:
        G.add_node(o)
    hits = sum(associate_to_vertex(G, params, o).id == i for i, o in enumerate(picks))
    d_self = [predicted_distance(params, o, o) for o in picks]
    assert max(d_self) < DELTA_1
    # a far pair can alias to a clamped distance of 0 and win the tie; that
    # misassociation rate is what this small model gets, the rest must match
    assert hits >= 7


def test_identical_insert_does_not_grow(trained, small_data):
    params, _ = trained
    ds, _ = small_data
    G = TopoGraph(ds.n_rays)
    expand_graph(G, params, ds.bank[0])
    node, new = expand_graph(G, params, ds.bank[0])
    assert not new and len(G) == 1 and node.count == 2


def test_round_trip(tmp_path):
    G = _triangle()
    G.node(1).count = 4
    G.save(tmp_path / "g.json")
    H = TopoGraph.load(tmp_path / "g.json")
    assert H.edges == G.edges
    assert list(H.counts()) == list(G.counts())
    for a, b in zip(G.nodes, H.nodes):
        assert a.o.tobytes() == b.o.tobytes()
    assert shortest_path(H, 0, 2) == shortest_path(G, 0, 2)
