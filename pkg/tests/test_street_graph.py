import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_min_cost, enumerate_simple_paths
from vanetsim.street_graph import (
    StreetGraph,
    build_grid,
    dijkstra,
    locate_street,
    nearest_intersection,
    path_cost,
)


@pytest.mark.parametrize(
    "cols,rows,dx,dy,nv,ne",
    [(3, 6, 1000, 500, 18, 27), (2, 2, 100, 100, 4, 4), (1, 2, 100, 100, 2, 1)],
)
def test_build_grid_counts(cols, rows, dx, dy, nv, ne):
    g = build_grid(cols, rows, dx, dy)
    assert g.num_intersections == nv
    assert g.num_streets == ne


def test_table1_grid_fits_box():
    g = build_grid(3, 6, 1000, 500)
    xs = [n.position[0] for n in g.intersections]
    ys = [n.position[1] for n in g.intersections]
    assert (max(xs), max(ys)) == (2000, 2500)


@pytest.mark.parametrize("args", [(1, 1, 10, 10), (0, 3, 10, 10), (2, 2, 0, 10), (2, 2, 10, -1)])
def test_build_grid_rejects_degenerate(args):
    with pytest.raises(ValueError):
        build_grid(*args)


@given(st.integers(1, 7), st.integers(1, 7))
def test_grid_invariants(c, r):
    if c * r < 2:
        return
    g = build_grid(c, r, 100.0, 50.0)
    assert g.num_streets == r * (c - 1) + c * (r - 1)
    assert g.is_connected()
    for adj in g.adjacency:
        assert 1 <= len(adj) <= 4
        if c >= 2 and r >= 2:
            assert 2 <= len(adj) <= 4
    for s in g.streets:
        a, b = s.endpoints
        assert s.length == pytest.approx(math.dist(g.position(a), g.position(b)))


def test_street_graph_validation():
    with pytest.raises(ValueError):
        StreetGraph.from_edges([(0, 0), (0, 0)], [(0, 1)])
    with pytest.raises(ValueError):
        StreetGraph.from_edges([(0, 0), (1, 0)], [(0, 0)])


def test_dijkstra_trivial():
    g = build_grid(2, 2, 100, 100)
    assert dijkstra(g, [1.0] * 4, 2, 2) == [2]
    assert path_cost(g, [1.0] * 4, [2]) == 0.0


def test_dijkstra_opposite_corners_uniform():
    g = build_grid(2, 2, 100, 100)
    path = dijkstra(g, [1.0] * 4, 0, 3)
    assert len(path) == 3
    assert path_cost(g, [1.0] * 4, path) == 2.0
    # both 2-hop routes tie on cost and hops: smaller next id wins
    assert path == [0, 1, 3]
    assert brute_min_cost(g.adjacency, [1.0] * 4, 0, 3) == 2.0


def test_dijkstra_cheap_edge_reroutes():
    g = build_grid(2, 2, 100, 100)
    # streets: 0:(0,1) 1:(2,3) 2:(0,2) 3:(1,3)
    costs = [1.0, 0.1, 1.0, 1.0]
    path = dijkstra(g, costs, 0, 3)
    assert path == [0, 2, 3]
    assert path_cost(g, costs, path) == pytest.approx(1.1)
    assert path_cost(g, costs, path) == brute_min_cost(g.adjacency, costs, 0, 3)


def test_dijkstra_unreachable():
    g = StreetGraph.from_edges([(0, 0), (1, 0), (5, 5), (6, 5)], [(0, 1), (2, 3)])
    assert dijkstra(g, [1.0, 1.0], 0, 3) is None


def test_dijkstra_rejects_bad_costs():
    g = build_grid(2, 2, 100, 100)
    with pytest.raises(ValueError):
        dijkstra(g, [1.0, -1.0, 1.0, 1.0], 0, 3)
    with pytest.raises(ValueError):
        dijkstra(g, [1.0, math.inf, 1.0, 1.0], 0, 3)
    with pytest.raises(ValueError):
        dijkstra(g, [1.0] * 4, 0, 9)


def random_connected_graph(rng, max_nodes=7):
    n = rng.randint(2, max_nodes)
    positions = []
    while len(positions) < n:
        p = (float(rng.randint(0, 50)), float(rng.randint(0, 50)))
        if p not in positions:
            positions.append(p)
    edges = set()
    order = list(range(n))
    rng.shuffle(order)
    for k in range(1, n):
        a, b = order[k], order[rng.randrange(k)]
        edges.add((min(a, b), max(a, b)))
    for _ in range(rng.randint(0, n * (n - 1) // 2)):
        a, b = rng.sample(range(n), 2)
        edges.add((min(a, b), max(a, b)))
    return StreetGraph.from_edges(positions, sorted(edges))


def test_dijkstra_matches_enumeration_small():
    rng = random.Random(11)
    for _ in range(200):
        g = random_connected_graph(rng)
        costs = [rng.uniform(1e-9, 10.0) for _ in g.streets]
        src, dst = rng.randrange(g.num_intersections), rng.randrange(g.num_intersections)
        path = dijkstra(g, costs, src, dst)
        assert path[0] == src and path[-1] == dst
        assert len(set(path)) == len(path)
        for u, v in zip(path, path[1:]):
            assert g.street_between(u, v) is not None
        assert path_cost(g, costs, path) == brute_min_cost(g.adjacency, costs, src, dst)


def test_dijkstra_prefers_fewer_hops_on_tie():
    # square with a diagonal: 0-1-2 costs 1+1, direct 0-2 costs 2
    g = StreetGraph.from_edges([(0, 0), (10, 0), (10, 10)], [(0, 1), (1, 2), (0, 2)])
    assert dijkstra(g, [1.0, 1.0, 2.0], 0, 2) == [0, 2]


def test_enumeration_oracle_sanity():
    g = build_grid(2, 2, 1, 1)
    paths = enumerate_simple_paths(g.adjacency, 0, 3)
    assert sorted(p for p, _ in paths) == [[0, 1, 3], [0, 2, 3]]


def test_nearest_intersection():
    g = build_grid(3, 6, 1000, 500)
    assert nearest_intersection(g, g.position(5)) == 5
    # midpoint of street 0 (0-1): tie goes to the smaller id
    assert nearest_intersection(g, (500.0, 0.0)) == 0
    # outside the box: nearest corner, checked by exhaustive scan
    for p in [(-300.0, -200.0), (2600.0, 3000.0), (-50.0, 2700.0)]:
        expect = min(range(g.num_intersections), key=lambda k: (math.dist(p, g.position(k)), k))
        assert nearest_intersection(g, p) == expect
    assert nearest_intersection(g, (2600.0, 3000.0)) == 17


def test_locate_street():
    g = build_grid(3, 6, 1000, 500)
    assert locate_street(g, (300.0, 0.0), 1.0) == 0
    incident = [sid for sid, _ in g.adjacency[4]]
    assert locate_street(g, g.position(4), 1.0) == min(incident)
    assert locate_street(g, (300.0, 50.0), 1.0) is None
    with pytest.raises(ValueError):
        locate_street(g, (0.0, 0.0), -1)


@settings(max_examples=200)
@given(st.integers(0, 26), st.floats(0.001, 0.999))
def test_locate_street_interior_roundtrip(sid, frac):
    g = build_grid(3, 6, 1000, 500)
    a, b = g.streets[sid].endpoints
    pa, pb = g.position(a), g.position(b)
    p = (pa[0] + (pb[0] - pa[0]) * frac, pa[1] + (pb[1] - pa[1]) * frac)
    # interior points farther than tol from the endpoints belong to exactly this street
    if min(math.dist(p, pa), math.dist(p, pb)) > 1.0:
        assert locate_street(g, p, 0.5) == sid
