import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from helpers import run_static
from oracles import brute_min_cost, gabriel_bruteforce
from vanetsim.protocols import (
    RoutingConfig,
    anchor_path,
    coordinator_of,
    gabriel_neighbors,
    gpcr_step,
    gpsr_step,
    greedy_next_hop,
    make_router,
    pbla_originate,
    pbla_step,
    planarize_gabriel,
)
from vanetsim.simcore import (
    BUFFER,
    DROP,
    DROP_NOPATH,
    DROP_RETRY,
    DROP_TTL,
    FORWARD,
    PERIMETER,
    Packet,
    RadioConfig,
)
from vanetsim.street_graph import StreetGraph, build_grid, dijkstra, path_cost

# S at the origin with D 400 m east; the only way around is an arc over the top.
VOID = [(0, 0), (-60, 120), (40, 230), (180, 260), (290, 170), (380, 80), (400, 0)]
VOID_RADIO = RadioConfig(tx_range=150.0, obstacles=False)


def line_graph(length=800.0):
    return build_grid(2, 1, length, 1.0)


def pkt(dst, dest_pos, **kw):
    return Packet(id=0, src=kw.pop("src", 0), dst=dst, dest_pos=dest_pos, protocol="test", **kw)


# -- greedy -----------------------------------------------------------------


def test_greedy_picks_closest_to_target():
    nb = {1: (100.0, 0.0), 2: (300.0, 0.0), 3: (300.0, 50.0)}
    assert greedy_next_hop((0.0, 0.0), nb, (1000.0, 0.0)) == 2


def test_greedy_none_at_local_maximum():
    assert greedy_next_hop((0.0, 0.0), {1: (-100.0, 0.0)}, (1000.0, 0.0)) is None
    assert greedy_next_hop((0.0, 0.0), {}, (1000.0, 0.0)) is None


def test_greedy_tie_goes_to_smaller_id():
    nb = {7: (100.0, 10.0), 3: (100.0, -10.0)}
    assert greedy_next_hop((0.0, 0.0), nb, (1000.0, 0.0)) == 3


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-500, 500), st.floats(-500, 500)), min_size=0, max_size=8),
    st.tuples(st.floats(-2000, 2000), st.floats(-2000, 2000)),
)
def test_greedy_always_makes_progress(pts, target):
    nb = dict(enumerate(pts))
    nh = greedy_next_hop((0.0, 0.0), nb, target)
    if nh is None:
        assert all(math.dist(p, target) >= math.dist((0, 0), target) for p in pts)
    else:
        assert math.dist(nb[nh], target) < math.dist((0, 0), target)


# -- Gabriel graph ----------------------------------------------------------


def test_gabriel_two_nodes_keep_edge():
    assert planarize_gabriel({0: (0.0, 0.0), 1: (10.0, 0.0)}) == {0: [1], 1: [0]}


def test_gabriel_midpoint_witness_removes_edge():
    adj = planarize_gabriel({0: (0.0, 0.0), 1: (10.0, 0.0), 2: (5.0, 1.0)})
    assert 1 not in adj[0]
    assert adj[2] == [0, 1]


def test_gabriel_witness_on_circle_keeps_edge():
    # angle at the witness is exactly 90 degrees: not strictly inside
    adj = planarize_gabriel({0: (0.0, 0.0), 1: (10.0, 0.0), 2: (5.0, 5.0)})
    assert 1 in adj[0]


def test_gabriel_matches_bruteforce_random_sets():
    rng = random.Random(11)
    for _ in range(100):
        pts = {i: (rng.uniform(0, 1000), rng.uniform(0, 1000)) for i in range(10)}
        adj = planarize_gabriel(pts)
        got = {(u, v) for u in adj for v in adj[u] if u < v}
        assert got == gabriel_bruteforce(pts)


def test_gabriel_neighbors_uses_local_table():
    nb = {1: (10.0, 0.0), 2: (5.0, 1.0)}
    assert sorted(gabriel_neighbors((0.0, 0.0), nb)) == [2]


# -- GPSR -------------------------------------------------------------------


def test_gpsr_three_collinear_nodes():
    g = line_graph()
    out, _ = run_static(g, [(0, 0), (400, 0), (800, 0)], "gpsr", [(0, 2)])
    assert [(o.delivered, o.hops) for o in out] == [(True, 2)]


def test_void_greedy_only_drops():
    out, _ = run_static(line_graph(), VOID, "greedy", [(0, 6)], radio=VOID_RADIO)
    assert not out[0].delivered
    assert out[0].reason == DROP_RETRY


def test_void_gpsr_recovers_by_perimeter():
    out, sim = run_static(line_graph(), VOID, "gpsr", [(0, 6)], radio=VOID_RADIO)
    assert out[0].delivered
    assert out[0].hops == 6


def test_void_perimeter_walk_order():
    # S enters perimeter mode and the right-hand rule takes it up the arc
    cfg = RoutingConfig()
    p = pkt(6, (400.0, 0.0))
    d = gpsr_step(p, 0, (0.0, 0.0), {1: (-60.0, 120.0)}, cfg)
    assert (d.outcome, d.next_hop, d.packet.mode) == (FORWARD, 1, PERIMETER)
    p = d.packet
    p.prev_hop = 0
    d = gpsr_step(p, 1, (-60.0, 120.0), {0: (0.0, 0.0), 2: (40.0, 230.0)}, cfg)
    assert d.next_hop == 2


def test_gpsr_disconnected_drops_no_path():
    # destination far out of reach; the face around S closes on itself
    nodes = [(0, 0), (-100, 0), (1000, 0)]
    out, _ = run_static(line_graph(1000.0), nodes, "gpsr", [(0, 2)], radio=VOID_RADIO)
    assert not out[0].delivered
    assert out[0].reason == DROP_NOPATH


def test_gpsr_isolated_source_buffers_then_drops():
    out, _ = run_static(line_graph(1000.0), [(0, 0), (1000, 0)], "gpsr", [(0, 1)], radio=VOID_RADIO)
    assert out[0].reason == DROP_RETRY
    assert out[0].finished - out[0].created >= 2.0


def test_gpsr_random_topologies_terminate():
    rng = random.Random(5)
    g = build_grid(2, 2, 1000.0, 1000.0)
    for _ in range(20):
        nodes = [(rng.uniform(0, 1000), rng.uniform(0, 1000)) for _ in range(15)]
        pairs = [(0, k) for k in range(1, 6)]
        out, _ = run_static(g, nodes, "gpsr", pairs, radio=RadioConfig(tx_range=250.0, obstacles=False))
        assert len(out) == 5
        assert all(o.delivered or o.reason in (DROP_NOPATH, DROP_RETRY, DROP_TTL) for o in out)


def test_ttl_exceeded():
    out, _ = run_static(line_graph(1200.0), [(0, 0), (400, 0), (800, 0), (1200, 0)], "gpsr", [(0, 3)], ttl=1)
    assert out[0].reason == DROP_TTL


# -- GPCR -------------------------------------------------------------------


def test_coordinator_of():
    g = build_grid(3, 6, 1000.0, 500.0)
    assert coordinator_of((1000.0, 505.0), g, 15.0) == 4
    assert coordinator_of((1000.0, 520.0), g, 15.0) is None


def test_gpcr_prefers_coordinator_over_farther_progress():
    g = build_grid(3, 6, 1000.0, 500.0)
    sid = g.street_between(3, 4)
    cfg = RoutingConfig()
    p = pkt(99, (1400.0, 500.0), street=sid, heading=4, junction=3)
    nb = {1: (1000.0, 505.0), 2: (1150.0, 500.0), 3: (800.0, 500.0)}
    d = gpcr_step(p, 0, (700.0, 500.0), nb, g, cfg)
    assert greedy_next_hop((700.0, 500.0), nb, (1400.0, 500.0)) == 2
    assert (d.outcome, d.next_hop) == (FORWARD, 1)


def test_gpcr_straight_street_matches_greedy():
    g = line_graph(1000.0)
    cfg = RoutingConfig()
    nb = {1: (300.0, 0.0), 2: (450.0, 0.0), 3: (50.0, 0.0)}
    p = pkt(99, (900.0, 0.0))
    d = gpcr_step(p, 0, (100.0, 0.0), nb, g, cfg)
    assert d.next_hop == greedy_next_hop((100.0, 0.0), nb, (900.0, 0.0)) == 2


def test_gpcr_clockwise_repair_at_t_junction():
    # junction 0 with streets east (best toward the target, but empty), south and west
    g = StreetGraph.from_edges([(0, 0), (-500, 0), (500, 0), (0, -500)], [(0, 1), (0, 2), (0, 3)])
    cfg = RoutingConfig()
    p = pkt(99, (400.0, 10.0), street=0, heading=0, junction=1)
    nb = {1: (0.0, -200.0), 2: (-200.0, 0.0)}
    d = gpcr_step(p, 0, (0.0, 0.0), nb, g, cfg)
    assert (d.outcome, d.next_hop) == (FORWARD, 1)
    assert d.packet.street == 2 and d.packet.heading == 3 and d.packet.junction == 0


def test_gpcr_buffers_when_no_street_has_relay():
    g = StreetGraph.from_edges([(0, 0), (-500, 0), (500, 0), (0, -500)], [(0, 1), (0, 2), (0, 3)])
    p = pkt(99, (400.0, 10.0), street=0, heading=0, junction=1)
    d = gpcr_step(p, 0, (0.0, 0.0), {}, g, RoutingConfig())
    assert d.outcome == BUFFER


# -- PBLA -------------------------------------------------------------------

GRID = build_grid(3, 6, 1000.0, 500.0)


def test_anchors_empty_on_shared_street():
    costs = [1.0] * GRID.num_streets
    assert anchor_path(GRID, costs, (100.0, 0.0), (900.0, 0.0)) == []


def test_anchors_uniform_costs_are_hop_shortest():
    costs = [1.0] * GRID.num_streets
    src, dst = GRID.position(0), GRID.position(17)
    for trim in (True, False):
        got = anchor_path(GRID, costs, src, dst, trim=trim)
        assert got == dijkstra(GRID, costs, 0, 17)
        assert len(got) - 1 == 2 + 5


def test_anchors_follow_cheap_corridor():
    # everything expensive except the detour 0 -> 1 -> 2 -> 5 -> 4
    g = build_grid(3, 2, 1000.0, 500.0)
    costs = [10.0] * g.num_streets
    for u, v in [(0, 1), (1, 2), (2, 5), (5, 4)]:
        costs[g.street_between(u, v)] = 0.1
    got = anchor_path(g, costs, g.position(0), g.position(4), trim=False)
    assert got == [0, 1, 2, 5, 4]


def test_anchor_trim_skips_backtracking():
    g = build_grid(2, 2, 1000.0, 1000.0)
    costs = [1.0, 5.0, 5.0, 1.0]  # bottom then right
    assert g.street_between(0, 1) == 0 and g.street_between(1, 3) == 3
    src, dst = (10.0, 0.0), (1000.0, 990.0)
    assert anchor_path(g, costs, src, dst, trim=False) == [0, 1, 3]
    assert anchor_path(g, costs, src, dst, trim=True) == [1]


def test_anchor_cost_matches_enumeration_random_graphs():
    rng = random.Random(3)
    for _ in range(200):
        n = rng.randint(2, 7)
        pts = [(rng.uniform(0, 5000), rng.uniform(0, 5000)) for _ in range(n)]
        edges = [(i, i + 1) for i in range(n - 1)]
        edges += [(i, j) for i in range(n) for j in range(i + 2, n) if rng.random() < 0.4]
        g = StreetGraph.from_edges(pts, edges)
        costs = [rng.uniform(0, 10) for _ in edges]
        s, d = rng.sample(range(n), 2)
        p = pkt(1, g.position(d))
        out = pbla_originate(p, g.position(s), g, costs, lambda v, t: g.position(d), trim=False)
        if out.anchors:
            assert path_cost(g, costs, out.anchors) == pytest.approx(brute_min_cost(g.adjacency, costs, s, d), abs=1e-9)


def test_raising_preferred_street_probability_keeps_it():
    from vanetsim.learning_automata import street_cost

    g = build_grid(3, 2, 1000.0, 500.0)
    r = g.num_streets
    rng = random.Random(8)

    def route(probs):
        path = anchor_path(g, [street_cost(p, r) for p in probs], g.position(0), g.position(5), trim=False)
        return {g.street_between(path[k], path[k + 1]) for k in range(len(path) - 1)}

    for _ in range(50):
        raw = [rng.random() for _ in range(r)]
        probs = [x / sum(raw) for x in raw]
        for target in route(probs):
            for bump in (0.05, 0.2, 0.5):
                probs2 = [p * (1 - bump) for p in probs]
                probs2[target] += bump
                assert target in route(probs2)


def test_pbla_advances_anchor_within_d_int():
    g = build_grid(2, 2, 1000.0, 1000.0)
    p = pkt(99, (1000.0, 990.0), anchors=(1, 3), next_anchor=0)
    calls = []

    def locate(v, t):
        calls.append(v)
        return (1000.0, 980.0)

    nb = {1: (1000.0, 400.0), 2: (600.0, 0.0)}
    d = pbla_step(p, 0, (990.0, 0.0), nb, g, RoutingConfig(), 0.0, locate)
    assert d.packet.next_anchor == 1
    assert d.packet.dest_pos == (1000.0, 980.0)
    assert calls == [99]
    assert d.next_hop == 1


def test_pbla_no_progress_buffers_then_drops():
    g = line_graph(1000.0)
    cfg = RoutingConfig()
    p = pkt(99, (900.0, 0.0))
    d = pbla_step(p, 0, (100.0, 0.0), {1: (50.0, 0.0)}, g, cfg, 0.0)
    assert d.outcome == BUFFER and d.packet.buffered_since == 0.0
    d = pbla_step(d.packet, 0, (100.0, 0.0), {1: (50.0, 0.0)}, g, cfg, 1.0)
    assert d.outcome == BUFFER
    d = pbla_step(d.packet, 0, (100.0, 0.0), {1: (50.0, 0.0)}, g, cfg, 2.0)
    assert (d.outcome, d.reason) == (DROP, DROP_RETRY)


def _l_route(with_vertical=True):
    g = build_grid(2, 2, 1000.0, 1000.0)
    costs = [0.0, 5.0, 5.0, 0.0]  # bottom and right streets preferred
    nodes = [(10.0, 0.0), (250.0, 0.0), (500.0, 0.0), (750.0, 0.0), (1000.0, 0.0)]
    if with_vertical:
        nodes += [(1000.0, 250.0), (1000.0, 500.0), (1000.0, 750.0)]
    nodes.append((1000.0, 990.0))
    return g, costs, nodes


def test_pbla_hops_are_sum_of_segment_hops():
    g, costs, nodes = _l_route()
    out, _ = run_static(g, nodes, "pbla", [(0, len(nodes) - 1)], costs=costs)
    assert out[0].delivered
    assert out[0].hops == 2 + 2


def test_pbla_empty_street_between_anchors_drops():
    g, costs, nodes = _l_route(with_vertical=False)
    out, _ = run_static(g, nodes, "pbla", [(0, len(nodes) - 1)], costs=costs)
    assert (out[0].delivered, out[0].reason) == (False, DROP_RETRY)


def test_pbla_perimeter_recovery_option():
    out, _ = run_static(
        line_graph(), VOID, "pbla", [(0, 6)], radio=VOID_RADIO,
        routing=RoutingConfig(pbla_recovery="perimeter"), costs=[1.0],
    )
    assert out[0].delivered


def test_pbla_unreachable_destination_is_no_path():
    g = StreetGraph.from_edges([(0, 0), (1000, 0), (0, 5000), (1000, 5000)], [(0, 1), (2, 3)])
    out, _ = run_static(g, [(100.0, 0.0), (100.0, 5000.0)], "pbla", [(0, 1)], costs=[1.0, 1.0])
    assert out[0].reason == DROP_NOPATH


def test_make_router_rejects_unknown_protocol():
    with pytest.raises(ValueError, match="gpsr, gpcr, pbla"):
        make_router("aodv", GRID, RoutingConfig())


def test_make_router_pbla_needs_costs():
    with pytest.raises(ValueError, match="costs"):
        make_router("pbla", GRID, RoutingConfig())


def test_routing_config_rejects_bad_recovery():
    with pytest.raises(ValueError):
        RoutingConfig(pbla_recovery="flood")
