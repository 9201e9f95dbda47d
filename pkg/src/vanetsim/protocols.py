"""Per-hop forwarding decisions for GPSR, GPCR and PBLA.

Every step function is pure: it reads the packet and the node's local view
and returns a Decision carrying an updated copy of the packet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

from .simcore import (
    BUFFER,
    DELIVER,
    DROP,
    DROP_NOPATH,
    DROP_RETRY,
    DROP_TTL,
    FORWARD,
    GREEDY,
    PERIMETER,
    Decision,
    Packet,
    PerimeterState,
)
from .street_graph import (
    Point,
    StreetGraph,
    dijkstra,
    distance_to_street,
    nearest_intersection,
    street_direction_angle,
)

PROTOCOLS = ("gpsr", "gpcr", "pbla")
TWO_PI = 2.0 * math.pi

Neighbors = Mapping[int, Point]
Locate = Callable[[int, float], Point]


@dataclass(frozen=True)
class RoutingConfig:
    t_retry: float = 2.0
    d_int: float = 15.0
    street_tol: float = 1.0
    pbla_recovery: str = "retry"  # or "perimeter"

    def __post_init__(self):
        if self.pbla_recovery not in ("retry", "perimeter"):
            raise ValueError(f"pbla_recovery must be 'retry' or 'perimeter', got {self.pbla_recovery!r}")


# --------------------------------------------------------------------------
# shared pieces
# --------------------------------------------------------------------------


def greedy_next_hop(self_pos: Point, neighbors: Neighbors, target: Point) -> int | None:
    """Neighbor strictly closest to target, if it beats self; ties by smaller id."""
    best, best_d = None, math.dist(self_pos, target)
    for nid in sorted(neighbors):
        d = math.dist(neighbors[nid], target)
        if d < best_d:
            best, best_d = nid, d
    return best


def _prelude(packet: Packet, self_id: int, neighbors: Neighbors) -> Decision | None:
    if self_id == packet.dst:
        return Decision(DELIVER, packet)
    if packet.hops >= packet.ttl:
        return Decision(DROP, packet, reason=DROP_TTL)
    if packet.dst in neighbors:
        return _forward(packet, packet.dst, mode=GREEDY, perimeter=None)
    return None


def _forward(packet: Packet, next_hop: int, **changes) -> Decision:
    return Decision(FORWARD, replace(packet, buffered_since=None, **changes), next_hop)


def _buffer(packet: Packet, now: float, cfg: RoutingConfig, **changes) -> Decision:
    since = packet.buffered_since
    if since is not None and now - since >= cfg.t_retry:
        return Decision(DROP, replace(packet, **changes), reason=DROP_RETRY)
    return Decision(BUFFER, replace(packet, buffered_since=now if since is None else since, **changes))


# --------------------------------------------------------------------------
# Gabriel planarization and face routing
# --------------------------------------------------------------------------


def _gabriel_ok(pu: Point, pv: Point, witnesses) -> bool:
    duv = (pu[0] - pv[0]) ** 2 + (pu[1] - pv[1]) ** 2
    for pw in witnesses:
        duw = (pu[0] - pw[0]) ** 2 + (pu[1] - pw[1]) ** 2
        dvw = (pv[0] - pw[0]) ** 2 + (pv[1] - pw[1]) ** 2
        if duw + dvw < duv:  # angle at w is obtuse: w strictly inside the diameter circle
            return False
    return True


def planarize_gabriel(
    positions: Mapping[int, Point], edges: Sequence[tuple[int, int]] | None = None
) -> dict[int, list[int]]:
    """Keep edge (u, v) iff no other node lies strictly inside the circle on diameter uv.

    ``edges`` defaults to every pair. Returns a symmetric adjacency map.
    """
    ids = sorted(positions)
    if edges is None:
        edges = [(u, v) for i, u in enumerate(ids) for v in ids[i + 1 :]]
    kept: dict[int, list[int]] = {u: [] for u in ids}
    for u, v in edges:
        others = (positions[w] for w in ids if w != u and w != v)
        if _gabriel_ok(positions[u], positions[v], others):
            kept[u].append(v)
            kept[v].append(u)
    for u in kept:
        kept[u] = sorted(set(kept[u]))
    return kept


def gabriel_neighbors(self_pos: Point, neighbors: Neighbors) -> dict[int, Point]:
    """This node's planar neighbor set, judged on its own neighbor table."""
    out = {}
    for v, pv in sorted(neighbors.items()):
        others = (pw for w, pw in neighbors.items() if w != v)
        if _gabriel_ok(self_pos, pv, others):
            out[v] = pv
    return out


def _bearing(c: Point, p: Point) -> float:
    return math.atan2(p[1] - c[1], p[0] - c[0])


def _ccw_from(center: Point, ref: Point, candidates: Neighbors) -> int:
    """First candidate counterclockwise about center from the ray center->ref.
    A candidate lying on the ray itself comes last."""
    base = _bearing(center, ref)
    best, best_delta = None, math.inf
    for nid in sorted(candidates):
        delta = (_bearing(center, candidates[nid]) - base) % TWO_PI
        if delta <= 1e-12:
            delta = TWO_PI
        if delta < best_delta:
            best, best_delta = nid, delta
    return best


def _segment_intersection(p1: Point, p2: Point, q1: Point, q2: Point) -> Point | None:
    rx, ry = p2[0] - p1[0], p2[1] - p1[1]
    sx, sy = q2[0] - q1[0], q2[1] - q1[1]
    denom = rx * sy - ry * sx
    if abs(denom) < 1e-12:
        return None
    qpx, qpy = q1[0] - p1[0], q1[1] - p1[1]
    t = (qpx * sy - qpy * sx) / denom
    u = (qpx * ry - qpy * rx) / denom
    if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
        return (p1[0] + t * rx, p1[1] + t * ry)
    return None


def _perimeter_enter(
    packet: Packet, self_id: int, self_pos: Point, neighbors: Neighbors, target: Point, **changes
) -> Decision | None:
    planar = gabriel_neighbors(self_pos, neighbors)
    if not planar:
        return None
    nxt = _ccw_from(self_pos, target, planar)
    state = PerimeterState(self_pos, self_pos, (self_id, nxt), target)
    return _forward(packet, nxt, mode=PERIMETER, perimeter=state, **changes)


def _perimeter_continue(
    packet: Packet, self_id: int, self_pos: Point, neighbors: Neighbors, **changes
) -> Decision | None:
    st = packet.perimeter
    if st is None:
        raise ValueError(f"packet {packet.id} is in perimeter mode without perimeter state")
    planar = gabriel_neighbors(self_pos, neighbors)
    if not planar:
        return None
    prev = packet.prev_hop
    ref = planar.get(prev) if prev is not None else None
    if ref is None:
        ref = neighbors.get(prev, st.target) if prev is not None else st.target
    nxt = _ccw_from(self_pos, ref, planar)
    changed = False
    for _ in range(len(planar)):
        cross = _segment_intersection(self_pos, planar[nxt], st.face_pos, st.target)
        if cross is None or math.dist(cross, st.target) >= math.dist(st.face_pos, st.target):
            break
        nxt2 = _ccw_from(self_pos, planar[nxt], planar)
        st = replace(st, face_pos=cross, first_edge=(self_id, nxt2))
        nxt = nxt2
        changed = True
    if not changed and (self_id, nxt) == st.first_edge:
        return Decision(DROP, packet, reason=DROP_NOPATH)
    return _forward(packet, nxt, mode=PERIMETER, perimeter=st, **changes)


# --------------------------------------------------------------------------
# GPSR
# --------------------------------------------------------------------------


def gpsr_step(
    packet: Packet, self_id: int, self_pos: Point, neighbors: Neighbors, cfg: RoutingConfig, now: float = 0.0
) -> Decision:
    """Greedy toward the destination; face routing on a Gabriel subgraph at local maxima."""
    pre = _prelude(packet, self_id, neighbors)
    if pre is not None:
        return pre
    target = packet.dest_pos
    if packet.mode == PERIMETER:
        st = packet.perimeter
        if st is None:
            raise ValueError(f"packet {packet.id} is in perimeter mode without perimeter state")
        if math.dist(self_pos, st.target) >= math.dist(st.entry_pos, st.target):
            d = _perimeter_continue(packet, self_id, self_pos, neighbors)
            return d if d is not None else _buffer(packet, now, cfg)
    nh = greedy_next_hop(self_pos, neighbors, target)
    if nh is not None:
        return _forward(packet, nh, mode=GREEDY, perimeter=None)
    d = _perimeter_enter(packet, self_id, self_pos, neighbors, target)
    return d if d is not None else _buffer(packet, now, cfg, mode=GREEDY, perimeter=None)


def greedy_step(
    packet: Packet, self_id: int, self_pos: Point, neighbors: Neighbors, cfg: RoutingConfig, now: float = 0.0
) -> Decision:
    """Plain greedy toward the destination; local maxima only buffer and retry."""
    pre = _prelude(packet, self_id, neighbors)
    if pre is not None:
        return pre
    nh = greedy_next_hop(self_pos, neighbors, packet.dest_pos)
    if nh is not None:
        return _forward(packet, nh)
    return _buffer(packet, now, cfg)


# --------------------------------------------------------------------------
# GPCR
# --------------------------------------------------------------------------


def coordinator_of(pos: Point, graph: StreetGraph, d_int: float) -> int | None:
    """Intersection whose zone contains pos (nearest, then smallest id)."""
    best, best_d = None, math.inf
    for node in graph.intersections:
        d = math.dist(pos, node.position)
        if d <= d_int and d < best_d:
            best, best_d = node.id, d
    return best


def _street_remaining(graph: StreetGraph, junction: int, sid: int, target: Point) -> tuple:
    far = graph.streets[sid].other(junction)
    return (distance_to_street(graph, target, sid), math.dist(graph.position(far), target), sid)


def _clockwise_from(graph: StreetGraph, junction: int, first: int) -> list[int]:
    base = street_direction_angle(graph, first, junction)
    others = [sid for sid, _ in graph.adjacency[junction] if sid != first]
    return sorted(others, key=lambda s: ((base - street_direction_angle(graph, s, junction)) % TWO_PI, s))


def _along_street(
    packet: Packet,
    self_pos: Point,
    neighbors: Neighbors,
    graph: StreetGraph,
    cfg: RoutingConfig,
    sid: int,
    far: int,
) -> int | None:
    """Restricted greedy: next hop along street sid toward junction far (or the
    destination, when it lies on this street). Never skips past the junction."""
    target = packet.dest_pos
    far_pos = graph.position(far)
    dest_here = distance_to_street(graph, target, sid) <= cfg.street_tol
    goal = target if dest_here else far_pos
    if not dest_here:
        best, best_d = None, math.inf
        for nid in sorted(neighbors):
            npos = neighbors[nid]
            if coordinator_of(npos, graph, cfg.d_int) == far:
                d = math.dist(npos, far_pos)
                if d < best_d:
                    best, best_d = nid, d
        if best is not None:
            return best
    on_street = {
        nid: npos for nid, npos in neighbors.items() if distance_to_street(graph, npos, sid) <= cfg.street_tol
    }
    return greedy_next_hop(self_pos, on_street, goal)


def gpcr_step(
    packet: Packet,
    self_id: int,
    self_pos: Point,
    neighbors: Neighbors,
    graph: StreetGraph,
    cfg: RoutingConfig,
    now: float = 0.0,
) -> Decision:
    pre = _prelude(packet, self_id, neighbors)
    if pre is not None:
        return pre
    target = packet.dest_pos
    here = coordinator_of(self_pos, graph, cfg.d_int)

    if here is not None and here != packet.junction:
        # At a junction: pick the street heading closest to the target, then
        # repair clockwise (right-hand rule) when that street has no relay.
        ranked = sorted((sid for sid, _ in graph.adjacency[here]), key=lambda s: _street_remaining(graph, here, s, target))
        for sid in [ranked[0]] + _clockwise_from(graph, here, ranked[0]):
            far = graph.streets[sid].other(here)
            nh = _along_street(packet, self_pos, neighbors, graph, cfg, sid, far)
            if nh is not None:
                return _forward(packet, nh, street=sid, heading=far, junction=here)
        return _buffer(packet, now, cfg)

    sid, far = packet.street, packet.heading
    changes = {}
    if sid is None or (here is None and distance_to_street(graph, self_pos, sid) > cfg.street_tol):
        dists = [(distance_to_street(graph, self_pos, s.id), s.id) for s in graph.streets]
        sid = min(dists)[1]
        a, b = graph.streets[sid].endpoints
        far = min((a, b), key=lambda n: (math.dist(graph.position(n), target), n))
        changes = {"street": sid, "heading": far}
    nh = _along_street(packet, self_pos, neighbors, graph, cfg, sid, far)
    if nh is not None:
        return _forward(packet, nh, **changes)
    return _buffer(packet, now, cfg, **changes)


# --------------------------------------------------------------------------
# PBLA
# --------------------------------------------------------------------------


def _shared_street(graph: StreetGraph, p: Point, q: Point, tol: float) -> bool:
    return any(
        distance_to_street(graph, p, s.id) <= tol and distance_to_street(graph, q, s.id) <= tol
        for s in graph.streets
    )


def anchor_path(
    graph: StreetGraph,
    costs: Sequence[float],
    source_pos: Point,
    dest_pos: Point,
    tol: float = 1.0,
    trim: bool = True,
) -> list[int] | None:
    """Intersections a packet must visit between source and destination.

    Empty when both ends share a street. With ``trim``, an end anchor is dropped
    when the source (destination) already sits on the street leading to the
    next (previous) anchor, so the packet never backtracks to its nearest
    intersection first.
    """
    s_node = nearest_intersection(graph, source_pos)
    d_node = nearest_intersection(graph, dest_pos)
    if s_node == d_node or _shared_street(graph, source_pos, dest_pos, tol):
        return []
    path = dijkstra(graph, costs, s_node, d_node)
    if path is None:
        return None
    if trim and len(path) >= 2:
        sid = graph.street_between(path[0], path[1])
        if distance_to_street(graph, source_pos, sid) <= tol < math.dist(source_pos, graph.position(path[0])):
            path = path[1:]
    if trim and len(path) >= 2:
        sid = graph.street_between(path[-2], path[-1])
        if distance_to_street(graph, dest_pos, sid) <= tol < math.dist(dest_pos, graph.position(path[-1])):
            path = path[:-1]
    return path


def pbla_originate(
    packet: Packet,
    source_pos: Point,
    graph: StreetGraph,
    costs: Sequence[float],
    locate: Locate,
    now: float = 0.0,
    tol: float = 1.0,
    trim: bool = True,
) -> Packet | None:
    """Stamp the learned-cost anchor path into the header; None means drop(no-path)."""
    try:
        dest = locate(packet.dst, now)
    except (KeyError, LookupError):
        return None
    anchors = anchor_path(graph, costs, source_pos, dest, tol, trim)
    if anchors is None:
        return None
    return replace(packet, dest_pos=dest, anchors=tuple(anchors), next_anchor=0)


def pbla_step(
    packet: Packet,
    self_id: int,
    self_pos: Point,
    neighbors: Neighbors,
    graph: StreetGraph,
    cfg: RoutingConfig,
    now: float = 0.0,
    locate: Locate | None = None,
) -> Decision:
    """Greedy toward the next anchor, then toward the destination after the last one."""
    pre = _prelude(packet, self_id, neighbors)
    if pre is not None:
        return pre
    anchors = packet.anchors
    k = packet.next_anchor
    if k > len(anchors):
        raise ValueError(f"packet {packet.id}: anchor index {k} past {len(anchors)} anchors")
    dest = packet.dest_pos
    advanced = False
    while k < len(anchors) and math.dist(self_pos, graph.position(anchors[k])) <= cfg.d_int:
        k += 1
        advanced = True
        if locate is not None:
            dest = locate(packet.dst, now)
    target = graph.position(anchors[k]) if k < len(anchors) else dest
    changes = {"next_anchor": k, "dest_pos": dest}

    if packet.mode == PERIMETER and not advanced:
        st = packet.perimeter
        if st is not None and st.target == target and math.dist(self_pos, target) >= math.dist(st.entry_pos, target):
            d = _perimeter_continue(packet, self_id, self_pos, neighbors, **changes)
            if d is not None:
                return d
            return _buffer(packet, now, cfg, mode=GREEDY, perimeter=None, **changes)

    nh = greedy_next_hop(self_pos, neighbors, target)
    if nh is not None:
        return _forward(packet, nh, mode=GREEDY, perimeter=None, **changes)
    if cfg.pbla_recovery == "perimeter":
        d = _perimeter_enter(packet, self_id, self_pos, neighbors, target, **changes)
        if d is not None:
            return d
    return _buffer(packet, now, cfg, mode=GREEDY, perimeter=None, **changes)


def make_router(
    protocol: str,
    graph: StreetGraph,
    cfg: RoutingConfig,
    costs: Sequence[float] | None = None,
    locate: Locate | None = None,
    trim_anchors: bool = True,
):
    """(step, originate) callables for the simulation engine."""
    if protocol == "gpsr":
        return (lambda p, i, pos, nb, now: gpsr_step(p, i, pos, nb, cfg, now)), None
    if protocol == "gpcr":
        return (lambda p, i, pos, nb, now: gpcr_step(p, i, pos, nb, graph, cfg, now)), None
    if protocol == "pbla":
        if costs is None or locate is None:
            raise ValueError("pbla needs learned costs and a location service")

        def step(p, i, pos, nb, now):
            return pbla_step(p, i, pos, nb, graph, cfg, now, locate)

        def originate(p, pos, now):
            return pbla_originate(p, pos, graph, costs, locate, now, cfg.street_tol, trim_anchors)

        return step, originate
    raise ValueError(f"unknown protocol {protocol!r}; valid: {', '.join(PROTOCOLS)}")
