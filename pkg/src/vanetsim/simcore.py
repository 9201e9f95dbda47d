"""Deterministic discrete-event engine with an obstacle-aware radio channel,
periodic beaconing, neighbor tables and the location-service oracle."""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from .mobility import count_vehicles_per_street
from .street_graph import Point, StreetGraph, distance_to_street, segment_distances

log = logging.getLogger(__name__)

MOBILITY_TICK = "mobility-tick"
BEACON = "beacon"
PACKET_ARRIVAL = "packet-arrival"
RETRY_TIMEOUT = "retry-timeout"
LEARNING_TICK = "learning-tick"
PACKET_ORIGINATION = "packet-origination"

GREEDY = "greedy"
PERIMETER = "perimeter"

FORWARD = "forward"
BUFFER = "buffer"
DELIVER = "deliver"
DROP = "drop"

DROP_TTL = "ttl-exceeded"
DROP_RETRY = "retry-timeout"
DROP_NOPATH = "no-path"
DROP_REASONS = (DROP_TTL, DROP_RETRY, DROP_NOPATH)


# --------------------------------------------------------------------------
# Event queue
# --------------------------------------------------------------------------


@dataclass(order=True)
class Event:
    time: float
    sequence: int
    kind: str = field(compare=False)
    payload: Any = field(default=None, compare=False)


class EventQueue:
    """Pops in (time, sequence) order; FIFO among equal times."""

    def __init__(self):
        self._heap: list[Event] = []
        self._seq = itertools.count()
        self.now = 0.0

    def schedule(self, time: float, kind: str, payload: Any = None) -> Event:
        if time < self.now:
            raise ValueError(f"cannot schedule {kind} at {time} before current time {self.now}")
        ev = Event(time, next(self._seq), kind, payload)
        heapq.heappush(self._heap, ev)
        return ev

    def pop_next(self) -> Event | None:
        if not self._heap:
            return None
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        return ev

    def __len__(self) -> int:
        return len(self._heap)


# --------------------------------------------------------------------------
# Radio channel
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RadioConfig:
    tx_range: float = 500.0
    bitrate: float = 18e6
    processing_delay: float = 0.001
    d_int: float = 15.0
    street_tol: float = 1.0
    obstacles: bool = True

    def __post_init__(self):
        for name in ("tx_range", "bitrate", "d_int"):
            if getattr(self, name) <= 0:
                raise ValueError(f"radio {name} must be positive")
        if self.processing_delay < 0 or self.street_tol < 0:
            raise ValueError("processing delay and street tolerance must be nonnegative")


def hop_delay(size: int, cfg: RadioConfig) -> float:
    """Serialization plus per-hop processing delay, seconds."""
    if size <= 0:
        raise ValueError("packet size must be positive")
    return 8.0 * size / cfg.bitrate + cfg.processing_delay


def _streets_near(p: Point, graph: StreetGraph, tol: float) -> set[int]:
    return {s.id for s in graph.streets if distance_to_street(graph, p, s.id) <= tol}


def _zones_near(p: Point, graph: StreetGraph, radius: float) -> set[int]:
    return {n.id for n in graph.intersections if math.dist(p, n.position) <= radius}


def line_of_sight(pa: Point, pb: Point, graph: StreetGraph, cfg: RadioConfig) -> bool:
    """Manhattan line of sight: same street, shared junction zone, or a street
    feeding a junction whose zone holds the other end."""
    sa, sb = _streets_near(pa, graph, cfg.street_tol), _streets_near(pb, graph, cfg.street_tol)
    if sa & sb:
        return True
    za, zb = _zones_near(pa, graph, cfg.d_int), _zones_near(pb, graph, cfg.d_int)
    if za & zb:
        return True
    for streets, zones in ((sa, zb), (sb, za)):
        for sid in streets:
            if set(graph.streets[sid].endpoints) & zones:
                return True
    return False


def deliverable(pa: Point, pb: Point, graph: StreetGraph, cfg: RadioConfig) -> bool:
    if math.dist(pa, pb) > cfg.tx_range:
        return False
    if not cfg.obstacles:
        return True
    return line_of_sight(pa, pb, graph, cfg)


def deliverable_matrix(positions: np.ndarray, graph: StreetGraph, cfg: RadioConfig) -> np.ndarray:
    """(n, n) boolean reachability; diagonal is False."""
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    d2 = (x[:, None] - x[None, :]) ** 2 + (y[:, None] - y[None, :]) ** 2
    ok = np.sqrt(d2) <= cfg.tx_range
    if cfg.obstacles:
        on = (segment_distances(graph, pts) <= cfg.street_tol).astype(float)
        zd = np.hypot(x[:, None] - graph.node_xy[None, :, 0], y[:, None] - graph.node_xy[None, :, 1])
        zone = (zd <= cfg.d_int).astype(float)
        feeds = ((on @ graph.incidence.astype(float)) > 0).astype(float)  # junctions ending my streets
        los = (on @ on.T > 0) | (zone @ zone.T > 0)
        cross = feeds @ zone.T > 0
        los |= cross | cross.T
        ok &= los
    np.fill_diagonal(ok, False)
    return ok


# --------------------------------------------------------------------------
# Neighbor tables
# --------------------------------------------------------------------------


class NeighborTables:
    """Per-vehicle map neighbor id -> (last position, last beacon time)."""

    def __init__(self, n: int, expiry: float):
        if expiry <= 0:
            raise ValueError("neighbor expiry must be positive")
        self.expiry = expiry
        self.tables: list[dict[int, tuple[Point, float]]] = [dict() for _ in range(n)]

    def update(self, receiver: int, sender: int, position: Point, time: float) -> None:
        self.tables[receiver][sender] = (position, time)

    def view(self, node: int, now: float) -> dict[int, Point]:
        table = self.tables[node]
        stale = [k for k, (_, t) in table.items() if now - t > self.expiry]
        for k in stale:
            del table[k]
        return {k: pos for k, (pos, _) in sorted(table.items())}

    def forget(self, node: int, neighbor: int) -> None:
        self.tables[node].pop(neighbor, None)


def emit_beacons(
    time: float,
    positions: np.ndarray,
    graph: StreetGraph,
    cfg: RadioConfig,
    tables: NeighborTables,
    reach: np.ndarray | None = None,
) -> np.ndarray:
    """Every vehicle beacons its position; receivers upsert their tables."""
    if reach is None:
        reach = deliverable_matrix(positions, graph, cfg)
    senders, receivers = np.nonzero(reach)
    pos = [tuple(map(float, p)) for p in positions]
    for s, r in zip(senders.tolist(), receivers.tolist()):
        tables.update(r, s, pos[s], time)
    return reach


# --------------------------------------------------------------------------
# Packets and forwarding decisions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PerimeterState:
    entry_pos: Point  # where the packet left greedy mode
    face_pos: Point  # where the packet entered the current face
    first_edge: tuple[int, int]
    target: Point


@dataclass
class Packet:
    id: int
    src: int
    dst: int
    dest_pos: Point
    protocol: str
    size: int = 512
    ttl: int = 64
    created: float = 0.0
    pair: int = 0
    mode: str = GREEDY
    anchors: tuple[int, ...] = ()
    next_anchor: int = 0
    perimeter: PerimeterState | None = None
    street: int | None = None  # street being followed between junctions
    heading: int | None = None  # junction the packet is travelling toward
    junction: int | None = None  # last junction where a street was chosen
    hops: int = 0
    prev_hop: int | None = None
    buffered_since: float | None = None
    trace: list[tuple[float, int, str]] = field(default_factory=list)


@dataclass
class Decision:
    outcome: str
    packet: Packet
    next_hop: int | None = None
    reason: str | None = None


# --------------------------------------------------------------------------
# Location service
# --------------------------------------------------------------------------


class LocationService:
    """Omniscient oracle over the mobility model, with optional staleness."""

    def __init__(self, mobility, graph: StreetGraph, tol: float = 1.0, history: float = 30.0):
        self.mobility = mobility
        self.graph = graph
        self.tol = tol
        self.history_span = history
        self._history: deque[tuple[float, np.ndarray]] = deque()

    def record(self, time: float, positions: np.ndarray) -> None:
        self._history.append((time, positions.copy()))
        while self._history and self._history[0][0] < time - self.history_span:
            self._history.popleft()

    def _positions_at(self, t: float) -> np.ndarray:
        if hasattr(self.mobility, "positions_at"):
            return self.mobility.positions_at(t)
        chosen = None
        for ht, pos in self._history:
            if ht <= t + 1e-12:
                chosen = pos
            else:
                break
        if chosen is None:
            if not self._history:
                return self.mobility.positions
            chosen = self._history[0][1]
        return chosen

    def position(self, vehicle: int, now: float, staleness: float = 0.0) -> Point:
        if not 0 <= vehicle < self.mobility.count:
            raise KeyError(f"unknown vehicle {vehicle}")
        if staleness <= 0:
            p = self.mobility.positions[vehicle]
        else:
            p = self._positions_at(now - staleness)[vehicle]
        return (float(p[0]), float(p[1]))

    def street_count(self, street: int, now: float, staleness: float = 0.0) -> int:
        if not 0 <= street < self.graph.num_streets:
            raise KeyError(f"unknown street {street}")
        pos = self.mobility.positions if staleness <= 0 else self._positions_at(now - staleness)
        return count_vehicles_per_street(pos, self.graph, self.tol)[street]


# --------------------------------------------------------------------------
# Engine
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EngineParams:
    duration: float = 600.0
    mobility_dt: float = 0.5
    beacon_period: float = 1.0
    neighbor_expiry: float = 3.0
    packet_size: int = 512
    ttl: int = 64

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("duration must be nonnegative")
        if self.mobility_dt <= 0 or self.beacon_period <= 0:
            raise ValueError("mobility tick and beacon period must be positive")
        ratio = self.beacon_period / self.mobility_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("beacon period must be a whole multiple of the mobility tick")


@dataclass(frozen=True)
class Origination:
    time: float
    pair: int
    src: int
    dst: int


@dataclass
class PacketOutcome:
    packet: int
    pair: int
    delivered: bool
    hops: int
    reason: str | None
    distance: float
    created: float
    finished: float


StepFn = Callable[[Packet, int, Point, dict, float], Decision]
OriginateFn = Callable[[Packet, Point, float], Packet | None]


class Simulation:
    """Drives mobility, beacons and packet forwarding for one protocol."""

    def __init__(
        self,
        graph: StreetGraph,
        radio: RadioConfig,
        params: EngineParams,
        mobility,
        step: StepFn,
        schedule: Iterable[Origination],
        protocol: str,
        originate: OriginateFn | None = None,
    ):
        self.graph = graph
        self.radio = radio
        self.params = params
        self.mobility = mobility
        self.step = step
        self.originate = originate
        self.protocol = protocol
        self.queue = EventQueue()
        self.tables = NeighborTables(mobility.count, params.neighbor_expiry)
        self.location = LocationService(mobility, graph, radio.street_tol)
        self.outcomes: list[PacketOutcome] = []
        self.events: list[tuple[float, int, str]] = []
        self.in_flight = 0
        self._hop_delay = hop_delay(params.packet_size, radio)
        self._packet_ids = itertools.count()
        self._beacon_every = int(round(params.beacon_period / params.mobility_dt))
        self._origin_distance: dict[int, float] = {}
        self._geo: np.ndarray | None = None
        self._schedule = sorted(schedule, key=lambda o: (o.time, o.pair))
        for o in self._schedule:
            if o.time < params.duration:
                self.queue.schedule(o.time, PACKET_ORIGINATION, o)
        self.queue.schedule(0.0, MOBILITY_TICK, 0)

    # -- helpers -----------------------------------------------------------

    def pos(self, node: int) -> Point:
        p = self.mobility.positions[node]
        return (float(p[0]), float(p[1]))

    def reach(self) -> np.ndarray:
        """deliverable() over all current vehicle pairs, cached until the next move."""
        if self._geo is None:
            self._geo = deliverable_matrix(self.mobility.positions, self.graph, self.radio)
        return self._geo

    def link_ok(self, a: int, b: int) -> bool:
        return bool(self.reach()[a, b])

    def _finish(self, packet: Packet, now: float, delivered: bool, reason: str | None = None) -> None:
        self.in_flight -= 1
        packet.trace.append((now, packet.prev_hop if delivered else -1, DELIVER if delivered else reason))
        self.outcomes.append(
            PacketOutcome(
                packet.id,
                packet.pair,
                delivered,
                packet.hops,
                reason,
                self._origin_distance.pop(packet.id),
                packet.created,
                now,
            )
        )

    def _periodic_active(self, now: float) -> bool:
        return now <= self.params.duration or self.in_flight > 0

    # -- event handlers ----------------------------------------------------

    def _on_mobility(self, now: float, tick: int) -> None:
        if tick > 0:
            self.mobility.advance(now, self.params.mobility_dt)
            self._geo = None
        self.location.record(now, self.mobility.positions)
        if tick % self._beacon_every == 0:
            self.queue.schedule(now, BEACON, tick)
        nxt = (tick + 1) * self.params.mobility_dt
        if self._periodic_active(nxt):
            self.queue.schedule(nxt, MOBILITY_TICK, tick + 1)

    def _on_beacon(self, now: float) -> None:
        emit_beacons(now, self.mobility.positions, self.graph, self.radio, self.tables, self.reach())

    def _on_origination(self, now: float, o: Origination) -> None:
        pkt = Packet(
            id=next(self._packet_ids),
            src=o.src,
            dst=o.dst,
            dest_pos=self.location.position(o.dst, now),
            protocol=self.protocol,
            size=self.params.packet_size,
            ttl=self.params.ttl,
            created=now,
            pair=o.pair,
        )
        self.in_flight += 1
        self._origin_distance[pkt.id] = math.dist(self.pos(o.src), pkt.dest_pos)
        pkt.trace.append((now, o.src, PACKET_ORIGINATION))
        if self.originate is not None:
            updated = self.originate(pkt, self.pos(o.src), now)
            if updated is None:
                self._finish(pkt, now, False, DROP_NOPATH)
                return
            pkt = updated
        self._process(pkt, o.src, now)

    def _process(self, packet: Packet, node: int, now: float) -> None:
        neighbors = self.tables.view(node, now)
        here = self.pos(node)
        for _ in range(len(neighbors) + 1):
            d = self.step(packet, node, here, neighbors, now)
            if d.outcome == FORWARD:
                nh = d.next_hop
                if nh not in neighbors:
                    raise RuntimeError(f"protocol chose {nh}, which is not a neighbor of {node}")
                if not self.link_ok(node, nh):
                    # link-layer failure: neighbor moved out of reach since its beacon
                    neighbors = {k: v for k, v in neighbors.items() if k != nh}
                    self.tables.forget(node, nh)
                    continue
                pkt = d.packet
                pkt.hops += 1
                pkt.prev_hop = node
                pkt.trace.append((now, node, FORWARD))
                self.queue.schedule(now + self._hop_delay, PACKET_ARRIVAL, (pkt, nh))
                return
            if d.outcome == DELIVER:
                self._finish(d.packet, now, True)
                return
            if d.outcome == DROP:
                self._finish(d.packet, now, False, d.reason)
                return
            if d.outcome == BUFFER:
                pkt = d.packet
                pkt.trace.append((now, node, BUFFER))
                self.queue.schedule(now + self.params.beacon_period, RETRY_TIMEOUT, (pkt, node))
                return
            raise ValueError(f"unknown forwarding outcome {d.outcome!r}")
        raise RuntimeError("forwarding loop failed to settle")

    def _on_retry(self, now: float, packet: Packet, node: int) -> None:
        packet.dest_pos = self.location.position(packet.dst, now)
        self._process(packet, node, now)

    # -- main loop ---------------------------------------------------------

    def run(self) -> list[PacketOutcome]:
        while True:
            ev = self.queue.pop_next()
            if ev is None:
                break
            self.events.append((ev.time, ev.sequence, ev.kind))
            if ev.kind == MOBILITY_TICK:
                self._on_mobility(ev.time, ev.payload)
            elif ev.kind == BEACON:
                self._on_beacon(ev.time)
            elif ev.kind == PACKET_ORIGINATION:
                self._on_origination(ev.time, ev.payload)
            elif ev.kind == PACKET_ARRIVAL:
                pkt, node = ev.payload
                pkt.trace.append((ev.time, node, PACKET_ARRIVAL))
                self._process(pkt, node, ev.time)
            elif ev.kind == RETRY_TIMEOUT:
                pkt, node = ev.payload
                self._on_retry(ev.time, pkt, node)
            else:
                raise ValueError(f"unhandled event kind {ev.kind}")
        if self.in_flight:
            raise RuntimeError(f"{self.in_flight} packets unresolved at end of run")
        return self.outcomes
