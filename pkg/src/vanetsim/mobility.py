"""Vehicle movement: synthetic random-turn traffic on the street graph, or
playback of a recorded trace."""

from __future__ import annotations

import bisect
import csv
import io
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .street_graph import Point, StreetGraph, locate_street, segment_distances

TRACE_HEADER = ["time", "vehicle", "x", "y", "speed"]


@dataclass
class VehicleState:
    id: int
    position: Point
    speed: float
    street: int
    heading: int  # intersection the vehicle is driving toward
    route: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class TraceRecord:
    time: float
    vehicle: int
    position: Point
    speed: float


def _move_toward(p: Point, q: Point, dist: float) -> Point:
    d = math.dist(p, q)
    if d <= 0:
        return q
    f = dist / d
    return (p[0] + (q[0] - p[0]) * f, p[1] + (q[1] - p[1]) * f)


def _next_street(v: VehicleState, graph: StreetGraph, rng: random.Random) -> int:
    node = v.heading
    if v.route:
        nxt = v.route.pop(0)
        sid = graph.street_between(node, nxt)
        if sid is None:
            raise ValueError(f"vehicle {v.id}: route step {node}->{nxt} is not a street")
        return sid
    options = [sid for sid, _ in graph.adjacency[node] if sid != v.street]
    if not options:  # dead end
        return v.street
    return options[rng.randrange(len(options))]


def step_synthetic(
    states: list[VehicleState],
    graph: StreetGraph,
    dt: float,
    rng: random.Random,
    speed_range: tuple[float, float] = (8.0, 14.0),
) -> list[VehicleState]:
    """Advance every vehicle by speed*dt along its route, in place.

    Overshoot past an intersection carries onto the next street.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    lo, hi = speed_range
    for v in states:
        remaining = v.speed * dt
        while True:
            target = graph.position(v.heading)
            gap = math.dist(v.position, target)
            if remaining <= 0 or remaining < gap:
                if remaining > 0:
                    v.position = _move_toward(v.position, target, remaining)
                break
            v.position = target
            remaining -= gap
            sid = _next_street(v, graph, rng)
            v.heading = graph.streets[sid].other(v.heading)
            v.street = sid
            v.speed = rng.uniform(lo, hi)
    return states


def place_vehicles(
    graph: StreetGraph,
    count: int,
    rng: random.Random,
    speed_range: tuple[float, float] = (8.0, 14.0),
    placement: str = "random",
) -> list[VehicleState]:
    """Initial vehicles on the map.

    ``random``: street chosen proportional to length, uniform offset, random direction.
    ``even``: equal spacing along the concatenated street list, ends included.
    """
    lo, hi = speed_range
    lengths = [s.length for s in graph.streets]
    total = sum(lengths)
    out = []
    if placement == "even":
        step = total / (count - 1) if count > 1 else 0.0
        offsets = [min(total, k * step) for k in range(count)]
    elif placement == "random":
        offsets = None
    else:
        raise ValueError(f"unknown placement {placement!r}; expected 'random' or 'even'")
    cum = np.cumsum(lengths)
    for k in range(count):
        if offsets is None:
            u = rng.random() * total
            forward = rng.random() < 0.5
        else:
            u = offsets[k]
            forward = True
        sid = min(int(np.searchsorted(cum, u, side="right")), len(lengths) - 1)
        s = graph.streets[sid]
        start = cum[sid] - s.length
        frac = min(1.0, max(0.0, (u - start) / s.length))
        a, b = s.endpoints
        pa, pb = graph.position(a), graph.position(b)
        pos = (pa[0] + (pb[0] - pa[0]) * frac, pa[1] + (pb[1] - pa[1]) * frac)
        out.append(VehicleState(k, pos, rng.uniform(lo, hi), sid, b if forward else a))
    return out


class TraceError(ValueError):
    pass


def ingest_trace(stream: TextIO | Iterable[str]) -> dict[int, list[TraceRecord]]:
    """Parse a trace CSV into per-vehicle, time-ordered records."""
    reader = csv.reader(stream)
    series: dict[int, list[TraceRecord]] = {}
    for lineno, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if lineno == 1 and [c.strip() for c in row] == TRACE_HEADER:
            continue
        if len(row) != len(TRACE_HEADER):
            raise TraceError(f"line {lineno}: expected {len(TRACE_HEADER)} columns, got {len(row)}")
        try:
            t = float(row[0])
            vid = int(row[1])
            x, y, speed = float(row[2]), float(row[3]), float(row[4])
        except ValueError as exc:
            raise TraceError(f"line {lineno}: malformed record ({exc})") from None
        if t < 0:
            raise TraceError(f"line {lineno}: negative time {t}")
        recs = series.setdefault(vid, [])
        if recs and t <= recs[-1].time:
            raise TraceError(
                f"line {lineno}: vehicle {vid} time {t} does not increase past {recs[-1].time}"
            )
        recs.append(TraceRecord(t, vid, (x, y), speed))
    return series


def parse_trace_text(text: str) -> dict[int, list[TraceRecord]]:
    return ingest_trace(io.StringIO(text))


class TracePlayback:
    """Linear interpolation of recorded positions; clamps outside the sampled span."""

    def __init__(self, series: dict[int, list[TraceRecord]]):
        if not series:
            raise TraceError("trace holds no vehicles")
        self.ids = sorted(series)
        self._times = {v: [r.time for r in series[v]] for v in self.ids}
        self._recs = series

    def position(self, vehicle: int, t: float) -> Point:
        times = self._times[vehicle]
        recs = self._recs[vehicle]
        k = bisect.bisect_right(times, t)
        if k == 0:
            return recs[0].position
        if k == len(times):
            return recs[-1].position
        r0, r1 = recs[k - 1], recs[k]
        f = (t - r0.time) / (r1.time - r0.time)
        return (
            r0.position[0] + (r1.position[0] - r0.position[0]) * f,
            r0.position[1] + (r1.position[1] - r0.position[1]) * f,
        )

    def speed(self, vehicle: int, t: float) -> float:
        times = self._times[vehicle]
        k = max(0, bisect.bisect_right(times, t) - 1)
        return self._recs[vehicle][k].speed

    def positions(self, t: float) -> list[Point]:
        return [self.position(v, t) for v in self.ids]


def count_vehicles_per_street(positions: Iterable[Point], graph: StreetGraph, tol: float) -> list[int]:
    """Dense per-street counts; a vehicle on several streets goes to the smallest id."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    counts = [0] * graph.num_streets
    pts = np.asarray(list(positions), dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return counts
    on = segment_distances(graph, pts) <= tol
    has = on.any(axis=1)
    first = on.argmax(axis=1)
    for sid in first[has]:
        counts[int(sid)] += 1
    return counts


def count_vehicles_scalar(positions: Iterable[Point], graph: StreetGraph, tol: float) -> list[int]:
    """Reference implementation via locate_street, one vehicle at a time."""
    counts = [0] * graph.num_streets
    for p in positions:
        sid = locate_street(graph, p, tol)
        if sid is not None:
            counts[sid] += 1
    return counts


class SyntheticMobility:
    """Random-turn traffic; positions exposed as an (n, 2) array."""

    def __init__(
        self,
        graph: StreetGraph,
        states: list[VehicleState],
        rng: random.Random,
        speed_range: tuple[float, float] = (8.0, 14.0),
    ):
        self.graph = graph
        self.states = states
        self.rng = rng
        self.speed_range = speed_range
        self.positions = np.array([v.position for v in states], dtype=float).reshape(-1, 2)

    @property
    def count(self) -> int:
        return len(self.states)

    def advance(self, now: float, dt: float) -> None:
        step_synthetic(self.states, self.graph, dt, self.rng, self.speed_range)
        self.positions = np.array([v.position for v in self.states], dtype=float).reshape(-1, 2)


class TraceMobility:
    """Trace playback; node k corresponds to the k-th smallest trace vehicle id."""

    def __init__(self, playback: TracePlayback, start: float = 0.0):
        self.playback = playback
        self.ids = playback.ids
        self.positions = self.positions_at(start)

    @property
    def count(self) -> int:
        return len(self.ids)

    def positions_at(self, t: float) -> np.ndarray:
        return np.array(self.playback.positions(t), dtype=float).reshape(-1, 2)

    def advance(self, now: float, dt: float) -> None:
        self.positions = self.positions_at(now)
