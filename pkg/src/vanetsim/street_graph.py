"""City map as a planar graph: intersections are vertices, streets are edges."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Point = tuple[float, float]


@dataclass(frozen=True)
class Intersection:
    id: int
    position: Point


@dataclass(frozen=True)
class Street:
    id: int
    endpoints: tuple[int, int]
    length: float

    def other(self, node: int) -> int:
        a, b = self.endpoints
        if node == a:
            return b
        if node == b:
            return a
        raise ValueError(f"intersection {node} is not an endpoint of street {self.id}")


@dataclass
class StreetGraph:
    intersections: list[Intersection]
    streets: list[Street]
    adjacency: list[list[tuple[int, int]]] = field(default_factory=list)

    def __post_init__(self):
        for k, node in enumerate(self.intersections):
            if node.id != k:
                raise ValueError(f"intersection ids must be dense 0..V-1, got {node.id} at {k}")
        if len({n.position for n in self.intersections}) != len(self.intersections):
            raise ValueError("intersection positions must be unique")
        n = len(self.intersections)
        adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for k, s in enumerate(self.streets):
            if s.id != k:
                raise ValueError(f"street ids must be dense 0..E-1, got {s.id} at {k}")
            a, b = s.endpoints
            if a == b:
                raise ValueError(f"street {s.id} has identical endpoints")
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"street {s.id} references unknown intersection")
            expected = math.dist(self.intersections[a].position, self.intersections[b].position)
            if not math.isclose(s.length, expected, rel_tol=1e-9, abs_tol=1e-9):
                raise ValueError(f"street {s.id} length {s.length} != endpoint distance {expected}")
            adj[a].append((s.id, b))
            adj[b].append((s.id, a))
        for row in adj:
            row.sort()
        self.adjacency = adj
        # Cached arrays for vectorized geometry.
        self.node_xy = np.array([n.position for n in self.intersections], dtype=float).reshape(-1, 2)
        self.seg_a = np.array(
            [self.intersections[s.endpoints[0]].position for s in self.streets], dtype=float
        ).reshape(-1, 2)
        self.seg_b = np.array(
            [self.intersections[s.endpoints[1]].position for s in self.streets], dtype=float
        ).reshape(-1, 2)
        inc = np.zeros((len(self.streets), n), dtype=bool)
        for s in self.streets:
            inc[s.id, s.endpoints[0]] = True
            inc[s.id, s.endpoints[1]] = True
        self.incidence = inc

    @property
    def num_streets(self) -> int:
        return len(self.streets)

    @property
    def num_intersections(self) -> int:
        return len(self.intersections)

    def position(self, node: int) -> Point:
        return self.intersections[node].position

    def street_between(self, u: int, v: int) -> int | None:
        """Smallest street id joining u and v, or None."""
        for sid, far in self.adjacency[u]:
            if far == v:
                return sid
        return None

    def is_connected(self) -> bool:
        if not self.intersections:
            return False
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for _, v in self.adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == len(self.intersections)

    @classmethod
    def from_edges(cls, positions: Sequence[Point], edges: Iterable[tuple[int, int]]) -> "StreetGraph":
        nodes = [Intersection(i, (float(x), float(y))) for i, (x, y) in enumerate(positions)]
        streets = []
        for k, (a, b) in enumerate(edges):
            streets.append(Street(k, (a, b), math.dist(nodes[a].position, nodes[b].position)))
        return cls(nodes, streets)


def build_grid(cols: int, rows: int, dx: float, dy: float) -> StreetGraph:
    """Axis-aligned grid with intersection (i, j) at (i*dx, j*dy).

    Intersection ids run column-fastest: id = j*cols + i. Horizontal streets
    are numbered before vertical ones.
    """
    if cols < 1 or rows < 1 or cols * rows < 2:
        raise ValueError(f"degenerate grid {cols}x{rows}: need cols, rows >= 1 and at least 2 intersections")
    if dx <= 0 or dy <= 0:
        raise ValueError("grid spacing dx, dy must be positive")
    positions = [(i * float(dx), j * float(dy)) for j in range(rows) for i in range(cols)]
    edges = []
    for j in range(rows):
        for i in range(cols - 1):
            edges.append((j * cols + i, j * cols + i + 1))
    for i in range(cols):
        for j in range(rows - 1):
            edges.append((j * cols + i, (j + 1) * cols + i))
    return StreetGraph.from_edges(positions, edges)


def path_cost(graph: StreetGraph, costs: Sequence[float], path: Sequence[int]) -> float:
    """Sum of the cheapest street cost between each consecutive pair, left to right."""
    total = 0.0
    for u, v in zip(path, path[1:]):
        total += min(costs[sid] for sid, far in graph.adjacency[u] if far == v)
    return total


def dijkstra(graph: StreetGraph, costs: Sequence[float], src: int, dst: int) -> list[int] | None:
    """Minimum-cost intersection sequence from src to dst, inclusive.

    Ties are broken by fewer hops, then lexicographically by intersection id.
    Returns None when dst is unreachable.
    """
    n = graph.num_intersections
    if not (0 <= src < n and 0 <= dst < n):
        raise ValueError(f"intersection id out of range: src={src} dst={dst}")
    if len(costs) != graph.num_streets:
        raise ValueError(f"cost vector has {len(costs)} entries, graph has {graph.num_streets} streets")
    for c in costs:
        if not (math.isfinite(c) and c >= 0):
            raise ValueError(f"street costs must be finite and nonnegative, got {c}")

    best: dict[int, tuple[float, int, tuple[int, ...]]] = {src: (0.0, 0, (src,))}
    heap = [(0.0, 0, (src,))]
    done: set[int] = set()
    while heap:
        cost, hops, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        if u == dst:
            return list(path)
        for sid, v in graph.adjacency[u]:
            if v in done:
                continue
            label = (cost + costs[sid], hops + 1, path + (v,))
            if v not in best or label < best[v]:
                best[v] = label
                heapq.heappush(heap, label)
    return None


def _point_segment_distance(p: Point, a: Point, b: Point) -> float:
    ax, ay = a
    bx, by = b
    px, py = p
    vx, vy = bx - ax, by - ay
    seg2 = vx * vx + vy * vy
    t = ((px - ax) * vx + (py - ay) * vy) / seg2 if seg2 > 0 else 0.0
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * vx), py - (ay + t * vy))


def distance_to_street(graph: StreetGraph, p: Point, street: int) -> float:
    a, b = graph.streets[street].endpoints
    return _point_segment_distance(p, graph.position(a), graph.position(b))


def nearest_intersection(graph: StreetGraph, p: Point) -> int:
    best_id, best_d = 0, math.inf
    for node in graph.intersections:
        d = math.dist(p, node.position)
        if d < best_d:
            best_id, best_d = node.id, d
    return best_id


def locate_street(graph: StreetGraph, p: Point, tol: float) -> int | None:
    """Smallest-id street whose segment lies within tol of p."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    for s in graph.streets:
        if distance_to_street(graph, p, s.id) <= tol:
            return s.id
    return None


def segment_distances(graph: StreetGraph, points: np.ndarray) -> np.ndarray:
    """(n, E) point-to-segment distances."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    a = graph.seg_a[None, :, :]
    v = (graph.seg_b - graph.seg_a)[None, :, :]
    w = pts[:, None, :] - a
    seg2 = np.einsum("...k,...k->...", v, v)
    t = np.clip(np.einsum("...k,...k->...", w, v) / seg2, 0.0, 1.0)
    closest = a + t[..., None] * v
    return np.linalg.norm(pts[:, None, :] - closest, axis=-1)


def street_direction_angle(graph: StreetGraph, street: int, from_node: int) -> float:
    """Heading (radians) of a street as seen leaving from_node."""
    far = graph.streets[street].other(from_node)
    (x0, y0), (x1, y1) = graph.position(from_node), graph.position(far)
    return math.atan2(y1 - y0, x1 - x0)
