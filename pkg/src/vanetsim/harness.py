"""Experiment orchestration: configuration, scenario construction, the learning
driver, per-pair metrics, aggregation and every on-disk format."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from .learning_automata import CostMatrix, TrafficDatabase, run_learning_phase
from .mobility import (
    SyntheticMobility,
    TraceMobility,
    TracePlayback,
    count_vehicles_per_street,
    ingest_trace,
    place_vehicles,
)
from .protocols import PROTOCOLS, RoutingConfig, make_router
from .simcore import DROP_NOPATH, DROP_RETRY, DROP_TTL, EngineParams, Origination, RadioConfig, Simulation
from .street_graph import Intersection, Street, StreetGraph, build_grid

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    # map
    map_file: str | None = None
    cols: int = 3
    rows: int = 6
    dx: float = 1000.0
    dy: float = 500.0
    # vehicles
    trace_file: str | None = None
    vehicles: int = 150
    placement: str = "random"
    speed_min: float = 8.0
    speed_max: float = 14.0
    mobility_dt: float = 0.5
    # radio
    tx_range: float = 500.0
    bitrate: float = 18e6
    packet_size: int = 512
    processing_delay: float = 0.001
    d_int: float = 15.0
    street_tol: float = 1.0
    obstacles: bool = True
    # traffic
    duration: float = 600.0
    pairs: int = 10
    packet_interval: float = 5.0
    protocols: tuple[str, ...] = PROTOCOLS
    # learning
    la_a: float = 0.1
    la_b: float = 0.1
    la_iterations: int | None = None  # None: 50 sampled steps per street
    la_sweep: bool = True
    learning_dt: float = 0.5
    bucket: str = "all-day"
    # routing
    ttl: int = 64
    t_retry: float = 2.0
    beacon_period: float = 1.0
    neighbor_expiry: float = 3.0
    pbla_recovery: str = "retry"
    anchor_trim: bool = True
    # reporting
    distance_bucket: float = 250.0
    seed: int = 1

    def validate(self) -> "SimConfig":
        positive = (
            "dx", "dy", "mobility_dt", "tx_range", "bitrate", "packet_size", "d_int",
            "packet_interval", "learning_dt", "ttl", "beacon_period", "neighbor_expiry",
            "distance_bucket",
        )  # fmt: skip
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        nonneg = ("duration", "processing_delay", "street_tol", "t_retry", "speed_min", "vehicles", "pairs")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.speed_max < self.speed_min:
            raise ConfigError("speed_max must be >= speed_min")
        if not (0 <= self.la_a < 1 and 0 <= self.la_b < 1):
            raise ConfigError("la_a and la_b must lie in [0, 1)")
        if self.la_iterations is not None and self.la_iterations < 0:
            raise ConfigError("la_iterations must be nonnegative")
        if self.placement not in ("random", "even"):
            raise ConfigError(f"placement must be 'random' or 'even', got {self.placement!r}")
        if self.pbla_recovery not in ("retry", "perimeter"):
            raise ConfigError(f"pbla_recovery must be 'retry' or 'perimeter', got {self.pbla_recovery!r}")
        bad = [p for p in self.protocols if p not in PROTOCOLS]
        if bad or not self.protocols:
            raise ConfigError(f"protocols: unknown {bad}; valid names: {', '.join(PROTOCOLS)}")
        if self.map_file is None and (self.cols < 1 or self.rows < 1 or self.cols * self.rows < 2):
            raise ConfigError(f"cols/rows: degenerate grid {self.cols}x{self.rows}")
        if self.pairs > 0 and self.trace_file is None and self.vehicles < 2:
            raise ConfigError("vehicles: need at least 2 vehicles to form source-destination pairs")
        ratio = self.beacon_period / self.mobility_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("beacon_period must be a whole multiple of mobility_dt")
        return self

    def radio(self) -> RadioConfig:
        return RadioConfig(
            self.tx_range, self.bitrate, self.processing_delay, self.d_int, self.street_tol, self.obstacles
        )

    def routing(self) -> RoutingConfig:
        return RoutingConfig(self.t_retry, self.d_int, self.street_tol, self.pbla_recovery)

    def engine(self) -> EngineParams:
        return EngineParams(
            self.duration, self.mobility_dt, self.beacon_period, self.neighbor_expiry, self.packet_size, self.ttl
        )


# --------------------------------------------------------------------------
# config file
# --------------------------------------------------------------------------

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(name: str, ftype: str, raw: str):
    raw = raw.strip()
    optional = "None" in ftype
    if optional and raw.lower() in ("", "none"):
        return None
    try:
        if ftype.startswith("bool"):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if ftype.startswith("int"):
            return int(raw)
        if ftype.startswith("float"):
            return float(raw)
        if ftype.startswith("tuple"):
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {ftype}") from None


def parse_config(text: str, base: SimConfig | None = None) -> SimConfig:
    """``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    types = {f.name: str(f.type) for f in dataclasses.fields(SimConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, types[key], raw)
    cfg = dataclasses.replace(base or SimConfig(), **values)
    return cfg.validate()


def load_config(path: str | Path) -> SimConfig:
    p = Path(path)
    cfg = parse_config(p.read_text(encoding="utf-8"))
    # relative file references resolve against the config's directory
    for key in ("map_file", "trace_file"):
        ref = getattr(cfg, key)
        if ref is not None and not Path(ref).is_absolute():
            cfg = dataclasses.replace(cfg, **{key: str(p.parent / ref)})
    return cfg


def format_config(cfg: SimConfig) -> str:
    lines = []
    for f in dataclasses.fields(SimConfig):
        v = getattr(cfg, f.name)
        if v is None:
            v = "none"
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, tuple):
            v = ",".join(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# map file
# --------------------------------------------------------------------------


def write_map(graph: StreetGraph, out: TextIO) -> None:
    out.write(f"intersections {graph.num_intersections}\n")
    for n in graph.intersections:
        out.write(f"{n.id} {n.position[0]:g} {n.position[1]:g}\n")
    out.write(f"streets {graph.num_streets}\n")
    for s in graph.streets:
        out.write(f"{s.id} {s.endpoints[0]} {s.endpoints[1]}\n")


def read_map(stream: TextIO | Iterable[str]) -> StreetGraph:
    lines = []
    for lineno, raw in enumerate(stream, start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            lines.append((lineno, text.split()))
    it = iter(lines)

    def header(word: str) -> int:
        try:
            lineno, parts = next(it)
        except StopIteration:
            raise ValueError(f"map file: missing '{word}' header") from None
        if len(parts) != 2 or parts[0] != word or not parts[1].isdigit():
            raise ValueError(f"map line {lineno}: expected '{word} <count>'")
        return int(parts[1])

    def body(count: int, what: str, shape: str):
        for _ in range(count):
            item = next(it, None)
            if item is None:
                raise ValueError(f"map file: ended before all {count} {what} lines")
            lineno, parts = item
            if len(parts) != 3:
                raise ValueError(f"map line {lineno}: expected '{shape}'")
            try:
                yield lineno, int(parts[0]), parts[1], parts[2]
            except ValueError:
                raise ValueError(f"map line {lineno}: malformed id {parts[0]!r}") from None

    nodes = []
    for lineno, nid, x, y in body(header("intersections"), "intersection", "id x y"):
        try:
            nodes.append(Intersection(nid, (float(x), float(y))))
        except ValueError:
            raise ValueError(f"map line {lineno}: malformed coordinates") from None
    streets = []
    for lineno, sid, a, b in body(header("streets"), "street", "id a b"):
        try:
            a, b = int(a), int(b)
        except ValueError:
            raise ValueError(f"map line {lineno}: malformed endpoint ids") from None
        if not (0 <= a < len(nodes) and 0 <= b < len(nodes)):
            raise ValueError(f"map line {lineno}: street references unknown intersection")
        length = math.dist(nodes[a].position, nodes[b].position)
        streets.append(Street(sid, (a, b), length))
    extra = next(it, None)
    if extra is not None:
        raise ValueError(f"map line {extra[0]}: unexpected trailing content")
    graph = StreetGraph(nodes, streets)
    if not graph.is_connected():
        raise ValueError("map file: street graph is not connected")
    return graph


# --------------------------------------------------------------------------
# cost database
# --------------------------------------------------------------------------


def write_cost_db(db: TrafficDatabase, out: TextIO) -> None:
    for label, cm in db.buckets.items():
        out.write(f"bucket {label}\n")
        out.write(f"r {len(cm)}\n")
        for sid, (p, c) in enumerate(zip(cm.p_final, cm.cost)):
            out.write(f"{sid} {p!r} {c!r}\n")


def read_cost_db(stream: TextIO | Iterable[str]) -> TrafficDatabase:
    db = TrafficDatabase()
    rows = [(n, line.split()) for n, line in enumerate(stream, start=1) if line.split("#", 1)[0].strip()]
    k = 0
    while k < len(rows):
        lineno, parts = rows[k]
        if len(parts) < 2 or parts[0] != "bucket":
            raise ValueError(f"cost db line {lineno}: expected 'bucket <label>'")
        label = " ".join(parts[1:])
        if k + 1 >= len(rows) or rows[k + 1][1][0] != "r" or len(rows[k + 1][1]) != 2:
            raise ValueError(f"cost db line {lineno + 1}: expected 'r <count>'")
        r = int(rows[k + 1][1][1])
        body = rows[k + 2 : k + 2 + r]
        if len(body) != r:
            raise ValueError(f"cost db bucket {label!r}: expected {r} street lines, got {len(body)}")
        ps, cs = [], []
        for expect, (ln, cols) in enumerate(body):
            if len(cols) != 3 or int(cols[0]) != expect:
                raise ValueError(f"cost db line {ln}: expected '{expect} p_final cost'")
            p, c = float(cols[1]), float(cols[2])
            if abs(c - r * (1.0 - p)) > 1e-9:
                raise ValueError(f"cost db line {ln}: cost {c} != r(1-p) = {r * (1.0 - p)}")
            ps.append(p)
            cs.append(c)
        db.add(label, CostMatrix(cs, ps))
        k += 2 + r
    if not db.buckets:
        raise ValueError("cost db holds no buckets")
    return db


# --------------------------------------------------------------------------
# scenario
# --------------------------------------------------------------------------


def substream(seed: int, name: str) -> random.Random:
    return random.Random(f"{seed}:{name}")


def build_graph(cfg: SimConfig) -> StreetGraph:
    if cfg.map_file:
        with open(cfg.map_file, encoding="utf-8") as fh:
            return read_map(fh)
    return build_grid(cfg.cols, cfg.rows, cfg.dx, cfg.dy)


def load_playback(cfg: SimConfig) -> TracePlayback | None:
    if not cfg.trace_file:
        return None
    with open(cfg.trace_file, encoding="utf-8", newline="") as fh:
        return TracePlayback(ingest_trace(fh))


def build_mobility(cfg: SimConfig, graph: StreetGraph, seed: int, stream: str, playback=None):
    if playback is not None:
        return TraceMobility(playback)
    rng = substream(seed, stream)
    speeds = (cfg.speed_min, cfg.speed_max)
    states = place_vehicles(graph, cfg.vehicles, rng, speeds, cfg.placement)
    return SyntheticMobility(graph, states, rng, speeds)


def build_schedule(cfg: SimConfig, n_vehicles: int, seed: int) -> list[Origination]:
    """Random distinct source-destination pairs, each emitting at a fixed interval
    from a random phase."""
    if cfg.pairs == 0 or cfg.duration <= 0:
        return []
    if n_vehicles < 2:
        raise ConfigError("vehicles: need at least 2 vehicles to form source-destination pairs")
    pick = substream(seed, "pairs")
    phase = substream(seed, "schedule")
    out = []
    for pair in range(cfg.pairs):
        src, dst = pick.sample(range(n_vehicles), 2)
        t = phase.uniform(0.0, cfg.packet_interval)
        k = 0
        while t + k * cfg.packet_interval < cfg.duration:
            out.append(Origination(t + k * cfg.packet_interval, pair, src, dst))
            k += 1
    return out


# --------------------------------------------------------------------------
# learning driver
# --------------------------------------------------------------------------


def learn_costs(cfg: SimConfig, graph: StreetGraph, seed: int, playback=None) -> CostMatrix:
    """One global automaton fed by location-service street counts on its own
    mobility realization; mobility advances one learning tick per update."""
    mobility = build_mobility(cfg, graph, seed, "learning-mobility", playback)
    clock = {"t": 0.0}
    counts = {"v": count_vehicles_per_street(mobility.positions, graph, cfg.street_tol)}

    def density(sid: int) -> int:
        return counts["v"][sid]

    def tick() -> None:
        clock["t"] += cfg.learning_dt
        mobility.advance(clock["t"], cfg.learning_dt)
        counts["v"] = count_vehicles_per_street(mobility.positions, graph, cfg.street_tol)

    iterations = cfg.la_iterations if cfg.la_iterations is not None else 50 * graph.num_streets
    return run_learning_phase(
        graph,
        density,
        iterations,
        cfg.la_a,
        cfg.la_b,
        substream(seed, "learning"),
        tx_range=cfg.tx_range,
        sweep=cfg.la_sweep,
        on_step=tick,
    )


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


@dataclass
class MetricsRecord:
    protocol: str
    seed: int
    pair: int
    distance_m: float
    sent: int = 0
    delivered: int = 0
    hops: list[int] = field(default_factory=list)
    drops: dict[str, int] = field(default_factory=lambda: {r: 0 for r in (DROP_TTL, DROP_RETRY, DROP_NOPATH)})

    @property
    def mean_hops(self) -> float | None:
        return statistics.fmean(self.hops) if self.hops else None

    @property
    def pdr(self) -> float | None:
        return self.delivered / self.sent if self.sent else None


def _records_from_outcomes(protocol: str, seed: int, schedule, outcomes) -> list[MetricsRecord]:
    by_pair: dict[int, list] = {}
    for o in outcomes:
        by_pair.setdefault(o.pair, []).append(o)
    pairs = sorted({o.pair for o in schedule})
    out = []
    for pair in pairs:
        outs = sorted(by_pair.get(pair, []), key=lambda o: o.packet)
        dist = statistics.fmean(o.distance for o in outs) if outs else 0.0
        rec = MetricsRecord(protocol, seed, pair, dist, sent=len(outs))
        for o in outs:
            if o.delivered:
                rec.delivered += 1
                rec.hops.append(o.hops)
            else:
                rec.drops[o.reason] += 1
        out.append(rec)
    return out


def run_protocol(
    cfg: SimConfig,
    protocol: str,
    seed: int,
    graph: StreetGraph | None = None,
    costs: CostMatrix | None = None,
    playback=None,
    return_sim: bool = False,
):
    """One (protocol, seed) run over the seed's mobility and pair schedule."""
    graph = graph or build_graph(cfg)
    if playback is None:
        playback = load_playback(cfg)
    mobility = build_mobility(cfg, graph, seed, "mobility", playback)
    schedule = build_schedule(cfg, mobility.count, seed)
    routing = cfg.routing()
    sim = Simulation(graph, cfg.radio(), cfg.engine(), mobility, None, schedule, protocol)
    locate = sim.location.position
    step, originate = make_router(
        protocol, graph, routing, costs.cost if costs is not None else None, locate, cfg.anchor_trim
    )
    sim.step = step
    sim.originate = originate
    outcomes = sim.run()
    records = _records_from_outcomes(protocol, seed, schedule, outcomes)
    return (records, sim) if return_sim else records


def run_experiment(cfg: SimConfig, costs: CostMatrix | None = None, seed: int | None = None) -> list[MetricsRecord]:
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    graph = build_graph(cfg)
    playback = load_playback(cfg)
    if "pbla" in cfg.protocols and costs is None:
        costs = learn_costs(cfg, graph, seed, playback)
    if costs is not None and len(costs) != graph.num_streets:
        raise ConfigError(f"costs: database has {len(costs)} streets, map has {graph.num_streets}")
    records = []
    for protocol in cfg.protocols:
        records.extend(run_protocol(cfg, protocol, seed, graph, costs if protocol == "pbla" else None, playback))
    return records


def _experiment_task(args):
    cfg, costs, seed = args
    return run_experiment(cfg, costs, seed)


def run_seeds(
    cfg: SimConfig, seeds: Sequence[int], costs: CostMatrix | None = None, jobs: int = 1
) -> list[MetricsRecord]:
    tasks = [(cfg, costs, s) for s in seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_experiment_task, tasks))
    else:
        chunks = [_experiment_task(t) for t in tasks]
    records = [r for chunk in chunks for r in chunk]
    order = {p: k for k, p in enumerate(PROTOCOLS)}
    return sorted(records, key=lambda r: (order[r.protocol], r.seed, r.pair))


METRICS_HEADER = [
    "protocol", "seed", "pair", "distance_m", "sent", "delivered", "mean_hops",
    "drops_ttl", "drops_retry", "drops_nopath",
]  # fmt: skip


def _fmt(x: float | None, digits: int = 4) -> str:
    return "NA" if x is None else f"{x:.{digits}f}"


def write_metrics(records: Iterable[MetricsRecord], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in records:
        w.writerow(
            [
                r.protocol, r.seed, r.pair, f"{r.distance_m:.3f}", r.sent, r.delivered, _fmt(r.mean_hops),
                r.drops[DROP_TTL], r.drops[DROP_RETRY], r.drops[DROP_NOPATH],
            ]
        )  # fmt: skip


def read_metrics(stream: TextIO) -> list[MetricsRecord]:
    """Round-trip of write_metrics; per-packet hops are rebuilt as the mean repeated."""
    reader = csv.DictReader(stream)
    if reader.fieldnames != METRICS_HEADER:
        raise ValueError(f"metrics header mismatch: {reader.fieldnames}")
    out = []
    for row in reader:
        delivered = int(row["delivered"])
        mean = None if row["mean_hops"] == "NA" else float(row["mean_hops"])
        out.append(
            MetricsRecord(
                row["protocol"], int(row["seed"]), int(row["pair"]), float(row["distance_m"]),
                int(row["sent"]), delivered, [mean] * delivered if mean is not None else [],
                {DROP_TTL: int(row["drops_ttl"]), DROP_RETRY: int(row["drops_retry"]),
                 DROP_NOPATH: int(row["drops_nopath"])},
            )
        )  # fmt: skip
    return out


@dataclass
class BucketSummary:
    lo: float
    hi: float
    protocol: str
    records: int
    sent: int
    delivered: int
    pdr: float | None
    mean_hops: float | None
    std_hops: float | None

    @property
    def n(self) -> int:
        return self.sent


def aggregate(records: Iterable[MetricsRecord], bucket_width: float) -> list[BucketSummary]:
    """Pooled PDR and delivered-only hop statistics per (distance bucket, protocol).

    Every bucket from 0 up to the farthest populated one is reported for every
    protocol present; buckets with nothing sent carry PDR None (written "NA").
    """
    if bucket_width <= 0:
        raise ValueError("bucket width must be positive")
    records = list(records)
    if not records:
        return []
    protocols = sorted({r.protocol for r in records}, key=lambda p: (PROTOCOLS.index(p) if p in PROTOCOLS else 99, p))
    top = max(int(r.distance_m // bucket_width) for r in records)
    cells: dict[tuple[int, str], list[MetricsRecord]] = {}
    for r in records:
        cells.setdefault((int(r.distance_m // bucket_width), r.protocol), []).append(r)
    out = []
    for b in range(top + 1):
        for proto in protocols:
            rs = [r for r in cells.get((b, proto), []) if r.sent > 0]
            sent = sum(r.sent for r in rs)
            delivered = sum(r.delivered for r in rs)
            hops = [h for r in rs for h in r.hops]
            out.append(
                BucketSummary(
                    b * bucket_width,
                    (b + 1) * bucket_width,
                    proto,
                    len(rs),
                    sent,
                    delivered,
                    delivered / sent if sent else None,
                    statistics.fmean(hops) if hops else None,
                    statistics.pstdev(hops) if hops else None,
                )
            )
    return out


SUMMARY_HEADER = ["bucket_lo_m", "bucket_hi_m", "protocol", "records", "sent", "delivered", "pdr", "mean_hops", "std_hops"]


def write_summary(rows: Iterable[BucketSummary], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for s in rows:
        w.writerow(
            [f"{s.lo:g}", f"{s.hi:g}", s.protocol, s.records, s.sent, s.delivered,
             _fmt(s.pdr), _fmt(s.mean_hops), _fmt(s.std_hops)]
        )  # fmt: skip


def protocol_totals(records: Iterable[MetricsRecord]) -> dict[str, tuple[float | None, float | None]]:
    """Pooled PDR and delivered-only mean hops per protocol."""
    sent: dict[str, int] = {}
    delivered: dict[str, int] = {}
    hops: dict[str, list[int]] = {}
    for r in records:
        sent[r.protocol] = sent.get(r.protocol, 0) + r.sent
        delivered[r.protocol] = delivered.get(r.protocol, 0) + r.delivered
        hops.setdefault(r.protocol, []).extend(r.hops)
    return {
        p: (delivered[p] / sent[p] if sent[p] else None, statistics.fmean(hops[p]) if hops[p] else None)
        for p in sent
    }


def summary_text(rows: Sequence[BucketSummary]) -> str:
    buf = io.StringIO()
    write_summary(rows, buf)
    return buf.getvalue()
