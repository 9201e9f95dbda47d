"""Command-line entry point: gen-scenario, learn, run, compare."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import harness
from .learning_automata import TrafficDatabase
from .mobility import TraceError
from .protocols import PROTOCOLS
from .street_graph import build_grid


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # keep diagnostics to one line
        raise CliError(message)


def parse_seeds(text: str) -> list[int]:
    """'1..10', '3' or '1,4,9' (ranges allowed inside the comma list)."""
    seeds: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if ".." in part:
                lo, hi = (int(x) for x in part.split("..", 1))
                if hi < lo:
                    raise CliError(f"--seeds: empty range {part!r}")
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
    except ValueError:
        raise CliError(f"--seeds: cannot parse {text!r}; use e.g. 1..10 or 1,2,5") from None
    if len(set(seeds)) != len(seeds):
        raise CliError(f"--seeds: duplicate seeds in {text!r}")
    return seeds


def parse_protocols(text: str) -> tuple[str, ...]:
    names = tuple(p.strip() for p in text.split(",") if p.strip())
    bad = [p for p in names if p not in PROTOCOLS]
    if bad or not names:
        raise CliError(f"--protocols: unknown protocol {', '.join(bad) or '(none)'}; valid names: {', '.join(PROTOCOLS)}")
    return names


def _load_costs(path: str, bucket: str | None):
    try:
        with open(path, encoding="utf-8") as fh:
            db = harness.read_cost_db(fh)
    except FileNotFoundError:
        raise CliError(f"--costs: no such file {path}") from None
    try:
        return db.get(bucket if bucket in db.buckets else None)
    except KeyError as exc:
        raise CliError(f"--costs: {exc.args[0]}") from None


def _config(args) -> harness.SimConfig:
    cfg = harness.load_config(args.config) if args.config else harness.SimConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg.validate()


def _write(path: str, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def cmd_gen_scenario(args) -> str:
    g = build_grid(args.cols, args.rows, args.dx, args.dy)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        harness.write_map(g, fh)
    return f"wrote {g.num_intersections} intersections, {g.num_streets} streets to {args.out}"


def cmd_learn(args) -> str:
    cfg = _config(args)
    graph = harness.build_graph(cfg)
    costs = harness.learn_costs(cfg, graph, cfg.seed, harness.load_playback(cfg))
    db = TrafficDatabase()
    db.add(cfg.bucket, costs)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        harness.write_cost_db(db, fh)
    return f"learned {len(costs)} street costs (bucket {cfg.bucket}) -> {args.out}"


def cmd_run(args) -> str:
    cfg = _config(args)
    if args.protocol == "pbla" and not args.costs:
        raise CliError("--costs is required for protocol pbla (create one with 'learn')")
    graph = harness.build_graph(cfg)
    costs = _load_costs(args.costs, cfg.bucket) if args.protocol == "pbla" else None
    if costs is not None and len(costs) != graph.num_streets:
        raise CliError(f"--costs: database has {len(costs)} streets, map has {graph.num_streets}")
    records = harness.run_protocol(cfg, args.protocol, cfg.seed, graph, costs)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        harness.write_metrics(records, fh)
    return _totals_line(records)


def cmd_compare(args) -> str:
    cfg = _config(args)
    cfg = dataclasses.replace(cfg, protocols=parse_protocols(args.protocols))
    seeds = parse_seeds(args.seeds)
    costs = _load_costs(args.costs, cfg.bucket) if args.costs else None
    if args.jobs < 1:
        raise CliError("--jobs must be at least 1")
    records = harness.run_seeds(cfg, seeds, costs, args.jobs)
    _write(args.out, harness.summary_text(harness.aggregate(records, cfg.distance_bucket)))
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8", newline="\n") as fh:
            harness.write_metrics(records, fh)
    return _totals_line(records)


def _totals_line(records) -> str:
    parts = []
    for proto, (pdr, hops) in harness.protocol_totals(records).items():
        pdr_s = "NA" if pdr is None else f"{pdr:.4f}"
        hops_s = "NA" if hops is None else f"{hops:.2f}"
        parts.append(f"{proto}: pdr={pdr_s} hops={hops_s}")
    return "; ".join(parts) if parts else "no packets sent"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vanetsim", description="Position-based VANET routing simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-scenario", help="write a grid street map")
    g.add_argument("--cols", type=int, default=3)
    g.add_argument("--rows", type=int, default=6)
    g.add_argument("--dx", type=float, default=1000.0)
    g.add_argument("--dy", type=float, default=500.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_scenario)

    lr = sub.add_parser("learn", help="run the learning phase and write a cost database")
    lr.add_argument("--config")
    lr.add_argument("--out", required=True)
    lr.add_argument("--seed", type=int)
    lr.set_defaults(func=cmd_learn)

    r = sub.add_parser("run", help="single-protocol run, per-pair metrics CSV")
    r.add_argument("--config")
    r.add_argument("--protocol", required=True, choices=PROTOCOLS)
    r.add_argument("--costs")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="multi-seed comparison, bucketed summary CSV")
    c.add_argument("--config")
    c.add_argument("--protocols", default=",".join(PROTOCOLS))
    c.add_argument("--seeds", default="1..10")
    c.add_argument("--costs", help="shared cost database; learned per seed when omitted")
    c.add_argument("--out", required=True)
    c.add_argument("--metrics", help="also write the per-pair metrics CSV here")
    c.add_argument("--jobs", type=int, default=1)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        msg = args.func(args)
    except CliError as exc:
        print(f"vanetsim: error: {exc}", file=sys.stderr)
        return 2
    except (harness.ConfigError, TraceError, ValueError, KeyError, OSError, RuntimeError) as exc:
        text = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"vanetsim: error: {text}", file=sys.stderr)
        return 1
    if msg:
        print(msg)
    return 0
