"""Static-topology scenarios driven through the real engine."""

from vanetsim.mobility import TraceMobility, TracePlayback, TraceRecord
from vanetsim.protocols import RoutingConfig, greedy_step, make_router
from vanetsim.simcore import EngineParams, Origination, RadioConfig, Simulation


def static_mobility(positions):
    series = {k: [TraceRecord(0.0, k, tuple(map(float, p)), 0.0)] for k, p in enumerate(positions)}
    return TraceMobility(TracePlayback(series))


def run_static(
    graph,
    positions,
    protocol,
    pairs,
    radio=None,
    routing=None,
    costs=None,
    duration=10.0,
    start=0.5,
    ttl=64,
):
    """One packet per (src, dst) in ``pairs`` at time ``start``; returns (outcomes, sim)."""
    radio = radio or RadioConfig()
    routing = routing or RoutingConfig(d_int=radio.d_int, street_tol=radio.street_tol)
    mobility = static_mobility(positions)
    schedule = [Origination(start, k, s, d) for k, (s, d) in enumerate(pairs)]
    params = EngineParams(duration=duration, ttl=ttl)
    sim = Simulation(graph, radio, params, mobility, None, schedule, protocol)
    if protocol == "greedy":
        sim.step = lambda p, i, pos, nb, now: greedy_step(p, i, pos, nb, routing, now)
    else:
        sim.step, sim.originate = make_router(protocol, graph, routing, costs, sim.location.position)
    return sim.run(), sim
