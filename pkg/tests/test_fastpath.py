"""The compiled kernel must reproduce the object engine counter for counter."""

import pytest

from portsim.engine import Simulation
from portsim.fastpath import FastSimulation

from conftest import berth_net, build, edge, exp, node, shed


def _both(scenario, horizon, seed=3, rep=0, sample_interval=None):
    ref = Simulation(scenario, master_seed=seed, replication=rep,
                     sample_interval=sample_interval).run_until(horizon)
    fast = FastSimulation(scenario, master_seed=seed, replication=rep,
                          sample_interval=sample_interval).run_until(horizon)
    return ref, fast


def congested(policy):
    """Two booths by shortest queue, then a slow screening shed with a short queue."""
    nodes = [node(1, "Source"), node(2, "ShortestQueueRouter"),
             shed(3, servers=1, service=exp(0.8)), shed(4, servers=1, service=exp(0.8)),
             shed(5, "X", servers=2, queue_capacity=3, exit_buffers=1, full_policy=policy,
                  service=exp(1.2)),
             node(6, "ProbRouter"), shed(7, "Y", servers=1, service=exp(3.0)), node(8, "Sink")]
    edges = [edge(1, 2), edge(2, 3), edge(2, 4), edge(3, 5), edge(4, 5), edge(5, 6),
             edge(6, 7, flag="flagged"), edge(6, 8, flag="clear"), edge(7, 8)]
    return build(nodes, edges, rate=95.0, clandestine=0.05, soft=0.5, tp=0.6, fp=0.2)


def load_modified():
    nodes = [node(1, "Source"), shed(2, "X", servers=1, service=exp(0.9)), node(3, "Sink")]
    drm = {"default": {"tp": 0.8, "fp": 0.05}, "load_modifier": {"alpha": 0.05, "q0": 2, "floor": 0.3}}
    return build(nodes, [edge(1, 2), edge(2, 3)], rate=60.0, clandestine=0.2, drm=drm)


def profiled_two_sources():
    profile = [2.0 if 6 <= h % 24 < 18 else 0.25 for h in range(168)]
    nodes = [node(1, "Source", share=0.7), node(2, "Source", share=0.3),
             shed(3, "X", servers=3, service=exp(1.0), applies_to="Soft"),
             shed(4, "Z", servers=3, service=exp(1.0)), node(5, "Sink")]
    edges = [edge(1, 3), edge(2, 3), edge(3, 4), edge(4, 5)]
    sc = build(nodes, edges, rate=40.0, clandestine=0.1, soft=0.4, tp=0.5, fp=0.1,
               mix={"general": 0.5, "wood": 0.5},
               drm={"default": {"tp": 0.5, "fp": 0.1},
                    "entries": [{"level": 2, "commodity": "wood", "threat": "clandestine",
                                 "sensor": "Z", "tp": 0.2, "fp": 0.6}]})
    raw = dict(sc.raw)
    raw["arrivals"] = dict(raw["arrivals"], profile=profile)
    from portsim.scenario import scenario_from_dict

    return scenario_from_dict(raw)


CASES = {
    "block": (lambda: congested("block"), 3000.0),
    "drop": (lambda: congested("drop"), 3000.0),
    "load-modifier": (load_modified, 3000.0),
    "profile-sources": (profiled_two_sources, 20_000.0),
    "recheck": (lambda: berth_net(mode="Recheck", interval=2.0, dwell=30.0, squads=2,
                                  rate=30.0, clandestine=0.3, tp=0.3, fp=0.1), 3000.0),
    "check-once": (lambda: berth_net(mode="CheckOnce", interval=1.5, dwell=20.0,
                                     rate=30.0, clandestine=0.3, tp=0.3), 3000.0),
}


@pytest.mark.parametrize("case", sorted(CASES))
def test_counters_identical(case):
    make, horizon = CASES[case]
    scenario = make()
    for rep in range(2):
        ref, fast = _both(scenario, horizon, rep=rep, sample_interval=250.0)
        assert ref == fast
        assert fast.conserved()


def test_congestion_exercised():
    ref, _ = _both(congested("block"), 3000.0)
    assert ref.blocked_at_end > 0 or ref.in_flight_at_end > 20
    ref, _ = _both(congested("drop"), 3000.0)
    assert ref.balked > 0


def test_calais_week(calais):
    ref, fast = _both(calais, 7 * 1440.0, seed=7)
    assert ref == fast


def test_run_until_in_steps(calais):
    whole = FastSimulation(calais, master_seed=2).run_until(2880.0)
    sim = FastSimulation(calais, master_seed=2)
    sim.run_until(1000.0)
    assert sim.run_until(2880.0) == whole
