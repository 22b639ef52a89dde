"""Shared scenario builders and the acceptance report hook."""

import copy

import pytest

from portsim.scenario import scenario_from_dict

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
        terminalreporter.write_line(line)


def exp(mean):
    return {"family": "Exponential", "mean": mean}


def const(value):
    return {"family": "Constant", "value": value}


def shed(nid, sensor=None, servers=1, service=None, **extra):
    node = {"id": nid, "kind": "ServiceShed", "sensor": sensor, "servers": servers,
            "service_time": service or exp(0.1)}
    node.update(extra)
    return node


def node(nid, kind, **extra):
    return {"id": nid, "kind": kind, **extra}


def edge(src, dst, **extra):
    return {"from": src, "to": dst, **extra}


def build(nodes, edges, *, rate=60.0, clandestine=0.0, soft=1.0, tp=0.5, fp=0.0,
          horizon=1000.0, berth=None, jumps=None, drm=None, mix=None, **run):
    """Scenario from a node/edge list with a flat DRM (every sensor ``tp``/``fp``)."""
    data = {
        "name": "test",
        "arrivals": {"base_rate": rate, "clandestine_probability": clandestine,
                     "soft_fraction": soft, "commodity_mix": mix or {"general": 1.0}},
        "nodes": copy.deepcopy(nodes),
        "edges": copy.deepcopy(edges),
        "drm": drm if drm is not None else {"default": {"tp": tp, "fp": fp}},
        "berth": berth,
        "run": {"horizon": horizon, "seed": 1, "replications": 2, **run},
    }
    if jumps:
        data["jumps"] = jumps
    return scenario_from_dict(data)


def tandem(sensors=("A", "B"), **kw):
    """Source -> one shed per sensor in series -> Sink."""
    n = len(sensors)
    nodes = [node(1, "Source")]
    nodes += [shed(i + 2, s, servers=20) for i, s in enumerate(sensors)]
    nodes.append(node(n + 2, "Sink"))
    edges = [edge(i, i + 1) for i in range(1, n + 2)]
    return build(nodes, edges, **kw)


def split_net(**kw):
    """Half to stage A, half to B then C (the 0.44 net at tp 0.3/0.3/0.4)."""
    nodes = [node(1, "Source"), node(2, "ProbRouter"),
             shed(3, "A", servers=20), shed(4, "B", servers=20), shed(5, "C", servers=20),
             node(6, "Sink")]
    edges = [edge(1, 2), edge(2, 3, p=0.5), edge(2, 4, p=0.5), edge(3, 6), edge(4, 5), edge(5, 6)]
    return build(nodes, edges, **kw)


def diversion_net(**kw):
    """Stage A; flagged lorries go to a deep search D, clear ones face a 1/3 spot check S."""
    nodes = [node(1, "Source"), shed(2, "A", servers=20), node(3, "ProbRouter"),
             shed(4, "D", servers=20), node(5, "ProbRouter"), shed(6, "S", servers=20),
             node(7, "Sink")]
    edges = [edge(1, 2), edge(2, 3), edge(3, 4, flag="flagged"), edge(3, 5, flag="clear"),
             edge(4, 7), edge(5, 6, p=1 / 3), edge(5, 7, p=2 / 3), edge(6, 7)]
    return build(nodes, edges, **kw)


def berth_net(mode="Recheck", interval=10.0, dwell=45.0, squads=1, **kw):
    """Source -> Berth -> Sink with constant dwell and squad interval."""
    nodes = [node(1, "Source"), node(2, "Berth"), node(3, "Sink")]
    edges = [edge(1, 2), edge(2, 3)]
    berth = {"mode": mode, "dwell_time": const(dwell),
             "squads": [{"check_interval": const(interval), "soft_sensor": "probe",
                         "hard_action": "open"} for _ in range(squads)]}
    return build(nodes, edges, berth=berth, **kw)


@pytest.fixture
def calais():
    from portsim.scenario import load_scenario

    return load_scenario("calais-default")
