"""Exact system detection probability on acyclic screening topologies.

Two independent evaluations are provided and are expected to agree:

* ``analytic_detection`` walks every route a clandestine lorry can take
  before it is found (the flag stays clear until the first true positive)
  and sums ``P(route) * (1 - prod(1 - tp))`` over them;
* ``outcome_tree_detection`` enumerates every screening outcome (TP, FN,
  FP, TN) with the flag-dependent routing that follows it and adds up the
  probability of the leaves where the clandestines were found.

The Berth is outside the oracle's scope: a reduced scenario passes lorries
straight through it.
"""

from __future__ import annotations

import graphlib
from dataclasses import dataclass, field

from .core import Side
from .network import NodeKind
from .screening import ProfileCache

DEFAULT_PATH_CAP = 1_000_000
PROB_TOL = 1e-9


class OracleError(ValueError):
    """The net cannot be evaluated exactly."""


class CyclicNetError(OracleError):
    pass


class PathCapError(OracleError):
    pass


@dataclass(frozen=True)
class AnalyticNet:
    """Screening stages joined by branch probabilities.

    ``routes[node][flagged]`` lists ``(target, probability)`` pairs for a
    lorry leaving ``node`` with that flag state; terminal nodes have no
    routes.  ``tp[node]`` is ``None`` for nodes that do not screen.
    """

    tp: dict
    routes: dict
    entries: tuple
    fp: dict = field(default_factory=dict)
    # set when shortest-queue routing was replaced by an equal split over
    # stages that do not screen alike
    approximate: bool = False

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_edges(cls, tp: dict, edges, entry, fp: dict | None = None) -> "AnalyticNet":
        """Build from ``(source, target[, p[, flag]])`` tuples.

        ``flag`` is ``"flagged"``, ``"clear"`` or ``None`` (both); ``p``
        defaults to 1.  Nodes without outgoing edges are terminal.
        """
        routes: dict = {n: {False: [], True: []} for n in tp}
        for e in edges:
            src, dst = e[0], e[1]
            p = e[2] if len(e) > 2 and e[2] is not None else 1.0
            flag = e[3] if len(e) > 3 else None
            for n in (src, dst):
                routes.setdefault(n, {False: [], True: []})
            for flagged in (False, True):
                if flag is None or (flag == "flagged") == flagged:
                    routes[src][flagged].append((dst, float(p)))
        frozen = {n: ({} if not r[False] and not r[True]
                      else {k: tuple(v) for k, v in r.items()})
                  for n, r in routes.items()}
        full_tp = {n: tp.get(n) for n in frozen}
        return cls(full_tp, frozen, ((entry, 1.0),), dict(fp or {}))

    def validate(self) -> None:
        for n, t in self.tp.items():
            if t is not None and not 0.0 <= t <= 1.0:
                raise OracleError(f"stage {n}: tp={t!r} outside [0, 1]")
        for n, r in self.routes.items():
            if not r:
                continue
            for flagged in (False, True):
                branches = r.get(flagged, ())
                total = sum(p for _, p in branches)
                if abs(total - 1.0) > PROB_TOL:
                    state = "flagged" if flagged else "clear"
                    raise OracleError(f"node {n}: {state} branches sum to {total!r}, not 1")
                for target, _ in branches:
                    if target not in self.routes:
                        raise OracleError(f"node {n}: branch to unknown node {target}")
        if abs(sum(w for _, w in self.entries) - 1.0) > PROB_TOL:
            raise OracleError("entry weights must sum to 1")
        sorter = graphlib.TopologicalSorter()
        for n, r in self.routes.items():
            sorter.add(n, *{t for branches in r.values() for t, _ in branches})
        try:
            sorter.prepare()
        except graphlib.CycleError as exc:
            cycle = " -> ".join(map(str, exc.args[1]))
            raise CyclicNetError(f"screening net has a cycle: {cycle}") from None

    def with_common_tp(self, p: float, fp: float | None = None) -> "AnalyticNet":
        """Every screening stage set to sensitivity ``p`` (and optionally ``fp``)."""
        tp = {n: (None if t is None else float(p)) for n, t in self.tp.items()}
        new_fp = dict(self.fp)
        if fp is not None:
            new_fp = {n: float(fp) for n, t in self.tp.items() if t is not None}
        return AnalyticNet(tp, self.routes, self.entries, new_fp, self.approximate)

    @property
    def stages(self) -> list:
        return [n for n, t in self.tp.items() if t is not None]


def _clear_paths(net: AnalyticNet, cap: int):
    """Yield ``(probability, miss, stages)`` for each route taken with a clear flag."""
    count = 0
    stack = [(node, w, 1.0, 0) for node, w in reversed(net.entries) if w > 0]
    while stack:
        node, prob, miss, stages = stack.pop()
        t = net.tp.get(node)
        if t is not None:
            miss *= 1.0 - t
            stages += 1
        routes = net.routes[node]
        if not routes:
            count += 1
            if count > cap:
                raise PathCapError(f"more than {cap} paths; raise the cap or simplify the net")
            yield prob, miss, stages
            continue
        for target, p in reversed(routes[False]):
            if p > 0.0:
                stack.append((target, prob * p, miss, stages))


def analytic_detection(net: AnalyticNet, cap: int = DEFAULT_PATH_CAP) -> float:
    """P(detect | clandestine aboard) by the path-product formula."""
    return sum(prob * (1.0 - miss) for prob, miss, _ in _clear_paths(net, cap))


def min_stages(net: AnalyticNet, cap: int = DEFAULT_PATH_CAP) -> int:
    """Fewest screenings on any route a clandestine lorry can take."""
    return min((s for _, _, s in _clear_paths(net, cap)), default=0)


def outcome_tree_detection(net: AnalyticNet, cap: int = DEFAULT_PATH_CAP) -> float:
    """P(detect | clandestine aboard) by enumerating every screening outcome."""
    found = 0.0
    leaves = 0
    # (node, probability, flagged, clandestines still aboard)
    stack = [(node, w, False, True) for node, w in reversed(net.entries) if w > 0]
    while stack:
        node, prob, flagged, aboard = stack.pop()
        t = net.tp.get(node)
        if t is None:
            outcomes = ((1.0, flagged, aboard),)
        elif aboard:
            outcomes = ((t, True, False), (1.0 - t, False, True))
        else:
            f = net.fp.get(node, 0.0)
            outcomes = ((f, True, False), (1.0 - f, False, False))
        routes = net.routes[node]
        for q, flag_after, aboard_after in outcomes:
            if q <= 0.0:
                continue
            if not routes:
                leaves += 1
                if leaves > cap:
                    raise PathCapError(f"more than {cap} outcome paths")
                if not aboard_after:
                    found += prob * q
                continue
            for target, p in routes[flag_after]:
                if p > 0.0:
                    stack.append((target, prob * q * p, flag_after, aboard_after))
    return found


# -- scenario reduction -------------------------------------------------------

def reduce_scenario(scenario, side: Side, commodity: str, common_tp: float | None = None
                    ) -> AnalyticNet:
    """Acyclic screening net seen by one class of lorry in ``scenario``.

    Routers keep the branch probabilities that apply to ``side``; a
    shortest-queue router becomes an equal split; jumps, the Berth and sheds
    without a sensor (or not applying to ``side``) pass lorries through.
    Sensitivities come from the DRM, or ``common_tp`` when given.
    """
    graph = scenario.graph
    tp: dict = {}
    fp: dict = {}
    routes: dict = {}
    approximate = False
    for nid, node in graph.nodes.items():
        tp[nid] = None
        if node.kind is NodeKind.SINK:
            routes[nid] = {}
            continue
        if node.kind is NodeKind.JUMP:
            target = graph.jumps[node.label]
            routes[nid] = {False: ((target, 1.0),), True: ((target, 1.0),)}
            continue
        table = {}
        for flagged in (False, True):
            edges = graph.matching_edges(nid, side, flagged)
            if node.kind is NodeKind.SHORTEST_QUEUE_ROUTER:
                table[flagged] = tuple((e.target, 1.0 / len(edges)) for e in edges)
            else:
                table[flagged] = tuple((e.target, 1.0 if e.p is None else e.p) for e in edges)
        routes[nid] = table
        shed = node.shed
        if shed is not None and shed.sensor is not None and shed.applies_to.admits(side):
            cache = ProfileCache(scenario.drm, scenario.containment,
                                 shed.drm_scenario or scenario.drm_scenario)
            profile = cache.get(shed.sensor, side, commodity)
            tp[nid] = profile.tp_rate if common_tp is None else float(common_tp)
            fp[nid] = profile.fp_rate
    for nid, node in graph.nodes.items():
        if node.kind is NodeKind.SHORTEST_QUEUE_ROUTER:
            for branches in routes[nid].values():
                if len({(tp[t], fp.get(t)) for t, _ in branches}) > 1:
                    approximate = True
    sources = graph.of_kind(NodeKind.SOURCE)
    total = sum(s.share for s in sources)
    entries = tuple((s.id, s.share / total) for s in sources if s.share > 0)
    keep = _reachable(routes, [n for n, _ in entries])
    return AnalyticNet(
        {n: tp[n] for n in keep},
        {n: routes[n] for n in keep},
        entries,
        {n: fp[n] for n in keep if n in fp},
        approximate,
    )


def _reachable(routes, starts) -> list:
    seen, stack = set(starts), list(starts)
    while stack:
        for branches in routes[stack.pop()].values():
            for target, _ in branches:
                if target not in seen:
                    seen.add(target)
                    stack.append(target)
    return [n for n in routes if n in seen]


def lorry_classes(scenario):
    """``(side, commodity, weight)`` for every class of arriving lorry."""
    arr = scenario.arrivals
    for side, ws in ((Side.SOFT, arr.soft_fraction), (Side.HARD, 1.0 - arr.soft_fraction)):
        for commodity, wc in arr.commodity_mix:
            if ws * wc > 0:
                yield side, commodity, ws * wc


def scenario_detection(scenario, common_tp: float | None = None,
                       cap: int = DEFAULT_PATH_CAP) -> float:
    """Class-weighted exact detection probability of the reduced scenario."""
    return sum(w * analytic_detection(reduce_scenario(scenario, side, com, common_tp), cap)
               for side, com, w in lorry_classes(scenario))


def scenario_min_stages(scenario) -> int:
    return min(min_stages(reduce_scenario(scenario, side, com))
               for side, com, _ in lorry_classes(scenario))


# -- sweep shape --------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    p: tuple
    d: tuple
    monotone: bool
    concave: bool
    min_stages: int
    # D(p) > p strictly inside (0, 1); None when some route has fewer than two stages
    above_diagonal: bool | None

    @property
    def ok(self) -> bool:
        return self.monotone and self.concave and self.above_diagonal is not False


def detection_curve(model, p_values) -> list:
    """D(p) for an ``AnalyticNet`` or a scenario with every tp set to p."""
    if isinstance(model, AnalyticNet):
        return [analytic_detection(model.with_common_tp(p)) for p in p_values]
    return [scenario_detection(model, common_tp=p) for p in p_values]


def concavity_check(model, p_values, tol: float = 1e-12) -> Verdict:
    """Is D(p) non-decreasing, discretely concave and above the diagonal?

    Concavity is judged on slopes between neighbouring grid points, which
    for an evenly spaced grid is the same as non-increasing differences.
    """
    ps = [float(p) for p in p_values]
    if ps != sorted(ps):
        raise ValueError("p values must be sorted ascending")
    d = detection_curve(model, ps)
    steps = list(zip(ps, ps[1:], d, d[1:]))
    monotone = all(d1 >= d0 - tol for _, _, d0, d1 in steps)
    slopes = [(d1 - d0) / (p1 - p0) for p0, p1, d0, d1 in steps if p1 > p0]
    concave = all(b <= a + tol for a, b in zip(slopes, slopes[1:]))
    stages = min_stages(model) if isinstance(model, AnalyticNet) else scenario_min_stages(model)
    above = None
    if stages >= 2:
        above = all(dv > p for p, dv in zip(ps, d) if 0.0 < p < 1.0)
    return Verdict(tuple(ps), tuple(d), monotone, concave, stages, above)
