"""Event-driven execution of a scenario: one ``Simulation`` is one replication."""

from __future__ import annotations

import itertools
import math
from collections import deque
from heapq import heappop, heappush

from .analysis import RunCounters
from .berth import BerthState, berth_arrive, berth_depart, squad_check
from .core import EventCalendar, EventKind, Lorry, SchedulingError, Side, SimClock, Trace, make_stream
from .network import (
    NO_ARRIVALS, ModelError, NodeKind, ShedState, categorical, cumulative,
    route_shortest_queue, sample_interarrival,
)
from .screening import Outcome, ProfileCache, effective_tp, resolve_screening

_SHED, _BERTH, _SINK, _ROUTER, _JUMP, _SOURCE = range(6)
_KIND_CODE = {
    NodeKind.SERVICE_SHED: _SHED,
    NodeKind.BERTH: _BERTH,
    NodeKind.SINK: _SINK,
    NodeKind.PROB_ROUTER: _ROUTER,
    NodeKind.SHORTEST_QUEUE_ROUTER: _ROUTER,
    NodeKind.JUMP: _JUMP,
    NodeKind.SOURCE: _SOURCE,
}
# routing table entry modes
_FIXED, _PROB, _SHORTEST = range(3)

_ARRIVAL = int(EventKind.ARRIVAL)
_SERVICE_END = int(EventKind.SERVICE_END)
_SQUAD = int(EventKind.SQUAD_CHECK)
_DEPART = int(EventKind.BERTH_DEPARTURE)
_SAMPLE = int(EventKind.STAT_SAMPLE)


class Simulation:
    """A single replication of a validated scenario.

    All randomness comes from streams keyed on ``(master_seed, replication,
    stream name)``, so a replication is reproducible on its own regardless of
    which other replications run alongside it.
    """

    def __init__(self, scenario, master_seed: int | None = None, replication: int = 0,
                 trace: bool = False, sample_interval: float | None = None):
        self.scenario = scenario
        self.master_seed = scenario.run.seed if master_seed is None else int(master_seed)
        self.replication = int(replication)
        self.clock = SimClock()
        self.calendar = EventCalendar(self.clock)
        self.trace = Trace() if trace else None
        self.sample_interval = scenario.run.sample_interval if sample_interval is None else sample_interval
        self.counters = RunCounters(replication=self.replication)
        self._next_id = itertools.count()
        self._in_system = 0
        self._clandestine_in_system = 0
        self._blocked = 0
        self._started = False
        self._work = deque()

        def stream(name):
            return make_stream(self.master_seed, self.replication, name)

        self._stream = stream
        graph = scenario.graph
        self.graph = graph
        self._kind = {nid: _KIND_CODE[n.kind] for nid, n in graph.nodes.items()}
        self._jump = {nid: graph.jumps[n.label] for nid, n in graph.nodes.items()
                      if n.kind is NodeKind.JUMP}

        self.sheds: dict[int, ShedState] = {}
        self._service = {}
        self._screen_rng = {}
        self._shed_profiles = {}
        for nid, node in graph.nodes.items():
            if node.kind is not NodeKind.SERVICE_SHED:
                continue
            spec = node.shed
            self.sheds[nid] = ShedState(nid, spec)
            self._service[nid] = spec.service_time.sampler(stream(f"service:{nid}").random)
            if spec.sensor is not None:
                self._screen_rng[nid] = stream(f"screen:{nid}")
                self._shed_profiles[nid] = ProfileCache(
                    scenario.drm, scenario.containment, spec.drm_scenario or scenario.drm_scenario)
        self._routing_rng = stream("routing").random
        self._routes = {nid: self._route_table(nid) for nid in graph.nodes}
        self._load = scenario.load_modifier

        self.berth = None
        self.berth_node = None
        berth_nodes = graph.of_kind(NodeKind.BERTH)
        if berth_nodes:
            self.berth_node = berth_nodes[0].id
            self.berth = BerthState(scenario.berth)
            self._dwell = scenario.berth.dwell_time.sampler(stream("dwell").random)
            self._squad_rng = [stream(f"squad:{i}") for i in range(len(scenario.berth.squads))]
            self._squad_interval = [
                sq.check_interval.sampler(rng.random)
                for sq, rng in zip(scenario.berth.squads, self._squad_rng)
            ]
            self._berth_profiles = ProfileCache(scenario.drm, scenario.containment, scenario.drm_scenario)

        arrivals = scenario.arrivals
        self._cargo = stream("cargo").random
        self._commodities = [c for c, _ in arrivals.commodity_mix]
        self._commodity_cum = cumulative(w for _, w in arrivals.commodity_mix)
        sources = graph.of_kind(NodeKind.SOURCE)
        total_share = sum(s.share for s in sources)
        self._sources = []
        for s in sources:
            share = s.share / total_share
            spec = type(arrivals)(
                base_rate=arrivals.base_rate * share,
                profile=arrivals.profile,
                clandestine_probability=arrivals.clandestine_probability,
                soft_fraction=arrivals.soft_fraction,
                commodity_mix=arrivals.commodity_mix,
            )
            self._sources.append((s.id, spec, stream(f"arrivals:{s.id}")))

        self._handlers = {
            _ARRIVAL: self._on_arrival,
            _SERVICE_END: self._on_service_end,
            _SQUAD: self._on_squad_check,
            _DEPART: self._on_berth_departure,
            _SAMPLE: self._on_sample,
        }

    # -- set-up -------------------------------------------------------------

    def _route_table(self, nid):
        """Per (side, flagged) state: how a lorry leaves node ``nid``."""
        node = self.graph.nodes[nid]
        if node.kind in (NodeKind.SINK, NodeKind.JUMP):
            return None
        table = []
        for side in Side:
            for flagged in (False, True):
                edges = self.graph.matching_edges(nid, side, flagged)
                if not edges:
                    table.append(None)
                elif node.kind is NodeKind.SHORTEST_QUEUE_ROUTER:
                    table.append((_SHORTEST, [self.sheds[e.target] for e in edges], None))
                elif len(edges) == 1:
                    table.append((_FIXED, edges[0].target, None))
                else:
                    weights = [1.0 if e.p is None else e.p for e in edges]
                    table.append((_PROB, [e.target for e in edges], cumulative(weights)))
        return table

    def _schedule(self, t, kind, payload):
        now = self.clock.now
        if t < now:
            raise SchedulingError(f"event at t={t!r} is before now={now!r}")
        heappush(self.calendar._heap, (t, next(self.calendar._counter), kind, payload))

    def start(self):
        if self._started:
            return
        self._started = True
        for idx, (nid, spec, rng) in enumerate(self._sources):
            gap = sample_interarrival(spec, 0.0, rng)
            if gap != NO_ARRIVALS:
                self._schedule(gap, _ARRIVAL, idx)
        if self.berth is not None:
            for i, interval in enumerate(self._squad_interval):
                self._schedule(interval(), _SQUAD, i)
        if self.sample_interval:
            self._schedule(self.sample_interval, _SAMPLE, None)

    # -- routing ------------------------------------------------------------

    def _pick(self, nid, lorry):
        entry = self._routes[nid][lorry.side * 2 + lorry.flagged]
        if entry is None:
            raise ModelError(
                f"no outgoing edge of node {nid} admits a {lorry.side.label}-sided lorry"
                f" (flagged={lorry.flagged})"
            )
        mode, a, b = entry
        if mode == _FIXED:
            return a
        if mode == _PROB:
            return a[categorical(b, self._routing_rng())]
        return route_shortest_queue(a)

    def next_stop(self, nid, lorry):
        """First time-consuming node (shed, Berth or Sink) after leaving ``nid``."""
        kind = self._kind
        nid = self._pick(nid, lorry)
        while True:
            k = kind[nid]
            if k == _SHED:
                applies = self.sheds[nid].spec.applies_to
                if applies.value == "Both" or applies.value == lorry.side.label:
                    return nid
                nid = self._pick(nid, lorry)
            elif k == _ROUTER:
                nid = self._pick(nid, lorry)
            elif k == _JUMP:
                nid = self._jump[nid]
            else:
                return nid

    # -- movement -----------------------------------------------------------

    def _enter(self, dest, lorry, holder):
        """Hand ``lorry`` to ``dest``.  False when it must wait (blocked)."""
        k = self._kind[dest]
        now = self.clock.now
        if k == _SHED:
            shed = self.sheds[dest]
            if not shed.has_room():
                if shed.spec.full_policy == "drop":
                    shed.balked += 1
                    self._leave(lorry, balked=True)
                    return True
                shed.waiters.append((holder, lorry))
                self._blocked += 1
                return False
            if shed.admit(lorry, now):
                self._schedule(now + self._service[dest](), _SERVICE_END, (shed, lorry))
            return True
        if k == _BERTH:
            berth_arrive(self.berth, lorry, now, self, self._dwell)
            return True
        self._leave(lorry)
        return True

    def at(self, fire_time, kind, payload=None):
        """Calendar-compatible hook used by ``berth_arrive``."""
        self._schedule(fire_time, int(kind), payload)

    def _forward(self, nid, lorry, holder):
        return self._enter(self.next_stop(nid, lorry), lorry, holder)

    def _forward_from_shed(self, shed, lorry):
        """Push lorries out of ``shed``'s exit buffers until one is blocked."""
        now = self.clock.now
        while lorry is not None:
            if not self._forward(shed.node_id, lorry, shed):
                return
            lorry = shed.release(lorry, now)
            self._work.append(shed)

    def _pump(self, shed):
        """Start whatever the hold allows, then let blocked upstream lorries in."""
        now = self.clock.now
        service = self._service[shed.node_id]
        while True:
            lorry = shed.start_next(now)
            if lorry is None:
                break
            self._schedule(now + service(), _SERVICE_END, (shed, lorry))
        while shed.waiters and shed.has_room():
            holder, lorry = shed.waiters.popleft()
            self._blocked -= 1
            if shed.admit(lorry, now):
                self._schedule(now + service(), _SERVICE_END, (shed, lorry))
            if holder is not None:
                self._forward_from_shed(holder, holder.release(lorry, now))
                self._work.append(holder)

    def _settle(self):
        # sheds whose exit buffers emptied get pumped in FIFO order
        work = self._work
        while work:
            self._pump(work.popleft())

    def _leave(self, lorry, balked=False):
        c = self.counters
        now = self.clock.now
        lorry.exited_at = now
        self._in_system -= 1
        if balked:
            c.balked += 1
        else:
            c.exits += 1
            c.time_in_system += now - lorry.created_at
        if lorry.carried_clandestine:
            self._clandestine_in_system -= 1
            if lorry.detected_by is not None:
                c.detected[lorry.detected_by] = c.detected.get(lorry.detected_by, 0) + 1
            else:
                c.missed += 1

    def _screen(self, lorry, profile, rng, node_id, sensor, queue_len):
        tp = None
        if not self._load.inert and lorry.clandestine_aboard:
            tp = effective_tp(profile, queue_len, self._load)
        outcome = resolve_screening(lorry, profile, rng, node_id=node_id, sensor=sensor,
                                    now=self.clock.now, tp=tp)
        c = self.counters
        c.screenings += 1
        if outcome is Outcome.FALSE_POSITIVE:
            c.false_positives += 1
        elif outcome is Outcome.TRUE_POSITIVE:
            c.true_positives += 1
        return outcome

    # -- event handlers -----------------------------------------------------

    def _on_arrival(self, idx):
        now = self.clock.now
        nid, spec, rng = self._sources[idx]
        cargo = self._cargo
        clandestine = cargo() < spec.clandestine_probability
        side = Side.SOFT if cargo() < spec.soft_fraction else Side.HARD
        if len(self._commodities) == 1:
            commodity = self._commodities[0]
        else:
            commodity = self._commodities[categorical(self._commodity_cum, cargo())]
        lorry = Lorry(next(self._next_id), side, commodity, clandestine, now)
        c = self.counters
        c.arrivals += 1
        self._in_system += 1
        if clandestine:
            c.clandestine_arrivals += 1
            self._clandestine_in_system += 1
        self._forward(nid, lorry, None)
        gap = sample_interarrival(spec, now, rng)
        if gap != NO_ARRIVALS:
            self._schedule(now + gap, _ARRIVAL, idx)

    def _on_service_end(self, payload):
        shed, lorry = payload
        nid = shed.node_id
        sensor = shed.spec.sensor
        if sensor is not None:
            profile = self._shed_profiles[nid].get(sensor, lorry.side, lorry.commodity)
            self._screen(lorry, profile, self._screen_rng[nid], nid, sensor, len(shed.queue))
        if shed.complete(lorry, self.clock.now):
            self._forward_from_shed(shed, lorry)
        self._pump(shed)
        self._settle()

    def _berth_profile(self, sensor, lorry):
        return self._berth_profiles.get(sensor, lorry.side, lorry.commodity)

    def _on_squad_check(self, i):
        now = self.clock.now
        squad = self.scenario.berth.squads[i]
        rng = self._squad_rng[i]
        result = squad_check(self.berth, squad, self._berth_profile, rng, now,
                             node_id=self.berth_node)
        if result is not None:
            lorry, outcome = result
            c = self.counters
            c.berth_checks += 1
            c.screenings += 1
            if outcome is Outcome.FALSE_POSITIVE:
                c.false_positives += 1
            elif outcome is Outcome.TRUE_POSITIVE:
                c.true_positives += 1
                self._forward(self.berth_node, lorry, None)
        self._schedule(now + self._squad_interval[i](), _SQUAD, i)

    def _on_berth_departure(self, payload):
        # lorries taken off the Berth by a squad leave a stale departure behind
        lorry, token = payload
        if not self.berth.holds(lorry.id, token):
            return
        berth_depart(self.berth, lorry, self.clock.now)
        self._forward(self.berth_node, lorry, None)

    def _on_sample(self, _):
        c = self.counters
        now = self.clock.now
        c.sample_times.append(now)
        c.sample_detected.append(c.detected_total)
        c.sample_missed.append(c.missed)
        for nid, shed in self.sheds.items():
            c.queue_samples.setdefault(nid, []).append(len(shed.queue))
        self.check_conservation()
        self._schedule(now + self.sample_interval, _SAMPLE, None)

    # -- run control --------------------------------------------------------

    def inject(self, lorry: Lorry, node_id: int):
        """Place an externally built lorry at ``node_id`` now (tests, what-ifs)."""
        self.start()
        c = self.counters
        c.arrivals += 1
        self._in_system += 1
        if lorry.carried_clandestine:
            c.clandestine_arrivals += 1
            self._clandestine_in_system += 1
        if self._kind[node_id] in (_SHED, _BERTH, _SINK):
            if not self._enter(node_id, lorry, None):
                return
        else:
            self._forward(node_id, lorry, None)

    def run_until(self, t_end: float) -> RunCounters:
        """Process every event with ``fire_time <= t_end`` and finalise counters."""
        self.start()
        heap = self.calendar._heap
        clock = self.clock
        handlers = self._handlers
        trace = self.trace
        processed = 0
        while heap and heap[0][0] <= t_end:
            ev = heappop(heap)
            t = ev[0]
            if t < clock.now:
                raise SchedulingError("clock moved backwards")
            clock.now = t
            if trace is not None:
                trace.events.append((t, ev[1], ev[2], _describe(ev[3])))
            handlers[ev[2]](ev[3])
            processed += 1
        return self._finalise(t_end, processed)

    def _finalise(self, t_end, processed):
        c = self.counters
        c.horizon = t_end
        c.events += processed
        c.in_flight_at_end = self._in_system
        c.clandestine_in_flight = self._clandestine_in_system
        c.blocked_at_end = self._blocked
        c.mean_in_system = {nid: shed.mean_content(t_end) if t_end > 0 else 0.0
                            for nid, shed in self.sheds.items()}
        c.served = {nid: shed.served for nid, shed in self.sheds.items()}
        if self.berth is not None:
            c.squad_ticks = self.berth.ticks
            c.parked_at_end = len(self.berth)
        self.check_conservation()
        return c

    def check_conservation(self):
        c = self.counters
        if c.arrivals != c.exits + self._in_system + c.balked:
            raise AssertionError("lorry conservation violated")
        if c.detected_total + c.missed + self._clandestine_in_system != c.clandestine_arrivals:
            raise AssertionError("clandestine conservation violated")


def _describe(payload):
    if payload is None or isinstance(payload, int):
        return payload
    first, second = payload
    if isinstance(first, Lorry):
        return ("lorry", first.id, second)
    return (first.node_id, second.id)


def run_until(model, t_end: float) -> RunCounters:
    """Run ``model`` (a ``Simulation`` or a ``Scenario``) up to ``t_end`` minutes."""
    if not isinstance(model, Simulation):
        model = Simulation(model)
    if t_end < 0 or math.isnan(t_end):
        raise ValueError("t_end must be non-negative")
    return model.run_until(t_end)
