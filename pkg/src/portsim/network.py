"""Process graph: node taxonomy, arrival process, routing and service sheds."""

from __future__ import annotations

import bisect
import enum
import math
from collections import deque
from dataclasses import dataclass, field

from .core import MINUTES_PER_HOUR, Side
from .distributions import DistributionSpec

HOURS_PER_WEEK = 168
NO_ARRIVALS = math.inf


class ModelError(RuntimeError):
    """The model reached a state a validated scenario cannot produce."""


class NodeKind(str, enum.Enum):
    SOURCE = "Source"
    SERVICE_SHED = "ServiceShed"
    PROB_ROUTER = "ProbRouter"
    SHORTEST_QUEUE_ROUTER = "ShortestQueueRouter"
    JUMP = "Jump"
    BERTH = "Berth"
    SINK = "Sink"

    @property
    def zero_time(self) -> bool:
        return self in (NodeKind.SOURCE, NodeKind.PROB_ROUTER,
                        NodeKind.SHORTEST_QUEUE_ROUTER, NodeKind.JUMP)


class SideFilter(str, enum.Enum):
    SOFT = "Soft"
    HARD = "Hard"
    BOTH = "Both"

    def admits(self, side: Side) -> bool:
        return self is SideFilter.BOTH or self.value == side.label


class FlagFilter(str, enum.Enum):
    FLAGGED = "flagged"
    CLEAR = "clear"

    def admits(self, flagged: bool) -> bool:
        return flagged is (self is FlagFilter.FLAGGED)


@dataclass(frozen=True)
class ArrivalSpec:
    base_rate: float  # lorries per hour
    profile: tuple[float, ...] = (1.0,) * HOURS_PER_WEEK
    clandestine_probability: float = 0.003
    soft_fraction: float = 0.5
    commodity_mix: tuple[tuple[str, float], ...] = (("general", 1.0),)

    @property
    def flat(self) -> bool:
        return min(self.profile) == max(self.profile)

    @property
    def peak_rate(self) -> float:
        """Peak rate in lorries per minute (thinning envelope)."""
        return self.base_rate * max(self.profile) / MINUTES_PER_HOUR

    def rate_at(self, t: float) -> float:
        """Instantaneous rate in lorries per minute."""
        hour = int(t // MINUTES_PER_HOUR) % HOURS_PER_WEEK
        return self.base_rate * self.profile[hour] / MINUTES_PER_HOUR

    def expected_arrivals(self, t_end: float) -> float:
        full_weeks, rest = divmod(t_end, HOURS_PER_WEEK * MINUTES_PER_HOUR)
        week = sum(self.profile) * MINUTES_PER_HOUR
        hours, frac = divmod(rest, MINUTES_PER_HOUR)
        partial = sum(self.profile[: int(hours)]) * MINUTES_PER_HOUR
        if int(hours) < HOURS_PER_WEEK:
            partial += self.profile[int(hours)] * frac
        return self.base_rate / MINUTES_PER_HOUR * (full_weeks * week + partial)


def sample_interarrival(spec: ArrivalSpec, now: float, rng) -> float:
    """Gap to the next arrival of a piecewise-constant-rate Poisson process.

    Candidates come from a homogeneous process at the peak rate and are kept
    with probability rate(t) / peak (thinning).  A flat profile skips the
    acceptance draw, which makes it an exact exponential gap.  Returns
    ``NO_ARRIVALS`` when the rate is zero everywhere.
    """
    peak = spec.peak_rate
    if peak <= 0.0:
        return NO_ARRIVALS
    rand = rng.random
    if spec.flat:
        return -math.log(1.0 - rand()) / peak
    t = now
    while True:
        t -= math.log(1.0 - rand()) / peak
        if rand() * peak < spec.rate_at(t):
            return t - now


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    p: float | None = None
    side: SideFilter = SideFilter.BOTH
    flag: FlagFilter | None = None

    def admits(self, side: Side, flagged: bool) -> bool:
        return self.side.admits(side) and (self.flag is None or self.flag.admits(flagged))


@dataclass(frozen=True)
class ServiceShedSpec:
    sensor: str | None
    service_time: DistributionSpec
    servers: int = 1
    queue_capacity: int | None = None
    exit_buffers: int = 2
    applies_to: SideFilter = SideFilter.BOTH
    full_policy: str = "block"
    drm_scenario: str | None = None


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    name: str = ""
    shed: ServiceShedSpec | None = None
    label: str | None = None  # jump label
    share: float = 1.0  # source share of the arrival stream

    def __str__(self):
        return f"{self.kind.value} {self.id}" + (f" ({self.name})" if self.name else "")


@dataclass
class ProcessGraph:
    nodes: dict[int, Node]
    edges: list[Edge]
    jumps: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self._out: dict[int, list[Edge]] = {nid: [] for nid in self.nodes}
        for e in self.edges:
            self._out.setdefault(e.source, []).append(e)

    def out_edges(self, node_id: int) -> list[Edge]:
        return self._out.get(node_id, [])

    def successors(self, node_id: int) -> list[int]:
        node = self.nodes[node_id]
        if node.kind is NodeKind.JUMP:
            target = self.jumps.get(node.label)
            return [] if target is None else [target]
        return [e.target for e in self.out_edges(node_id)]

    @property
    def entries(self) -> list[int]:
        return [n.id for n in self.nodes.values() if n.kind is NodeKind.SOURCE]

    @property
    def exits(self) -> list[int]:
        return [n.id for n in self.nodes.values() if n.kind is NodeKind.SINK]

    def of_kind(self, kind: NodeKind) -> list[Node]:
        return [n for n in self.nodes.values() if n.kind is kind]

    def matching_edges(self, node_id: int, side: Side, flagged: bool) -> list[Edge]:
        return [e for e in self.out_edges(node_id) if e.admits(side, flagged)]


def route_probabilistic(graph: ProcessGraph, router: Node, lorry, rng) -> int:
    """Pick an outgoing edge of ``router`` for ``lorry`` by its branch probability.

    Only edges whose side/flag filters admit the lorry take part.
    """
    edges = graph.matching_edges(router.id, lorry.side, lorry.flagged)
    if not edges:
        raise ModelError(
            f"no outgoing edge of {router} admits a {lorry.side.label}-sided lorry"
            f" (flagged={lorry.flagged})"
        )
    if len(edges) == 1:
        return edges[0].target
    weights = [1.0 if e.p is None else e.p for e in edges]
    total = sum(weights)
    u = rng.random() * total
    acc = 0.0
    for e, w in zip(edges, weights):
        acc += w
        if u < acc:
            return e.target
    return edges[-1].target


def route_shortest_queue(candidates) -> int:
    """Node id of the candidate shed with the fewest lorries queued or in service.

    ``candidates`` are ``ShedState`` objects; ties go to the earliest candidate.
    """
    if not candidates:
        raise ModelError("shortest-queue routing needs at least one candidate")
    best = candidates[0]
    best_load = best.load
    for shed in candidates[1:]:
        load = shed.load
        if load < best_load:
            best, best_load = shed, load
    return best.node_id


class ShedState:
    """Mutable state of one service shed during a run.

    Lorries wait in the entrance queue, are admitted to a free server only
    while an exit-buffer slot is free, and after service sit in an exit
    buffer until the downstream node takes them.  A lorry that finishes while
    every exit buffer is occupied keeps its server until a slot opens.
    """

    __slots__ = (
        "node_id", "spec", "queue", "busy", "buffer", "finished", "waiters",
        "area", "last_change", "served", "balked", "max_queue",
    )

    def __init__(self, node_id: int, spec: ServiceShedSpec):
        self.node_id = node_id
        self.spec = spec
        self.queue: deque = deque()
        self.busy = 0
        self.buffer: list = []
        self.finished: deque = deque()
        # upstream holders blocked on this shed's full entrance queue
        self.waiters: deque = deque()
        self.area = 0.0
        self.last_change = 0.0
        self.served = 0
        self.balked = 0
        self.max_queue = 0

    @property
    def load(self) -> int:
        return len(self.queue) + self.busy

    @property
    def content(self) -> int:
        return len(self.queue) + self.busy + len(self.buffer)

    def has_room(self) -> bool:
        cap = self.spec.queue_capacity
        return cap is None or len(self.queue) < cap

    def _touch(self, now: float) -> None:
        self.area += (len(self.queue) + self.busy + len(self.buffer)) * (now - self.last_change)
        self.last_change = now

    def can_start(self) -> bool:
        return self.busy < self.spec.servers and len(self.buffer) < self.spec.exit_buffers

    def admit(self, lorry, now: float) -> bool:
        """Put ``lorry`` into the shed; True when its service starts at once."""
        if not self.has_room():
            raise ModelError(f"entrance queue of shed {self.node_id} is full")
        self._touch(now)
        if not self.queue and self.can_start():
            self.busy += 1
            return True
        self.queue.append(lorry)
        if len(self.queue) > self.max_queue:
            self.max_queue = len(self.queue)
        return False

    def start_next(self, now: float):
        """Admit the queue head into service if the hold allows it."""
        if self.queue and self.can_start():
            self._touch(now)
            self.busy += 1
            return self.queue.popleft()
        return None

    def complete(self, lorry, now: float) -> bool:
        """Service of ``lorry`` ended; True when it moved into an exit buffer."""
        self.served += 1
        if len(self.buffer) < self.spec.exit_buffers:
            self._touch(now)
            self.busy -= 1
            self.buffer.append(lorry)
            return True
        self.finished.append(lorry)
        return False

    def release(self, lorry, now: float):
        """``lorry`` left its exit buffer; returns a finished lorry that took the slot."""
        self._touch(now)
        self.buffer.remove(lorry)
        if self.finished:
            nxt = self.finished.popleft()
            self.busy -= 1
            self.buffer.append(nxt)
            return nxt
        return None

    def mean_content(self, now: float) -> float:
        self._touch(now)
        return self.area / now if now > 0 else 0.0


def cumulative(weights) -> list[float]:
    acc, out = 0.0, []
    for w in weights:
        acc += w
        out.append(acc)
    return out


def categorical(cum: list[float], u: float) -> int:
    """Index drawn from cumulative weights ``cum`` with a uniform ``u``."""
    i = bisect.bisect_right(cum, u * cum[-1])
    return min(i, len(cum) - 1)
