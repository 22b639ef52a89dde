"""Simulation kernel: clock, future event list, random streams and the lorry entity."""

from __future__ import annotations

import enum
import hashlib
import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

MINUTES_PER_HOUR = 60.0
MINUTES_PER_DAY = 1440.0
MINUTES_PER_YEAR = 525_600.0

# Uniforms are drawn from the bit generator in blocks and served one at a time;
# the block size only affects speed, never the sequence.
_BLOCK = 4096


class SchedulingError(RuntimeError):
    """An event was scheduled before the current simulation time."""


class EventKind(enum.IntEnum):
    ARRIVAL = 0
    SERVICE_START = 1
    SERVICE_END = 2
    SQUAD_CHECK = 3
    BERTH_DEPARTURE = 4
    STAT_SAMPLE = 5


class TimedEvent(NamedTuple):
    fire_time: float
    seq: int
    kind: EventKind
    payload: Any = None


class SimClock:
    __slots__ = ("now",)

    def __init__(self, now: float = 0.0):
        self.now = now


class EventCalendar:
    """Pending events ordered by ``(fire_time, seq)``.

    ``seq`` is a per-calendar insertion counter, so events scheduled for the
    same instant are popped in the order they were scheduled.
    """

    def __init__(self, clock: SimClock | None = None):
        self.clock = clock if clock is not None else SimClock()
        self._heap: list[tuple] = []
        self._counter = itertools.count()

    def __len__(self):
        return len(self._heap)

    def __bool__(self):
        return bool(self._heap)

    def schedule(self, ev: TimedEvent) -> None:
        if ev.fire_time < self.clock.now:
            raise SchedulingError(
                f"event {ev.kind.name} at t={ev.fire_time!r} is before now={self.clock.now!r}"
            )
        heapq.heappush(self._heap, ev)

    def at(self, fire_time: float, kind: EventKind, payload: Any = None) -> TimedEvent:
        """Build an event with the next sequence number and schedule it."""
        ev = TimedEvent(fire_time, next(self._counter), kind, payload)
        self.schedule(ev)
        return ev

    def next_seq(self) -> int:
        return next(self._counter)

    def peek(self) -> TimedEvent | None:
        return TimedEvent(*self._heap[0]) if self._heap else None

    def pop_next(self) -> TimedEvent | None:
        """Remove the earliest event and advance the clock to it.

        Returns ``None`` when nothing is pending (end of run).
        """
        if not self._heap:
            return None
        ev = TimedEvent(*heapq.heappop(self._heap))
        assert ev.fire_time >= self.clock.now, "clock moved backwards"
        self.clock.now = ev.fire_time
        return ev


def _stream_key(stream_id: str) -> int:
    digest = hashlib.blake2b(stream_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _uniform_blocks(generator: np.random.Generator):
    while True:
        yield from generator.random(_BLOCK).tolist()


class RandomStream:
    """A named, independently seeded source of U[0, 1) variates.

    Backed by a Philox counter-based generator keyed on
    ``(master_seed, replication, stream_id)`` through ``SeedSequence``, so any
    stream can be built directly without advancing another one.
    """

    __slots__ = ("stream_id", "generator", "random")

    def __init__(self, stream_id: str, generator: np.random.Generator):
        self.stream_id = stream_id
        self.generator = generator
        # bound __next__ of a generator: cheapest per-draw call available
        self.random = _uniform_blocks(generator).__next__

    def uniforms(self, n: int) -> list[float]:
        rand = self.random
        return [rand() for _ in range(n)]


def make_stream(master_seed: int, replication: int, stream_id: str) -> RandomStream:
    seq = np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=(int(replication), _stream_key(stream_id))
    )
    return RandomStream(stream_id, np.random.Generator(np.random.Philox(seq)))


class Side(enum.IntEnum):
    SOFT = 0
    HARD = 1

    @classmethod
    def parse(cls, label: str) -> "Side":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown lorry side {label!r}") from None

    @property
    def label(self) -> str:
        return self.name.capitalize()


class Lorry:
    """A lorry moving through the compound.

    ``clandestine_aboard`` is the current state (cleared when a screening
    finds the clandestines); ``carried_clandestine`` remembers the state at
    arrival for the run counters.
    """

    __slots__ = (
        "id", "side", "commodity", "clandestine_aboard", "carried_clandestine",
        "checks", "created_at", "exited_at", "flagged", "detected_by",
    )

    def __init__(self, id, side, commodity, clandestine_aboard, created_at):
        self.id = id
        self.side = side
        self.commodity = commodity
        self.clandestine_aboard = clandestine_aboard
        self.carried_clandestine = clandestine_aboard
        self.checks = []
        self.created_at = created_at
        self.exited_at = None
        self.flagged = False
        self.detected_by = None

    def __repr__(self):
        return (
            f"Lorry(id={self.id}, side={self.side.label}, commodity={self.commodity!r}, "
            f"clandestine={self.clandestine_aboard}, flagged={self.flagged})"
        )


@dataclass
class Trace:
    """Optional record of every processed event, used by determinism tests."""

    events: list = field(default_factory=list)

    def record(self, ev: TimedEvent, detail: Any) -> None:
        self.events.append((ev.fire_time, ev.seq, int(ev.kind), detail))
