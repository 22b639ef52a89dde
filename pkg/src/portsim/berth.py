"""Mobile squads checking lorries parked at the Berth before boarding.

Squads are recurring events: each tick picks one eligible parked lorry at
random and checks it, soft-sided lorries with a mobile probe and hard-sided
ones by opening them.  The time between ticks stands for the time a check
takes, so a squad is busy whenever there is something to check.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .core import EventKind, Side
from .distributions import DistributionSpec
from .network import ModelError
from .screening import Outcome, resolve_screening


class BerthMode(str, enum.Enum):
    CHECK_ONCE = "CheckOnce"
    RECHECK = "Recheck"


@dataclass(frozen=True)
class SquadSpec:
    check_interval: DistributionSpec
    soft_sensor: str = "CO2-mobile"
    hard_action: str = "Visual"


@dataclass(frozen=True)
class BerthSpec:
    dwell_time: DistributionSpec
    squads: tuple[SquadSpec, ...] = ()
    mode: BerthMode = BerthMode.CHECK_ONCE


class BerthState:
    """Parked lorries plus the ignore list of already checked ones.

    ``parked`` is kept as a list with an id -> position map so a uniform pick
    and a removal are both O(1).
    """

    def __init__(self, spec: BerthSpec):
        self.spec = spec
        self.parked: list = []
        self._pos: dict[int, int] = {}
        self.parked_at: dict[int, float] = {}
        # one token per parking, so a departure scheduled for an earlier visit is recognisable
        self.tokens: dict[int, int] = {}
        self.ignore_list: set[int] = set()
        # lorries eligible for a squad check (== parked in Recheck mode)
        self._eligible: list = []
        self._epos: dict[int, int] = {}
        self.ever_parked = 0
        self.checks = 0
        self.ticks = 0

    def __len__(self):
        return len(self.parked)

    def is_parked(self, lorry_id: int) -> bool:
        return lorry_id in self._pos

    @property
    def eligible(self) -> list:
        return self._eligible

    @staticmethod
    def _add(items, pos, lorry):
        pos[lorry.id] = len(items)
        items.append(lorry)

    @staticmethod
    def _remove(items, pos, lorry_id):
        i = pos.pop(lorry_id, None)
        if i is None:
            return
        last = items.pop()
        if i < len(items):
            items[i] = last
            pos[last.id] = i

    def park(self, lorry, now: float) -> int:
        if lorry.id in self._pos:
            raise ModelError(f"lorry {lorry.id} is already parked at the Berth")
        self._add(self.parked, self._pos, lorry)
        self._add(self._eligible, self._epos, lorry)
        self.parked_at[lorry.id] = now
        self.ever_parked += 1
        self.tokens[lorry.id] = self.ever_parked
        return self.ever_parked

    def holds(self, lorry_id: int, token: int) -> bool:
        """True while the parking identified by ``token`` is still in progress."""
        return self.tokens.get(lorry_id) == token

    def unpark(self, lorry) -> None:
        if lorry.id not in self._pos:
            raise ModelError(f"lorry {lorry.id} is not parked at the Berth")
        self._remove(self.parked, self._pos, lorry.id)
        self._remove(self._eligible, self._epos, lorry.id)
        self.parked_at.pop(lorry.id, None)
        self.tokens.pop(lorry.id, None)
        self.ignore_list.discard(lorry.id)

    def ignore(self, lorry) -> None:
        self.ignore_list.add(lorry.id)
        self._remove(self._eligible, self._epos, lorry.id)


def berth_arrive(state: BerthState, lorry, now: float, calendar, dwell) -> float:
    """Park ``lorry`` and schedule its departure ``dwell()`` minutes from now.

    The departure event carries ``(lorry, token)``; see ``BerthState.holds``.
    """
    token = state.park(lorry, now)
    departure = now + dwell()
    calendar.at(departure, EventKind.BERTH_DEPARTURE, (lorry, token))
    return departure


def squad_check(state: BerthState, squad: SquadSpec, profiles, rng, now: float,
                node_id=None):
    """One squad tick.  Returns ``(lorry, outcome)`` or ``None`` when idle.

    ``profiles(sensor, lorry)`` gives the detection profile to apply.  A true
    positive takes the lorry off the Berth; the caller forwards it.
    """
    state.ticks += 1
    pool = state.eligible
    if not pool:
        return None
    lorry = pool[min(int(rng.random() * len(pool)), len(pool) - 1)]
    sensor = squad.soft_sensor if lorry.side is Side.SOFT else squad.hard_action
    outcome = resolve_screening(lorry, profiles(sensor, lorry), rng,
                                node_id=node_id, sensor=sensor, now=now)
    state.checks += 1
    if state.spec.mode is BerthMode.CHECK_ONCE:
        state.ignore(lorry)
    if outcome is Outcome.TRUE_POSITIVE:
        state.unpark(lorry)
    return lorry, outcome


def berth_depart(state: BerthState, lorry, now: float) -> None:
    """Ferry departure: the lorry leaves the Berth (the caller routes it on)."""
    state.unpark(lorry)

