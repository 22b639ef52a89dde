import math

import pytest

from portsim.berth import (
    BerthMode,
    BerthSpec,
    BerthState,
    SquadSpec,
    berth_arrive,
    berth_depart,
    squad_check,
)
from portsim.core import EventCalendar, EventKind, Lorry, SimClock, Side, make_stream
from portsim.distributions import DistributionSpec
from portsim.engine import Simulation
from portsim.network import ModelError
from portsim.screening import DetectionProfile, Outcome

from conftest import berth_net

SQUAD = SquadSpec(DistributionSpec.constant(10.0), "probe", "open")


def _state(mode=BerthMode.CHECK_ONCE):
    return BerthState(BerthSpec(DistributionSpec.constant(45.0), (SQUAD,), mode))


def _lorry(i, clandestine=False, side=Side.SOFT):
    return Lorry(i, side, "general", clandestine, 0.0)


def _profiles(tp, fp=0.0):
    return lambda sensor, lorry: DetectionProfile(tp, fp)


class TestParking:
    def test_departure_scheduled_after_dwell(self):
        state = _state()
        cal = EventCalendar(SimClock(100.0))
        assert berth_arrive(state, _lorry(1), 100.0, cal, lambda: 45.0) == 145.0
        ev = cal.pop_next()
        assert ev.fire_time == 145.0 and ev.kind is EventKind.BERTH_DEPARTURE

    def test_two_lorries(self):
        state = _state()
        state.park(_lorry(1), 0.0)
        state.park(_lorry(2), 0.0)
        assert len(state) == 2

    def test_duplicate_id(self):
        state = _state()
        state.park(_lorry(1), 0.0)
        with pytest.raises(ModelError):
            state.park(_lorry(1), 1.0)

    def test_tokens_identify_a_visit(self):
        state = _state()
        lorry = _lorry(1)
        first = state.park(lorry, 0.0)
        berth_depart(state, lorry, 5.0)
        second = state.park(lorry, 6.0)
        assert not state.holds(1, first) and state.holds(1, second)


class TestSquads:
    def test_idle_tick(self):
        state = _state()
        assert squad_check(state, SQUAD, _profiles(1.0), make_stream(1, 0, "squad:0"), 0.0) is None
        assert state.ticks == 1 and state.checks == 0

    def test_check_once_ignores_checked(self):
        state = _state(BerthMode.CHECK_ONCE)
        state.park(_lorry(1), 0.0)
        rng = make_stream(1, 0, "squad:0")
        assert squad_check(state, SQUAD, _profiles(0.5), rng, 1.0) is not None
        assert squad_check(state, SQUAD, _profiles(0.5), rng, 2.0) is None
        assert len(state) == 1

    def test_recheck_certain_detection(self):
        state = _state(BerthMode.RECHECK)
        lorry = _lorry(1, clandestine=True)
        state.park(lorry, 0.0)
        found, outcome = squad_check(state, SQUAD, _profiles(1.0), make_stream(1, 0, "squad:0"), 1.0)
        assert found is lorry and outcome is Outcome.TRUE_POSITIVE
        assert len(state) == 0

    def test_sensor_follows_side(self):
        state = _state()
        seen = []
        state.park(_lorry(1, side=Side.HARD), 0.0)
        squad_check(state, SQUAD, lambda s, lorry: seen.append(s) or DetectionProfile(0.0, 0.0),
                    make_stream(1, 0, "squad:0"), 1.0)
        assert seen == ["open"]

    def test_geometric_law_two_checks(self):
        # dwell 25 with a check every 10 minutes admits exactly two checks
        sc = berth_net(mode="Recheck", interval=10.0, dwell=25.0, rate=0.0, tp=0.5)
        n, hits = 3000, 0
        for r in range(n):
            sim = Simulation(sc, master_seed=5, replication=r)
            sim.inject(_lorry(0, clandestine=True), 2)
            hits += sim.run_until(100.0).detected_total
        p = 1 - 0.5 ** 2
        assert abs(hits / n - p) < 3 * math.sqrt(p * (1 - p) / n)


class TestDepartureCounters:
    def _run(self, lorry, tp=0.0):
        sc = berth_net(mode="CheckOnce", interval=10.0, dwell=45.0, rate=0.0, tp=tp)
        sim = Simulation(sc, master_seed=1)
        sim.inject(lorry, 2)
        return sim.run_until(100.0)

    def test_missed(self):
        rc = self._run(_lorry(0, clandestine=True))
        assert rc.missed == 1 and rc.exits == 1

    def test_clean(self):
        rc = self._run(_lorry(0))
        assert rc.exits == 1 and rc.missed == 0

    def test_detected_upstream(self):
        lorry = _lorry(0, clandestine=True)
        lorry.clandestine_aboard = False
        lorry.detected_by = (7, "HBD")
        rc = self._run(lorry)
        assert rc.exits == 1 and rc.missed == 0 and rc.detected == {(7, "HBD"): 1}

    def test_detected_at_berth_leaves_early(self):
        rc = self._run(_lorry(0, clandestine=True), tp=1.0)
        assert rc.detected == {(2, "probe"): 1}
        assert rc.time_in_system == 10.0
