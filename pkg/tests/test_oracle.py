import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portsim.core import Side
from portsim.oracle import (
    AnalyticNet,
    CyclicNetError,
    OracleError,
    PathCapError,
    analytic_detection,
    concavity_check,
    min_stages,
    outcome_tree_detection,
    reduce_scenario,
    scenario_detection,
)

from conftest import diversion_net, split_net, tandem

BOTH = (analytic_detection, outcome_tree_detection)


def single(p):
    return AnalyticNet.from_edges({"A": p, "end": None}, [("A", "end")], "A")


def two_stage(p=0.5):
    return AnalyticNet.from_edges({"A": p, "B": p, "end": None}, [("A", "B"), ("B", "end")], "A")


def forty_four():
    tp = {"s": None, "A": 0.3, "B": 0.3, "C": 0.4, "end": None}
    edges = [("s", "A", 0.5), ("s", "B", 0.5), ("A", "end"), ("B", "C"), ("C", "end")]
    return AnalyticNet.from_edges(tp, edges, "s")


def diverted(fp=0.1):
    """A flagged lorry goes to deep search D; a clear one to B with prob 0.4."""
    tp = {"A": 0.6, "D": 0.9, "r": None, "B": 0.5, "end": None}
    edges = [("A", "D", 1.0, "flagged"), ("A", "r", 1.0, "clear"), ("D", "end"),
             ("r", "B", 0.4), ("r", "end", 0.6), ("B", "end")]
    return AnalyticNet.from_edges(tp, edges, "A", fp={"A": fp, "D": fp, "B": fp})


class TestExamples:
    @pytest.mark.parametrize("route", BOTH)
    @pytest.mark.parametrize("p", [0.0, 0.2, 0.7, 1.0])
    def test_single_stage(self, route, p):
        assert route(single(p)) == pytest.approx(p)

    @pytest.mark.parametrize("route", BOTH)
    def test_two_stages(self, route):
        assert route(two_stage()) == pytest.approx(0.75)

    @pytest.mark.parametrize("route", BOTH)
    def test_forty_four(self, route):
        assert route(forty_four()) == pytest.approx(0.44, abs=1e-12)

    @pytest.mark.parametrize("route", BOTH)
    def test_diversion(self, route):
        # found at A, or missed at A and found by the optional B
        assert route(diverted()) == pytest.approx(0.6 + 0.4 * 0.4 * 0.5)

    def test_routes_agree_with_false_positives(self):
        for fp in (0.0, 0.3, 1.0):
            net = diverted(fp)
            assert analytic_detection(net) == pytest.approx(outcome_tree_detection(net), abs=1e-14)


class TestErrors:
    def test_cycle(self):
        with pytest.raises(CyclicNetError):
            AnalyticNet.from_edges({"A": 0.5, "B": 0.5}, [("A", "B"), ("B", "A")], "A")

    def test_branches_must_sum_to_one(self):
        with pytest.raises(OracleError, match="sum"):
            AnalyticNet.from_edges({"A": None, "B": 0.5, "C": 0.5},
                                   [("A", "B", 0.5), ("A", "C", 0.6)], "A")

    def test_path_cap(self):
        # 2^12 routes through a ladder of binary splits
        tp, edges = {}, []
        for i in range(12):
            tp[f"r{i}"] = None
            tp[f"x{i}"] = 0.1
            tp[f"y{i}"] = 0.2
            nxt = f"r{i + 1}"
            edges += [(f"r{i}", f"x{i}", 0.5), (f"r{i}", f"y{i}", 0.5), (f"x{i}", nxt), (f"y{i}", nxt)]
        tp["r12"] = None
        net = AnalyticNet.from_edges(tp, edges, "r0")
        assert analytic_detection(net) == pytest.approx(1 - 0.85 ** 12)
        with pytest.raises(PathCapError):
            analytic_detection(net, cap=1000)
        with pytest.raises(PathCapError):
            outcome_tree_detection(net, cap=1000)


class TestShape:
    def test_two_stage_curve(self):
        v = concavity_check(two_stage(), [0.0, 0.5, 1.0])
        assert v.d == pytest.approx((0.0, 0.75, 1.0))
        assert v.monotone and v.concave and v.above_diagonal and v.ok

    def test_single_stage_boundary(self):
        v = concavity_check(single(0.5), [i / 10 for i in range(11)])
        assert v.d == pytest.approx(tuple(i / 10 for i in range(11)))
        assert v.concave and v.monotone and v.above_diagonal is None

    def test_calais_default(self, calais):
        grid = [round(0.1 * i, 10) for i in range(11)]
        v = concavity_check(calais, grid)
        assert v.monotone and v.concave
        assert v.min_stages == 2 and v.above_diagonal
        assert v.d[0] == 0.0 and v.d[-1] == pytest.approx(1.0)

    def test_unsorted_grid(self):
        with pytest.raises(ValueError):
            concavity_check(single(0.5), [0.5, 0.1])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=5, max_size=5), st.integers(0, 4), st.floats(0, 1))
    def test_monotone_in_each_stage(self, tps, which, bump):
        names = ["A", "D", "B", "x", "y"]
        base = diverted()
        tp = dict(base.tp)
        for name, t in zip(names[:3], tps):
            tp[name] = t
        raised = dict(tp)
        key = names[which % 3]
        raised[key] = max(tp[key], bump)
        lo = AnalyticNet(tp, base.routes, base.entries, base.fp)
        hi = AnalyticNet(raised, base.routes, base.entries, base.fp)
        assert analytic_detection(hi) >= analytic_detection(lo) - 1e-12
        assert analytic_detection(lo) == pytest.approx(outcome_tree_detection(lo), abs=1e-12)


class TestScenarioReduction:
    def test_tandem(self):
        assert scenario_detection(tandem(tp=0.5)) == pytest.approx(0.75)

    def test_split(self):
        drm = {"default": {"tp": 0.3, "fp": 0.0},
               "entries": [{"level": 1, "commodity": "general", "sensor": "C", "tp": 0.4, "fp": 0.0}]}
        assert scenario_detection(split_net(drm=drm)) == pytest.approx(0.44)

    def test_diversion(self):
        assert scenario_detection(diversion_net(tp=0.5)) == pytest.approx(0.5 + 0.5 / 3 * 0.5)

    def test_common_tp(self):
        assert scenario_detection(tandem(tp=0.9), common_tp=0.5) == pytest.approx(0.75)

    def test_shortest_queue_is_equal_split(self, calais):
        net = reduce_scenario(calais, Side.SOFT, "general")
        assert dict(net.routes[2][False]) == {3: 0.5, 4: 0.5}
        assert not net.approximate
        assert min_stages(net) == 2

    def test_both_routes_on_every_class(self, calais):
        for side in Side:
            for commodity in ("general", "foodstuff", "wood"):
                net = reduce_scenario(calais, side, commodity)
                assert analytic_detection(net) == pytest.approx(outcome_tree_detection(net), abs=1e-12)
