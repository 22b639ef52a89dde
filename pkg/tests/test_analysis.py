import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portsim.analysis import (
    METRICS,
    ReplicationSet,
    RunCounters,
    csv_text,
    detection_fraction,
    export_csv,
    mser_warmup,
    read_csv,
    run_replications,
    summarize_values,
    welch_average,
)

from conftest import tandem


@pytest.fixture(scope="module")
def small():
    return tandem(clandestine=0.3, tp=0.4, horizon=600.0)


class TestReplications:
    def test_repeatable(self, small):
        a = run_replications(small, 20, 7)
        b = run_replications(small, 20, 7)
        assert a.replications == b.replications

    def test_single(self, small):
        rs = run_replications(small, 1, 7)
        assert len(rs) == 1 and isinstance(rs.replications[0], RunCounters)

    def test_replication_independent_of_batch(self, small):
        batch = run_replications(small, 20, 7)
        solo = run_replications(small, 1, 7, first=3)
        assert batch.replications[3] == solo.replications[0]

    def test_engines_agree(self, small):
        fast = run_replications(small, 3, 7, engine="fast")
        ref = run_replications(small, 3, 7, engine="reference")
        assert fast.replications == ref.replications

    def test_parallel_matches_serial(self, small):
        serial = run_replications(small, 4, 7)
        parallel = run_replications(small, 4, 7, workers=2)
        assert csv_text(serial) == csv_text(parallel)

    def test_bad_arguments(self, small):
        with pytest.raises(ValueError):
            run_replications(small, 0, 7)
        with pytest.raises(ValueError):
            run_replications(small, 1, 7, engine="turbo")


class TestDetectionFraction:
    @pytest.mark.parametrize("detected, missed, expected", [(30, 10, 0.75), (0, 50, 0.0)])
    def test_ratio(self, detected, missed, expected):
        rc = RunCounters(detected={(1, "A"): detected}, missed=missed)
        assert detection_fraction(rc) == expected

    def test_undefined(self):
        assert detection_fraction(RunCounters()) is None

    def test_window_fractions(self):
        rc = RunCounters(sample_detected=[1, 1, 4], sample_missed=[1, 1, 1])
        assert rc.window_fractions() == [0.5, None, 1.0]
        assert rc.cumulative_fractions() == [0.5, 0.5, 0.8]


class TestSummary:
    def test_constant(self):
        s = summarize_values([0.4] * 20)
        assert s.sd == 0.0 and s.ci_half_width == 0.0

    def test_two_values(self):
        s = summarize_values([0.2, 0.4])
        assert s.mean == pytest.approx(0.3)
        assert s.sd == pytest.approx(0.141421356, rel=1e-6)
        assert s.ci_half_width == pytest.approx(1.2706, abs=5e-4)

    def test_single_value_has_no_interval(self):
        s = summarize_values([0.3])
        assert s.mean == 0.3 and not s.ci_available

    def test_undefined_values_skipped(self):
        assert summarize_values([None, 0.5, None]).n == 1

    def test_half_width_shrinks_with_root_n(self):
        x10 = np.random.default_rng(0).normal(0.5, 0.1, size=10)
        # tiling keeps the spread almost fixed, isolating sqrt(n) and the t quantiles
        ratio = summarize_values(np.tile(x10, 4)).ci_half_width / summarize_values(x10).ci_half_width
        sd_ratio = np.std(np.tile(x10, 4), ddof=1) / np.std(x10, ddof=1)
        assert ratio / sd_ratio == pytest.approx(0.5 * 2.0226909 / 2.2621572, rel=1e-6)


class TestMser:
    def test_white_noise_rarely_truncates(self):
        rng = np.random.default_rng(1)
        cuts = [mser_warmup(rng.normal(size=500), 5).batches for _ in range(200)]
        # d* near zero: mostly within the first tenth of the 100 batches
        assert np.mean(np.array(cuts) <= 10) >= 0.8

    def test_initial_bias_removed(self):
        series = [10.0] * 5 + [0.0] * 45
        w = mser_warmup(series, 5)
        assert w.batches == 1 and w.index == 5

    def test_constant(self):
        assert mser_warmup([3.0] * 40, 5).index == 0

    def test_too_short(self):
        with pytest.raises(ValueError):
            mser_warmup([1.0] * 9, 5)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=10, max_size=200),
           st.floats(0.1, 10), st.floats(-100, 100))
    def test_affine_invariance(self, xs, scale, shift):
        a = mser_warmup(xs, 5)
        b = mser_warmup([scale * x + shift for x in xs], 5)
        assert a.index == b.index
        assert a.batches <= (len(xs) // 5) // 2

    def test_welch_window(self):
        reps = [[1.0, 2.0, 3.0, 4.0, 5.0], [1.0, 2.0, 3.0, 4.0, 5.0]]
        assert welch_average(reps) == [1.0, 2.0, 3.0, 4.0, 5.0]
        assert welch_average(reps, window=1) == [1.0, 2.0, 3.0, 4.0]


def _rs(n):
    reps = [RunCounters(replication=i, arrivals=100 + i, clandestine_arrivals=3,
                        detected={(2, "A"): i % 3}, missed=3 - i % 3, exits=100 + i,
                        time_in_system=1.0 / 3.0 * (i + 1))
            for i in range(n)]
    return ReplicationSet(reps, 7, "abc123")


class TestCsv:
    def test_shape(self):
        text = csv_text(_rs(20), ["detection_fraction"])
        blocks = text.strip().split("\n\n")
        assert len(blocks[0].splitlines()) == 21
        assert len(blocks[1].splitlines()) == 2

    def test_empty(self):
        assert csv_text(ReplicationSet([], 7, "abc123")) == "scenario_hash,master_seed,replication,metric,value\n"

    def test_round_trip(self, tmp_path):
        rs = _rs(5)
        path = tmp_path / "out.csv"
        export_csv(rs, path)
        runs, summary = read_csv(path)
        assert len(runs) == 5 * len(METRICS)
        assert [r["metric"] for r in summary] == list(METRICS)
        for row in runs:
            rc = rs.replications[int(row["replication"])]
            value = rc.metric(row["metric"])
            if value is None:
                assert row["value"] == "NA"
            else:
                assert float(row["value"]) == pytest.approx(value, rel=1e-9)
                assert row["value"] == format(value, ".10g")

    def test_undefined_written_as_na(self):
        text = csv_text(ReplicationSet([RunCounters()], 7, "h"), ["detection_fraction"])
        assert "detection_fraction,NA" in text
        assert "nan" not in text
