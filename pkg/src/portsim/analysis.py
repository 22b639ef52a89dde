"""Output analysis across replications: counters, interval estimates, warm-up."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

METRICS = (
    "detection_fraction",
    "arrivals",
    "clandestine_arrivals",
    "detected",
    "missed",
    "clandestine_in_flight",
    "false_positives",
    "balked",
    "exits",
    "in_flight",
    "mean_time_in_system",
)

RUN_HEADER = ("scenario_hash", "master_seed", "replication", "metric", "value")
SUMMARY_HEADER = ("metric", "n", "mean", "sd", "ci95_half_width", "warmup_index")
NA = "NA"


@dataclass
class RunCounters:
    replication: int = 0
    horizon: float = 0.0
    arrivals: int = 0
    clandestine_arrivals: int = 0
    # (node id, sensor) of the first detecting screening -> lorries
    detected: dict = field(default_factory=dict)
    missed: int = 0
    false_positives: int = 0
    true_positives: int = 0
    screenings: int = 0
    berth_checks: int = 0
    squad_ticks: int = 0
    balked: int = 0
    exits: int = 0
    in_flight_at_end: int = 0
    clandestine_in_flight: int = 0
    blocked_at_end: int = 0
    parked_at_end: int = 0
    time_in_system: float = 0.0
    events: int = 0
    sample_times: list = field(default_factory=list)
    sample_detected: list = field(default_factory=list)
    sample_missed: list = field(default_factory=list)
    queue_samples: dict = field(default_factory=dict)
    mean_in_system: dict = field(default_factory=dict)
    served: dict = field(default_factory=dict)

    @property
    def detected_total(self) -> int:
        return sum(self.detected.values())

    def conserved(self) -> bool:
        return (
            self.detected_total + self.missed + self.clandestine_in_flight == self.clandestine_arrivals
            and self.arrivals == self.exits + self.in_flight_at_end + self.balked
        )

    def metric(self, name: str):
        if name == "detection_fraction":
            return detection_fraction(self)
        if name == "detected":
            return self.detected_total
        if name == "in_flight":
            return self.in_flight_at_end
        if name == "mean_time_in_system":
            return self.time_in_system / self.exits if self.exits else None
        return getattr(self, name)

    def window_fractions(self) -> list:
        """Detection fraction within each sampling window (``None`` if no clandestine exits)."""
        out, prev_d, prev_m = [], 0, 0
        for d, m in zip(self.sample_detected, self.sample_missed):
            done = (d - prev_d) + (m - prev_m)
            out.append((d - prev_d) / done if done else None)
            prev_d, prev_m = d, m
        return out

    def cumulative_fractions(self) -> list:
        return [d / (d + m) if d + m else None
                for d, m in zip(self.sample_detected, self.sample_missed)]


@dataclass
class ReplicationSet:
    replications: list
    master_seed: int
    scenario_hash: str
    confidence: float = 0.95

    def __len__(self):
        return len(self.replications)

    def values(self, metric: str) -> list:
        return [rc.metric(metric) for rc in self.replications]


ENGINES = ("fast", "reference")


def run_replications(scenario, n: int, master_seed: int, horizon: float | None = None,
                     first: int = 0, workers: int = 1, sample_interval: float | None = None,
                     engine: str = "fast") -> ReplicationSet:
    """Run replications ``first .. first + n - 1`` of ``scenario``.

    Each replication draws only from its own streams, so replication ``i``
    comes out the same alone or in a batch, serial or parallel.  ``engine``
    picks the compiled kernel (``"fast"``) or the object model
    (``"reference"``); both give identical counters.
    """
    if n < 1:
        raise ValueError("need at least one replication")
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; choose from {', '.join(ENGINES)}")
    horizon = scenario.run.horizon if horizon is None else horizon
    jobs = [(scenario, master_seed, r, horizon, sample_interval, engine)
            for r in range(first, first + n)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    results.sort(key=lambda rc: rc.replication)
    return ReplicationSet(results, master_seed, scenario.hash, scenario.run.confidence)


def _run_one(job) -> RunCounters:
    scenario, seed, rep, horizon, sample_interval, engine = job
    if engine == "fast":
        from .fastpath import FastSimulation as Sim
    else:
        from .engine import Simulation as Sim
    sim = Sim(scenario, master_seed=seed, replication=rep, sample_interval=sample_interval)
    return sim.run_until(horizon)


def detection_fraction(rc: RunCounters) -> float | None:
    """Detected share of the clandestine lorries that completed their passage.

    ``None`` when no clandestine lorry has completed (undefined, not zero).
    """
    detected = rc.detected_total
    done = detected + rc.missed
    return detected / done if done else None


@dataclass(frozen=True)
class Summary:
    n: int
    mean: float | None
    sd: float | None
    ci_half_width: float | None
    confidence: float = 0.95

    @property
    def ci_available(self) -> bool:
        return self.ci_half_width is not None


def summarize_values(values: Sequence, confidence: float = 0.95) -> Summary:
    """Mean, sample sd and the t-based CI half-width; undefined values are skipped."""
    xs = [float(v) for v in values if v is not None]
    n = len(xs)
    if n == 0:
        return Summary(0, None, None, None, confidence)
    mean = math.fsum(xs) / n
    if n == 1:
        return Summary(1, mean, None, None, confidence)
    if all(x == xs[0] for x in xs):
        return Summary(n, xs[0], 0.0, 0.0, confidence)
    sd = math.sqrt(math.fsum((x - mean) ** 2 for x in xs) / (n - 1))
    t = stats.t.ppf(0.5 + confidence / 2.0, n - 1)
    return Summary(n, mean, sd, float(t * sd / math.sqrt(n)), confidence)


def summarize(rs: ReplicationSet, metric: str = "detection_fraction") -> Summary:
    return summarize_values(rs.values(metric), rs.confidence)


class Warmup(NamedTuple):
    index: int  # observations to delete
    batches: int  # the same in batches
    capped: bool  # minimiser lay beyond half the batches


def batch_means(series: Sequence[float], batch: int) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    k = len(x) // batch
    return x[: k * batch].reshape(k, batch).mean(axis=1)


def mser_statistic(z: np.ndarray) -> np.ndarray:
    """MSER(d) for d = 0 .. k-2 over batch means ``z``."""
    k = len(z)
    # suffix sums give every truncated mean/variance in one pass
    tail = np.cumsum(z[::-1])[::-1]
    tail2 = np.cumsum((z * z)[::-1])[::-1]
    d = np.arange(k - 1)
    m = k - d
    mean = tail[d] / m
    ss = np.maximum(tail2[d] - m * mean * mean, 0.0)
    return ss / (m * m)


def mser_warmup(series: Sequence[float], batch: int = 5) -> Warmup:
    """MSER-``batch`` truncation point of an output series.

    The series is cut into batch means; the truncation minimising the
    marginal standard error of the remaining batch means wins, the smallest
    one on ties.  Truncation is capped at half of the batches.
    """
    if batch < 1:
        raise ValueError("batch size must be positive")
    if len(series) < 2 * batch:
        raise ValueError(f"MSER-{batch} needs at least {2 * batch} observations, got {len(series)}")
    z = batch_means(series, batch)
    lo, hi = z.min(), z.max()
    if hi == lo:
        return Warmup(0, 0, False)
    # rescaling first keeps the argmin identical under affine transforms
    z = (z - lo) / (hi - lo)
    score = mser_statistic(z)
    best = float(score.min())
    d_star = int(np.flatnonzero(score <= best + 1e-12 * max(best, 1e-300) + 1e-15)[0])
    half = len(z) // 2
    capped = d_star > half
    d_star = min(d_star, half)
    return Warmup(d_star * batch, d_star, capped)


def welch_average(series_per_rep: Sequence[Sequence], window: int = 0) -> list:
    """Across-replication mean per observation, smoothed by a centred moving average.

    ``None`` entries are ignored; observations with no defined value are
    dropped.  Near the start the window shrinks, as in Welch's procedure.
    """
    length = max((len(s) for s in series_per_rep), default=0)
    means = []
    for i in range(length):
        vals = [s[i] for s in series_per_rep if i < len(s) and s[i] is not None]
        if vals:
            means.append(math.fsum(vals) / len(vals))
    if window <= 0:
        return means
    out = []
    for i in range(len(means) - window):
        w = min(i, window)
        seg = means[i - w: i + w + 1]
        out.append(math.fsum(seg) / len(seg))
    return out


def detection_warmup(rs: ReplicationSet, batch: int = 5):
    """MSER truncation of the replication-averaged windowed detection fraction."""
    series = welch_average([rc.window_fractions() for rc in rs.replications])
    if len(series) < 2 * batch:
        return None
    return mser_warmup(series, batch)


def fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return NA
    if isinstance(value, bool):
        value = int(value)
    return format(value, ".10g")


def csv_text(rs: ReplicationSet, metrics: Sequence[str] | None = None) -> str:
    metrics = METRICS if metrics is None else tuple(metrics)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_HEADER)
    if not rs.replications:
        return buf.getvalue()
    for metric in metrics:
        for rc in rs.replications:
            w.writerow((rs.scenario_hash, rs.master_seed, rc.replication, metric, fmt(rc.metric(metric))))
    w.writerow(())
    w.writerow(SUMMARY_HEADER)
    warm = detection_warmup(rs)
    for metric in metrics:
        s = summarize(rs, metric)
        warmup = warm.index if (metric == "detection_fraction" and warm is not None) else None
        w.writerow((metric, s.n, fmt(s.mean), fmt(s.sd), fmt(s.ci_half_width), fmt(warmup)))
    return buf.getvalue()


def export_csv(rs: ReplicationSet, path, metrics: Sequence[str] | None = None) -> None:
    """Write per-replication rows, a blank line, then one summary row per metric."""
    text = csv_text(rs, metrics)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)


def read_csv(path) -> tuple[list[dict], list[dict]]:
    """Parse a file written by ``export_csv`` into (run rows, summary rows)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    runs, summary = [], []
    current, header = runs, rows[0] if rows else []
    for row in rows[1:]:
        if not row:
            current, header = summary, None
            continue
        if header is None:
            header = row
            continue
        current.append(dict(zip(header, row)))
    return runs, summary
