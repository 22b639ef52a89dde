"""Command-line entry point: ``portsim {validate,run,sweep,oracle,warmup}``.

Exit codes
----------
0  success
2  usage error, unreadable file or invalid JSON
3  the scenario violates a validation rule
4  the exact oracle cannot evaluate the screening net (cycle or path cap)
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

from . import __version__
from .analysis import (
    ENGINES,
    METRICS,
    csv_text,
    detection_warmup,
    fmt,
    mser_warmup,
    run_replications,
    summarize,
    welch_average,
)
from .berth import BerthMode
from .oracle import (
    OracleError,
    concavity_check,
    lorry_classes,
    reduce_scenario,
    scenario_detection,
)
from .scenario import (
    ScenarioParseError,
    ScenarioValidationError,
    load_scenario,
    parse_scenario_file,
    validate,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_ORACLE = 4

SEED_ENV = "PORTSIM_SEED"
DEFAULT_SEED = 1
SWEEP_HEADER = ("p", "mean", "ci95", "oracle_d")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


# -- helpers ------------------------------------------------------------------

def resolve_seed(flag, scenario) -> int:
    """Flag, then ``PORTSIM_SEED``, then the scenario's ``run.seed``, then 1."""
    if flag is not None:
        return int(flag)
    env = os.environ.get(SEED_ENV, "").strip()
    if env:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"{SEED_ENV}={env!r} is not an integer") from None
    if "seed" in scenario.raw.get("run", {}):
        return scenario.run.seed
    return DEFAULT_SEED


def sweep_grid(start: float, end: float, step: float) -> list:
    """``floor((end - start) / step) + 1`` evenly spaced points from ``start``."""
    if not 0.0 <= start <= end <= 1.0:
        raise CliError(f"need 0 <= p-start <= p-end <= 1, got {start} and {end}")
    if step <= 0.0:
        raise CliError(f"p-step must be positive, got {step}")
    # the small guard absorbs binary noise such as (1.0 - 0.0) / 0.1 = 9.999...
    count = math.floor((end - start) / step + 1e-9) + 1
    return [round(start + i * step, 10) for i in range(count)]


def _load(args):
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioParseError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    except ScenarioValidationError as exc:
        raise CliError(f"{args.scenario}: invalid scenario\n{exc}", EXIT_INVALID) from None
    changes = {}
    if getattr(args, "horizon", None) is not None:
        if args.horizon <= 0:
            raise CliError("--horizon must be positive")
        changes["horizon"] = args.horizon
    if getattr(args, "berth_mode", None) is not None:
        if scenario.berth is None:
            raise CliError("--recheck/--check-once given but the scenario has no Berth")
        changes["berth_mode"] = args.berth_mode
    return scenario.with_changes(**changes) if changes else scenario


def _reps(args, scenario) -> int:
    n = scenario.run.replications if args.reps is None else args.reps
    if n < 1:
        raise CliError("--reps must be at least 1")
    return n


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)


def _replicate(args, scenario, seed, n):
    return run_replications(scenario, n, seed, workers=args.workers, engine=args.engine)


def summary_table(rs, metrics=METRICS) -> str:
    """Fixed-width summary: one row per metric, ``NA`` where undefined."""
    lines = [f"{'metric':<24}{'n':>6}{'mean':>16}{'sd':>16}{'ci95':>16}"]
    for metric in metrics:
        s = summarize(rs, metric)
        lines.append(f"{metric:<24}{s.n:>6}{fmt(s.mean):>16}{fmt(s.sd):>16}{fmt(s.ci_half_width):>16}")
    return "\n".join(lines)


# -- subcommands ----------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        data, found = parse_scenario_file(args.scenario)
    except ScenarioParseError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    violations = found + validate(data)
    for v in violations:
        print(v)
    if violations:
        print(f"{len(violations)} violation(s)", file=sys.stderr)
        return EXIT_INVALID
    print(f"{args.scenario}: ok")
    return EXIT_OK


def cmd_run(args) -> int:
    scenario = _load(args)
    seed = resolve_seed(args.seed, scenario)
    rs = _replicate(args, scenario, seed, _reps(args, scenario))
    out = Path(args.out)
    _write(out, csv_text(rs))
    print(f"scenario {scenario.name} ({rs.scenario_hash})  seed {seed}  "
          f"replications {len(rs)}  horizon {fmt(scenario.run.horizon)} min")
    print(summary_table(rs))
    if not args.no_plot:
        from .plotting import run_figure

        run_figure(rs, out.with_suffix(".png"), title=f"{scenario.name}, seed {seed}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = _load(args)
    seed = resolve_seed(args.seed, scenario)
    n = _reps(args, scenario)
    grid = sweep_grid(args.p_start, args.p_end, args.p_step)
    out = Path(args.out)
    rows = []
    for p in grid:
        if args.sweep_fp:
            variant = scenario.with_changes(common_fp=p)
            oracle_d = _oracle_d(scenario, None)
        else:
            variant = scenario.with_changes(common_tp=p)
            oracle_d = _oracle_d(scenario, p)
        rs = _replicate(args, variant, seed, n)
        _write(out / "runs" / f"p={fmt(p)}.csv", csv_text(rs))
        s = summarize(rs)
        rows.append((p, s.mean, s.ci_half_width, oracle_d))
        print(f"p={fmt(p):<8}mean={fmt(s.mean):<16}ci95={fmt(s.ci_half_width):<16}"
              f"oracle_d={fmt(oracle_d)}", flush=True)
    lines = [",".join(SWEEP_HEADER)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    _write(out / "sweep.csv", "\n".join(lines) + "\n")
    if not args.no_plot:
        from .plotting import sweep_figure

        which = "false positive" if args.sweep_fp else "detection"
        sweep_figure(rows, out / "sweep.png",
                     title=f"{scenario.name}: common {which} rate sweep, {n} replications")
    return EXIT_OK


def _oracle_d(scenario, p):
    try:
        return scenario_detection(scenario, common_tp=p)
    except OracleError as exc:
        raise CliError(f"oracle: {exc}", EXIT_ORACLE) from None


def cmd_oracle(args) -> int:
    scenario = _load(args)
    grid = sweep_grid(args.p_start, args.p_end, args.p_step)
    try:
        verdict = concavity_check(scenario, grid)
        at_drm = scenario_detection(scenario)
    except OracleError as exc:
        raise CliError(f"oracle: {exc}", EXIT_ORACLE) from None
    print(f"{'p':>8}{'D(p)':>16}")
    for p, d in zip(verdict.p, verdict.d):
        print(f"{fmt(p):>8}{fmt(d):>16}")
    above = {True: "yes", False: "NO", None: "n/a (a route has fewer than 2 stages)"}
    print(f"monotone non-decreasing: {'yes' if verdict.monotone else 'NO'}")
    print(f"discretely concave:      {'yes' if verdict.concave else 'NO'}")
    print(f"fewest screenings:       {verdict.min_stages}")
    print(f"above diagonal:          {above[verdict.above_diagonal]}")
    print(f"D at scenario DRM rates: {fmt(at_drm)}")
    if any(reduce_scenario(scenario, side, com).approximate
           for side, com, _ in lorry_classes(scenario)):
        print("note: shortest-queue routing treated as an equal split over unlike stages")
    return EXIT_OK


def cmd_warmup(args) -> int:
    scenario = _load(args)
    seed = resolve_seed(args.seed, scenario)
    rs = _replicate(args, scenario, seed, _reps(args, scenario))
    per_rep = [rc.window_fractions() for rc in rs.replications]
    series = welch_average(per_rep)
    smoothed = welch_average(per_rep, window=args.window)
    warm = mser_warmup(series, args.batch) if len(series) >= 2 * args.batch else None
    buf_rows = [("window", "mean", "smoothed")]
    for i, m in enumerate(series):
        buf_rows.append((i, fmt(m), fmt(smoothed[i] if i < len(smoothed) else None)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(buf_rows)
    cut = None if warm is None else warm.index
    print(f"windows {len(series)}  MSER-{args.batch} truncation {fmt(cut)}"
          + ("  (capped at half the series)" if warm is not None and warm.capped else ""))
    check = detection_warmup(rs, args.batch)
    if check is not None and warm is not None and check.index != warm.index:
        print("warning: truncation differs from the CSV summary value", file=sys.stderr)
    if not args.no_plot:
        from .plotting import warmup_figure

        warmup_figure(series, smoothed, cut, out.with_suffix(".png"),
                      title=f"{scenario.name}: warm-up, {len(rs)} replications")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="portsim",
        description="Simulate multi-stage cargo screening and analyse the results.",
        epilog="exit codes: 0 ok, 2 usage or parse error, 3 invalid scenario, 4 oracle cannot evaluate",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--scenario", default="calais-default",
                      help="scenario JSON file or a shipped name (default: calais-default)")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--seed", type=int, default=None,
                     help=f"master seed (overrides {SEED_ENV} and the scenario's run.seed)")
    sim.add_argument("--reps", type=int, default=None,
                     help="replications (default: the scenario's run.replications)")
    sim.add_argument("--horizon", type=float, default=None, help="simulated minutes per replication")
    mode = sim.add_mutually_exclusive_group()
    mode.add_argument("--recheck", dest="berth_mode", action="store_const",
                      const=BerthMode.RECHECK.value, help="Berth squads may check a lorry repeatedly")
    mode.add_argument("--check-once", dest="berth_mode", action="store_const",
                      const=BerthMode.CHECK_ONCE.value, help="Berth squads check each lorry at most once")
    sim.add_argument("--engine", choices=ENGINES, default="fast",
                     help="compiled kernel or pure-Python engine (identical results)")
    sim.add_argument("--workers", type=int, default=1, help="parallel processes for replications")
    sim.add_argument("--no-plot", action="store_true", help="skip the figure")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--p-start", type=float, default=0.0)
    grid.add_argument("--p-end", type=float, default=1.0)
    grid.add_argument("--p-step", type=float, default=0.1)

    p = sub.add_parser("validate", parents=[scen], help="check a scenario file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", parents=[scen, sim], help="run replications and write a CSV")
    p.add_argument("--out", default="run.csv", help="CSV path; the figure goes next to it")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[scen, sim, grid],
                       help="vary every sensor's detection rate together")
    p.add_argument("--out", default="sweep", help="output directory")
    p.add_argument("--sweep-fp", action="store_true",
                   help="vary false positive rates instead of detection rates")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", parents=[scen, grid], help="exact D(p) table for the Berth-free net")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("warmup", parents=[scen, sim], help="Welch series and MSER truncation")
    p.add_argument("--out", default="warmup.csv", help="CSV path; the figure goes next to it")
    p.add_argument("--batch", type=int, default=5, help="MSER batch size")
    p.add_argument("--window", type=int, default=5, help="moving-average half-width")
    p.set_defaults(func=cmd_warmup)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"portsim: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
