"""Figures written next to the CSV output of the command-line tool."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def sweep_figure(rows, path, title: str = "") -> Path:
    """Mean detection fraction against common sensitivity, with CI bars.

    ``rows`` are ``(p, mean, ci95, oracle_d)``; ``None`` entries are skipped.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        pts = [(p, m, c or 0.0) for p, m, c, _ in rows if m is not None]
        if pts:
            ps, ms, cs = zip(*pts)
            ax.errorbar(ps, ms, yerr=cs, fmt="o-", ms=4, capsize=3, label="simulated mean (95% CI)")
        oracle = [(p, d) for p, _, _, d in rows if d is not None]
        if oracle:
            ax.plot(*zip(*oracle), "--", color="tab:red", label="exact, Berth excluded")
        ax.plot([0, 1], [0, 1], ":", color="grey", label="single stage, D = p")
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(-0.02, 1.05)
        ax.set_xlabel("common sensor detection rate p")
        ax.set_ylabel("detected share of clandestine lorries")
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right")
        return _save(fig, path)


def run_figure(rs, path, title: str = "") -> Path:
    """Cumulative detection fraction of each replication over simulated days."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for rc in rs.replications:
            pts = [(t / 1440.0, f) for t, f in zip(rc.sample_times, rc.cumulative_fractions())
                   if f is not None]
            if pts:
                ax.plot(*zip(*pts), lw=0.8, alpha=0.6)
        ax.set_xlabel("simulated days")
        ax.set_ylabel("cumulative detection fraction")
        ax.set_ylim(-0.02, 1.02)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def warmup_figure(series, smoothed, truncation, path, title: str = "") -> Path:
    """Welch plot: replication-averaged series, its moving average and the cut."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(range(len(series)), series, lw=0.7, alpha=0.5, label="across-replication mean")
        if smoothed:
            ax.plot(range(len(smoothed)), smoothed, lw=1.4, label="moving average")
        if truncation is not None:
            ax.axvline(truncation, color="tab:red", ls="--", label=f"MSER cut = {truncation}")
        ax.set_xlabel("sampling window")
        ax.set_ylabel("windowed detection fraction")
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right")
        return _save(fig, path)
