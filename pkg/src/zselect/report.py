"""Figure rendering for analysis outputs.

Each CLI report writes delimited data plus a rendered figure next to it:
interval bands along the evaluation grid, coverage curves from the
simulation harness, and the count-data posterior-mean panel with its
reference line.  Rendering always targets files (Agg backend); nothing here
opens a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .floc import IntervalResult
from .sim import CoverageRow

__all__ = ["apply_plot_style", "band_figure", "coverage_figure", "butterfly_figure"]

_BAND_COLOR = "#3b6ea5"
_TRUTH_COLOR = "#b3402a"


def apply_plot_style() -> None:
    plt.rcParams.update(
        {
            "figure.figsize": (6.0, 4.0),
            "figure.dpi": 110,
            "axes.grid": True,
            "grid.alpha": 0.25,
            "axes.spines.top": False,
            "axes.spines.right": False,
            "font.size": 10,
            "legend.frameon": False,
        }
    )


def _finite_band(results: list[IntervalResult]):
    pts = [(r.z, r.lower, r.upper) for r in results if r.z is not None and r.status == "optimal"]
    pts.sort()
    if not pts:
        return None
    z, lo, hi = map(np.asarray, zip(*pts))
    return z, lo, hi


def band_figure(
    results: list[IntervalResult],
    path,
    title: str = "",
    sample_values: np.ndarray | None = None,
    ylabel: str = "",
) -> bool:
    """Shaded lower/upper band over z; optional data histogram behind it.

    Returns False (and writes nothing) when no plottable points exist,
    e.g. for a single global estimand.
    """
    apply_plot_style()
    band = _finite_band(results)
    if band is None:
        return False
    z, lo, hi = band
    fig, ax = plt.subplots()
    if sample_values is not None and len(sample_values):
        ax.hist(
            sample_values,
            bins=min(80, max(10, int(np.sqrt(len(sample_values))))),
            density=True,
            color="0.82",
            label="truncated |z| (density)",
        )
    ax.fill_between(z, lo, hi, color=_BAND_COLOR, alpha=0.35, label="confidence band")
    ax.plot(z, lo, color=_BAND_COLOR, lw=1.0)
    ax.plot(z, hi, color=_BAND_COLOR, lw=1.0)
    ax.set_xlabel("|z|")
    ax.set_ylabel(ylabel or (results[0].estimand if results else ""))
    if title:
        ax.set_title(title)
    if sample_values is not None and len(sample_values):
        ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return True


def coverage_figure(rows: list[CoverageRow], path, nominal: float = 0.95) -> bool:
    """Pointwise coverage per method along the z grid, with the nominal line."""
    apply_plot_style()
    by_method: dict[str, list[CoverageRow]] = {}
    for r in rows:
        if r.z is not None:
            by_method.setdefault(r.method, []).append(r)
    if not by_method:
        return False
    fig, ax = plt.subplots()
    for method, items in sorted(by_method.items()):
        items.sort(key=lambda r: r.z)
        ax.plot([r.z for r in items], [r.coverage for r in items], marker="o", ms=3, label=method)
    ax.axhline(nominal, color=_TRUTH_COLOR, ls="--", lw=1.0, label=f"nominal {nominal:g}")
    ax.set_xlabel("|z|")
    ax.set_ylabel("pointwise coverage")
    ax.set_ylim(-0.02, 1.05)
    ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return True


def butterfly_figure(results: list[IntervalResult], path) -> bool:
    """Posterior-mean intervals per count with the identity reference line."""
    apply_plot_style()
    band = _finite_band(results)
    if band is None:
        return False
    z, lo, hi = band
    fig, ax = plt.subplots()
    ax.errorbar(
        z,
        0.5 * (lo + hi),
        yerr=np.vstack([0.5 * (hi - lo), 0.5 * (hi - lo)]),
        fmt="o",
        ms=4,
        capsize=3,
        color=_BAND_COLOR,
        label="posterior mean interval",
    )
    ax.plot(z, z, "k--", lw=1.0, label="reference E[rate | count] = count")
    ax.set_xlabel("count")
    ax.set_ylabel("posterior mean rate")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return True
