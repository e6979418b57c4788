"""Zero-truncated Poisson instantiation of the tilting machinery.

Count data observed only when positive (the missing-species setting) fit
the same two truncation mechanisms as z-scores, with the capture
probability ``1 - exp(-u)`` playing the role of the selection probability.
Tilting a prior by that factor makes the end-truncation marginal equal the
per-unit marginal of the tilted prior, so the localization LP carries over
with the folded-normal CDF columns replaced by cumulative zero-truncated
Poisson masses at the observed counts.

The prior class is all distributions on a positive support interval,
discretized as point masses on a log-spaced grid; a point mass at zero is
excluded because the tilt map is not invertible there.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .estimands import RatioFunctional
from .floc import FLocProblem, InsufficientDataError, IntervalResult, dkw_radius, solve_bounds
from .priors import AtomizedPrior, prior_integral

__all__ = [
    "CountSample",
    "poisson_prior",
    "capture_prob",
    "tilt_poisson",
    "untilt_poisson",
    "zt_pmf",
    "zt_marginals",
    "posterior_mean_functional",
    "log_spaced_support",
    "poisson_floc_problem",
    "poisson_posterior_mean_band",
    "read_counts_csv",
    "DEFAULT_SUPPORT",
]

DEFAULT_SUPPORT = (0.01, 25.0, 400)


@dataclass(frozen=True)
class CountSample:
    """Positive integer counts (one per observed species)."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        c = np.sort(np.asarray(self.counts, dtype=int))
        if c.size == 0:
            raise InsufficientDataError("no counts supplied")
        if np.any(c < 1):
            raise ValueError("zero-truncated counts must all be >= 1")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return int(self.counts.size)

    @property
    def max_count(self) -> int:
        return int(self.counts.max())

    def frequencies(self) -> dict[int, int]:
        vals, cnt = np.unique(self.counts, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, cnt)}


def poisson_prior(u, w, label: str = "") -> AtomizedPrior:
    """An atomized prior restricted to strictly positive rates."""
    g = AtomizedPrior(np.asarray(u, dtype=float), np.asarray(w, dtype=float), label)
    if np.any(g.u <= 0):
        raise ValueError("Poisson prior atoms must be strictly positive (no mass at 0)")
    return g


def capture_prob(u):
    """Probability a Poisson(u) draw is observed at all: ``1 - exp(-u)``."""
    return -np.expm1(-np.asarray(u, dtype=float))


def tilt_poisson(g: AtomizedPrior) -> AtomizedPrior:
    """Reweight atoms by capture probability; inverse of :func:`untilt_poisson`."""
    raw = g.w * capture_prob(g.u)
    return AtomizedPrior(g.u, raw / raw.sum(), f"tilt({g.label})")


def untilt_poisson(g: AtomizedPrior) -> AtomizedPrior:
    raw = g.w / capture_prob(g.u)
    return AtomizedPrior(g.u, raw / raw.sum(), f"untilt({g.label})")


def zt_pmf(u, z):
    """Zero-truncated Poisson pmf ``exp(-u) u^z / (z! (1 - exp(-u)))``.

    Stable in logs for large counts; broadcasts over u and z.
    """
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    log_raw = z * np.log(u) - u - gammaln(z + 1.0)
    return np.exp(log_raw) / capture_prob(u)


def _poisson_pmf(u, z):
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    return np.exp(z * np.log(u) - u - gammaln(z + 1.0))


def zt_marginals(g: AtomizedPrior, z_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Marginal pmfs over z = 1..z_max under both truncation mechanisms.

    Returns ``(end_truncation, per_unit)``.  End truncation mixes the plain
    Poisson pmf and renormalizes by the mixed capture probability; per-unit
    mixes the already-truncated pmfs.  The end-truncation marginal under g
    equals the per-unit marginal under the tilted g.
    """
    if z_max < 1:
        raise ValueError("z_max must be at least 1")
    z = np.arange(1, z_max + 1, dtype=float)
    pmf = _poisson_pmf(g.u[:, None], z[None, :])  # (M, Z)
    end = (g.w @ pmf) / float(g.w @ capture_prob(g.u))
    per_unit = g.w @ (pmf / capture_prob(g.u)[:, None])
    return end, per_unit


def posterior_mean_functional(z: int) -> RatioFunctional:
    """Posterior mean of the rate given an observed count of z >= 1.

    Numerator ``u * pois(z; u)``, denominator ``pois(z; u)``; the
    truncation factor cancels in the ratio, and the localization path is
    the folded-normal one with the capture probability standing in for the
    selection probability.
    """
    z = int(z)
    if z < 1:
        raise ValueError(f"count must be a positive integer, got {z}")
    return RatioFunctional(
        "pois_post_mean",
        lambda u: np.asarray(u, dtype=float) * _poisson_pmf(u, float(z)),
        lambda u: _poisson_pmf(u, float(z)),
        float(z),
        f"E[rate | count = {z}]",
    )


def log_spaced_support(lo: float = 0.01, hi: float = 25.0, n: int = 400) -> np.ndarray:
    if not (0 < lo < hi) or n < 2:
        raise ValueError("support requires 0 < lo < hi and n >= 2")
    return np.exp(np.linspace(np.log(lo), np.log(hi), n))


def poisson_floc_problem(
    sample: CountSample,
    support: np.ndarray | None = None,
    alpha: float = 0.05,
) -> tuple[FLocProblem, np.ndarray]:
    """Band-constrained program for count data over a point-mass dictionary.

    The grid is the distinct observed counts; each support point is its own
    dictionary element, so the model CDF column is the cumulative
    zero-truncated pmf.  Returns the problem and the support used.
    """
    support = np.asarray(support if support is not None else log_spaced_support(*DEFAULT_SUPPORT))
    grid_counts = np.unique(sample.counts)
    if grid_counts.size < 2:
        raise InsufficientDataError("need at least two distinct counts for a CDF band")
    fhat = np.searchsorted(sample.counts, grid_counts, side="right") / sample.n

    z_all = np.arange(1, sample.max_count + 1, dtype=float)
    pmf = _poisson_pmf(support[:, None], z_all[None, :]) / capture_prob(support)[:, None]
    cdf_all = np.cumsum(pmf, axis=1)  # (K, z_max)
    columns = cdf_all[:, grid_counts - 1]

    problem = FLocProblem(
        grid=grid_counts.astype(float),
        fhat=fhat,
        radius=dkw_radius(sample.n, alpha),
        alpha=alpha,
        cdf_columns=np.clip(columns, 0.0, 1.0),
        sel_probs=capture_prob(support),
        dictionary=None,
        prior_class="positive_rates",
        n_trun=sample.n,
    )
    return problem, support


def poisson_posterior_mean_band(
    sample: CountSample,
    z_values=range(1, 11),
    support: np.ndarray | None = None,
    alpha: float = 0.05,
) -> list[IntervalResult]:
    """Localization intervals for the posterior mean at each count value."""
    problem, support = poisson_floc_problem(sample, support, alpha)
    cap = capture_prob(support)
    results = []
    for z in z_values:
        functional = posterior_mean_functional(int(z))
        numer = functional.numerator(support) / cap
        denom = functional.denominator(support) / cap
        results.append(
            solve_bounds(problem, numer, denom, estimand="pois_post_mean", z=float(z))
        )
    return results


def plugin_posterior_mean(g: AtomizedPrior, z: int) -> float:
    """Direct posterior mean at a known prior (no truncation adjustment
    needed once the count is observed)."""
    f = posterior_mean_functional(z)
    return prior_integral(g, f.numerator) / prior_integral(g, f.denominator)


def read_counts_csv(path) -> CountSample:
    """Read a count,species_frequency table and expand to one row per species."""
    counts: list[int] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["count", "species_frequency"]:
            raise ValueError(f"{path}: expected header count,species_frequency")
        for row in reader:
            if not row or not row[0].strip() or row[0].lstrip().startswith("#"):
                continue
            c, freq = int(row[0]), int(row[1])
            if c < 1 or freq < 0:
                raise ValueError(f"{path}: invalid row {row}")
            counts.extend([c] * freq)
    return CountSample(np.asarray(counts, dtype=int))
