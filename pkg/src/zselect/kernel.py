"""Closed-form folded-normal primitives.

Every quantity downstream (prior dictionaries, tilting, the localization
linear program, the simulation harness) reduces to a handful of Gaussian
expressions evaluated at a nonnegative signal magnitude ``u = |mu|``:

* the folded-normal density ``phi(z - u) + phi(z + u)``,
* the probability that ``|N(u, 1)|`` lands in a union of intervals,
* the two-sided power function at the 1.96 threshold.

All functions are pure, accept scalars or numpy arrays, and broadcast.
The normal CDF is the erf-based double-precision ``scipy.special.ndtr``;
right-unbounded intervals are represented by ``math.inf`` and the CDF at
``+-inf`` is exactly ``1``/``0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

__all__ = [
    "Z_CRIT",
    "SelectionRegion",
    "RegionError",
    "norm_pdf",
    "norm_cdf",
    "folded_density",
    "fold_interval_prob",
    "selection_prob",
    "power_beta",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

Z_CRIT = 1.96
"""Two-sided 5% significance threshold used by the power and omega estimands."""


class RegionError(ValueError):
    """A selection region violates its invariants (overlap, order, measure)."""


def norm_pdf(x):
    """Standard normal density, vectorized."""
    x = np.asarray(x, dtype=float)
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return out if out.ndim else float(out)


def norm_cdf(x):
    """Standard normal CDF via erf; exact 0/1 at -+inf."""
    out = ndtr(np.asarray(x, dtype=float))
    return out if np.ndim(out) else float(out)


def folded_density(z, u):
    """Density of |N(u, 1)| at z >= 0, i.e. ``phi(z - u) + phi(z + u)``.

    Even under the extension ``u -> -u``; integrates to one over
    ``z in [0, inf)`` for every u.
    """
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    out = norm_pdf(z - u) + norm_pdf(z + u)
    return out if np.ndim(out) else float(out)


def fold_interval_prob(a, b, u):
    """P[|Z| in [a, b]] for Z ~ N(u, 1), with ``b = inf`` allowed.

    Equals ``Phi(b - u) - Phi(a - u) + Phi(-a - u) - Phi(-b - u)``.

    Raises:
        ValueError: if ``a > b`` or ``a < 0``.
    """
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(a_arr < 0.0):
        raise ValueError(f"interval start must be nonnegative, got {a}")
    if np.any(a_arr > b_arr):
        raise ValueError(f"interval must satisfy a <= b, got [{a}, {b}]")
    u = np.asarray(u, dtype=float)
    out = ndtr(b_arr - u) - ndtr(a_arr - u) + ndtr(-a_arr - u) - ndtr(-b_arr - u)
    # guard tiny negative values from cancellation
    out = np.clip(out, 0.0, 1.0)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class SelectionRegion:
    """Union of disjoint closed intervals on the nonnegative half-line.

    The region within which publication is assumed unbiased.  Intervals are
    sorted ascending, pairwise disjoint, and of positive total length; a
    right-unbounded interval carries ``math.inf`` as its endpoint.
    """

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if not self.intervals:
            raise RegionError("selection region needs at least one interval")
        ivs = tuple((float(a), float(b)) for a, b in self.intervals)
        prev_end = -1.0
        total = 0.0
        for a, b in ivs:
            if not (0.0 <= a <= b):
                raise RegionError(f"bad interval [{a}, {b}]")
            if a < prev_end:
                raise RegionError("intervals must be disjoint and sorted ascending")
            prev_end = b
            total += b - a
        if total <= 0.0:
            raise RegionError("selection region has zero Lebesgue measure")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def half_line(cls, lower: float = 2.1) -> "SelectionRegion":
        """The default region [lower, inf)."""
        return cls(((lower, math.inf),))

    @classmethod
    def interval(cls, lower: float, upper: float) -> "SelectionRegion":
        return cls(((lower, upper),))

    @property
    def lower(self) -> float:
        return self.intervals[0][0]

    def contains(self, z):
        """Membership indicator (closed intervals); scalar or array."""
        z = np.asarray(z, dtype=float)
        inside = np.zeros(z.shape, dtype=bool)
        for a, b in self.intervals:
            inside |= (z >= a) & (z <= b)
        return inside if inside.ndim else bool(inside)

    def clipped_below(self, s: float) -> tuple[tuple[float, float], ...]:
        """Intersection of the region with [0, s], as an interval list."""
        out = []
        for a, b in self.intervals:
            if a > s:
                break
            out.append((a, min(b, s)))
        return tuple(out)

    def selection_prob(self, u):
        """P[|Z| in region] for Z ~ N(u, 1); scalar or array in u."""
        u = np.asarray(u, dtype=float)
        total = np.zeros(u.shape, dtype=float)
        for a, b in self.intervals:
            total += fold_interval_prob(a, b, u)
        total = np.clip(total, 0.0, 1.0)
        return total if total.ndim else float(total)

    def prob_below(self, s: float, u):
        """P[|Z| in region and |Z| <= s] for Z ~ N(u, 1)."""
        u = np.asarray(u, dtype=float)
        total = np.zeros(u.shape, dtype=float)
        for a, b in self.clipped_below(s):
            total += fold_interval_prob(a, b, u)
        return total if total.ndim else float(total)

    def describe(self) -> str:
        parts = []
        for a, b in self.intervals:
            top = "inf" if math.isinf(b) else f"{b:g}"
            parts.append(f"[{a:g}, {top}]")
        return " U ".join(parts)


def selection_prob(region: SelectionRegion, u):
    """Module-level alias for ``region.selection_prob`` (readability at call sites)."""
    return region.selection_prob(u)


def power_beta(u):
    """Power of the two-sided level-0.05 z-test at signal u; even in u.

    ``beta(u) = 1 - Phi(1.96 - u) + Phi(-1.96 - u)``, the probability that
    |N(u, 1)| exceeds 1.96.  ``beta(0)`` evaluates to 0.0499958, the exact
    value rather than the display value 0.05.
    """
    u = np.asarray(u, dtype=float)
    out = 1.0 - ndtr(Z_CRIT - u) + ndtr(-Z_CRIT - u)
    return out if np.ndim(out) else float(out)
