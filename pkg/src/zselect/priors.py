"""Prior dictionaries over folded signal magnitudes.

Each prior class is represented by a finite dictionary ``{G_1..G_K}`` whose
convex hull stands in for the class.  Every dictionary element is stored as
its folded distribution (the law of ``|mu|``), discretized into ``M``
midpoint-quantile atoms ``(u_k, 1/M)``.  This reduces every integral needed
by the localization LP and the estimands to dense dot products and spans
heavy tails (``sigma = 100``) without a global location grid.

Classes:

* ``scale_normal``: folded zero-mean normals on a geometric sigma grid.
* ``unimodal``: folded symmetric uniforms on the same geometric grid
  (scale mixtures of symmetric uniforms are exactly the symmetric
  unimodal densities).
* ``all``: the scale-normal elements plus narrow folded normals located
  on an equispaced grid (universal density approximators).
* ``zcurve``: point masses at the integers 0..6.

Dictionary construction is deterministic: identical specs produce
byte-identical atom arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .kernel import SelectionRegion

__all__ = [
    "PriorClassSpec",
    "AtomizedPrior",
    "PriorDictionary",
    "AtomIntegralError",
    "geometric_grid",
    "folded_normal_quantile",
    "atomize",
    "point_mass",
    "mixture_prior",
    "build_dictionary",
    "prior_integral",
    "CLASS_IDS",
]

CLASS_IDS = ("scale_normal", "unimodal", "all", "zcurve")

DEFAULT_ATOMS = 512


class AtomIntegralError(ArithmeticError):
    """A weight function evaluated to a non-finite value at some atom."""


@dataclass(frozen=True)
class PriorClassSpec:
    """Configuration of one prior class and its discretization grids.

    Defaults follow the geometric sigma grid ``0.001 * 1.2**k`` capped at
    100, the same grid for the uniform half-widths, and a location grid of
    step ``loc_std / 4`` up to ``loc_max`` for the unrestricted class.
    """

    class_id: str
    sigma_min: float = 0.001
    sigma_max: float = 100.0
    gamma: float = 1.2
    a_min: float = 0.001
    a_max: float = 100.0
    loc_max: float = 12.0
    loc_std: float = 0.05
    atom_count: int = DEFAULT_ATOMS

    def __post_init__(self) -> None:
        if self.class_id not in CLASS_IDS:
            raise ValueError(f"unknown prior class {self.class_id!r}; expected one of {CLASS_IDS}")
        if not (self.sigma_min > 0 and self.sigma_max > self.sigma_min and self.gamma > 1):
            raise ValueError("sigma grid requires 0 < sigma_min < sigma_max and gamma > 1")
        if not (self.a_min > 0 and self.a_max > self.a_min):
            raise ValueError("uniform half-width grid requires 0 < a_min < a_max")
        if self.loc_std <= 0 or self.loc_max < 0:
            raise ValueError("location grid requires loc_std > 0 and loc_max >= 0")
        if self.atom_count < 2:
            raise ValueError("atom_count must be at least 2")

    def sigma_grid(self) -> np.ndarray:
        return geometric_grid(self.sigma_min, self.sigma_max, self.gamma)

    def halfwidth_grid(self) -> np.ndarray:
        return geometric_grid(self.a_min, self.a_max, self.gamma)

    def location_grid(self) -> np.ndarray:
        step = self.loc_std / 4.0
        n = int(round(self.loc_max / step)) + 1
        return np.arange(n) * step

    def cache_key(self) -> str:
        return (
            f"{self.class_id}|{self.sigma_min!r}|{self.sigma_max!r}|{self.gamma!r}|"
            f"{self.a_min!r}|{self.a_max!r}|{self.loc_max!r}|{self.loc_std!r}|{self.atom_count}"
        )


def geometric_grid(lo: float, hi: float, gamma: float) -> np.ndarray:
    """Geometric grid ``lo * gamma**(i-1)``, ``i = 1..K`` with
    ``K = ceil(log(hi/lo) / log(gamma))``."""
    k = math.ceil(math.log(hi / lo) / math.log(gamma))
    return lo * gamma ** np.arange(k)


def folded_normal_quantile(q, mean: float, sd: float) -> np.ndarray:
    """Quantile function of |N(mean, sd^2)| by bisection on the closed-form CDF.

    For ``mean == 0`` the half-normal inverse is used directly.  Bisection
    runs a fixed 90 iterations, enough to pin the result to full double
    precision on the bracket, and is deterministic.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")
    if mean == 0.0:
        return sd * ndtri(0.5 * (1.0 + q))
    m = abs(float(mean))

    def cdf(x):
        return ndtr((x - m) / sd) + ndtr((x + m) / sd) - 1.0

    lo = np.zeros_like(q)
    hi = np.full_like(q, m + sd * 40.0)
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        high_side = cdf(mid) >= q
        hi = np.where(high_side, mid, hi)
        lo = np.where(high_side, lo, mid)
    return 0.5 * (lo + hi)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AtomizedPrior:
    """A folded prior as nonnegative atoms ``(u_k, w_k)``, weights summing to one.

    ``atom_sel_prob`` caches the per-atom selection probability for the
    active region; it is filled at dictionary build time so that tilting
    never re-integrates.
    """

    u: np.ndarray
    w: np.ndarray
    label: str = ""
    atom_sel_prob: np.ndarray | None = None

    def __post_init__(self) -> None:
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if u.shape != w.shape or u.ndim != 1:
            raise ValueError("atoms and weights must be 1-d arrays of equal length")
        if np.any(u < 0):
            raise ValueError("atom locations must be nonnegative (folded support)")
        if np.any(w < 0):
            raise ValueError("atom weights must be nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"atom weights must sum to 1 within 1e-12, got {total!r}")
        if np.any(np.diff(u) < 0):
            order = np.argsort(u, kind="stable")
            u, w = u[order], w[order]
        object.__setattr__(self, "u", _freeze(u))
        object.__setattr__(self, "w", _freeze(w))
        if self.atom_sel_prob is not None:
            sp = np.atleast_1d(np.asarray(self.atom_sel_prob, dtype=float))
            if sp.shape != u.shape:
                raise ValueError("cached selection probabilities must align with atoms")
            object.__setattr__(self, "atom_sel_prob", _freeze(sp))

    @property
    def n_atoms(self) -> int:
        return self.u.size

    @property
    def sel_prob(self) -> float:
        """P[|Z| in region] under this prior (requires the cache)."""
        if self.atom_sel_prob is None:
            raise ValueError(f"prior {self.label!r} has no cached selection probabilities")
        return float(self.w @ self.atom_sel_prob)

    def with_region(self, region: SelectionRegion) -> "AtomizedPrior":
        """Copy with per-atom selection probabilities cached for ``region``."""
        return AtomizedPrior(self.u, self.w, self.label, region.selection_prob(self.u))

    def integral(self, psi: Callable[[np.ndarray], np.ndarray]) -> float:
        return prior_integral(self, psi)


def prior_integral(g: AtomizedPrior, psi: Callable[[np.ndarray], np.ndarray]) -> float:
    """Linear functional ``sum_k w_k psi(u_k)``.

    Raises:
        AtomIntegralError: if psi is non-finite at some atom (the offending
            atom is reported).
    """
    vals = np.asarray(psi(g.u), dtype=float)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise AtomIntegralError(
            f"weight function non-finite at atom u={float(g.u[k])!r} (index {k}) of {g.label!r}"
        )
    return float(g.w @ vals)


def point_mass(u: float, label: str | None = None) -> AtomizedPrior:
    return AtomizedPrior(np.array([float(u)]), np.array([1.0]), label or f"delta_{u:g}")


def mixture_prior(priors: Sequence[AtomizedPrior], pi: Sequence[float], label: str = "mixture") -> AtomizedPrior:
    """Pool atoms of several priors with outer weights ``pi`` (not renormalized)."""
    pi = np.asarray(pi, dtype=float)
    if len(priors) != pi.size:
        raise ValueError("one outer weight per prior required")
    u = np.concatenate([g.u for g in priors])
    w = np.concatenate([p * g.w for p, g in zip(pi, priors)])
    sel = None
    if all(g.atom_sel_prob is not None for g in priors):
        sel = np.concatenate([g.atom_sel_prob for g in priors])
    order = np.argsort(u, kind="stable")
    return AtomizedPrior(u[order], w[order], label, None if sel is None else sel[order])


def atomize(element, m: int = DEFAULT_ATOMS) -> AtomizedPrior:
    """Discretize a folded dictionary element into midpoint-quantile atoms.

    ``element`` is one of:

    * ``("normal", mean, sd)``  -> atoms of |N(mean, sd^2)|
    * ``("uniform", a)``        -> atoms of |Uniform(-a, a)| = Uniform(0, a)
    * ``("point", u)``          -> passed through unchanged

    Atoms sit at the ``(k - 1/2)/m`` quantiles of the folded distribution,
    each carrying weight ``1/m``.
    """
    kind = element[0]
    if kind == "point":
        return point_mass(element[1])
    if m < 2:
        raise ValueError("need at least 2 atoms")
    q = (np.arange(m) + 0.5) / m
    w = np.full(m, 1.0 / m)
    if kind == "normal":
        _, mean, sd = element
        u = folded_normal_quantile(q, float(mean), float(sd))
        label = f"fold_normal(m={mean:g}, sd={sd:g})"
    elif kind == "uniform":
        _, a = element
        u = float(a) * q
        label = f"fold_uniform(a={a:g})"
    else:
        raise ValueError(f"unknown element kind {kind!r}")
    return AtomizedPrior(u, w, label)


@dataclass(frozen=True)
class PriorDictionary:
    """Ordered elements spanning one prior class, sharing a selection region."""

    elements: tuple[AtomizedPrior, ...]
    region: SelectionRegion
    class_spec: PriorClassSpec | None = None
    label: str = ""

    def __post_init__(self) -> None:
        if not self.elements:
            raise ValueError("dictionary needs at least one element")
        missing = [g.label for g in self.elements if g.atom_sel_prob is None]
        if missing:
            raise ValueError(f"elements lack cached selection probabilities: {missing[:3]}")

    @property
    def size(self) -> int:
        return len(self.elements)

    @property
    def sel_probs(self) -> np.ndarray:
        return np.array([g.sel_prob for g in self.elements])

    def integrals(self, psi: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Vector of ``prior_integral(G_j, psi)`` over the dictionary."""
        return np.array([prior_integral(g, psi) for g in self.elements])

    def mixture(self, pi: Sequence[float], label: str = "mixture") -> AtomizedPrior:
        return mixture_prior(self.elements, pi, label)

    def cache_key(self) -> str:
        spec = self.class_spec.cache_key() if self.class_spec else self.label
        return f"{spec}|{self.region.describe()}"


def _dictionary(elements, region, spec, label) -> PriorDictionary:
    cached = tuple(g.with_region(region) for g in elements)
    return PriorDictionary(cached, region, spec, label)


def build_dictionary(
    spec: PriorClassSpec | str,
    region: SelectionRegion,
    atom_count: int | None = None,
) -> PriorDictionary:
    """Build the finite dictionary for one prior class.

    ``spec`` may be a full :class:`PriorClassSpec` or just a class id, in
    which case the defaults apply.  Selection probabilities for ``region``
    are cached on every element.
    """
    if isinstance(spec, str):
        spec = PriorClassSpec(spec)
    m = atom_count or spec.atom_count

    if spec.class_id == "zcurve":
        elements = [point_mass(float(j), f"delta_{j}") for j in range(7)]
        return _dictionary(elements, region, spec, "zcurve")

    if spec.class_id == "scale_normal":
        elements = [atomize(("normal", 0.0, s), m) for s in spec.sigma_grid()]
        return _dictionary(elements, region, spec, "scale_normal")

    if spec.class_id == "unimodal":
        elements = [atomize(("uniform", a), m) for a in spec.halfwidth_grid()]
        return _dictionary(elements, region, spec, "unimodal")

    # "all": scale-normal elements first (shared grid, keeps the class nesting
    # explicit), then the located narrow normals.
    elements = [atomize(("normal", 0.0, s), m) for s in spec.sigma_grid()]
    elements += [atomize(("normal", mu, spec.loc_std), m) for mu in spec.location_grid()]
    return _dictionary(elements, region, spec, "all")
