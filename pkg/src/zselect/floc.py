"""Localization intervals: DKW band plus a linear program over the simplex.

The confidence set for the truncated marginal CDF is a band of half-width
``sqrt(log(2/alpha) / (2 n))`` around the empirical CDF, evaluated on a
grid of sample quantiles.  For a dictionary mixture with tilted-space
weights, both the model CDF at the grid and any ratio functional are linear
in the weights, so the extreme values of the functional over all mixtures
consistent with the band are the optima of a fractional program.  The
Charnes-Cooper change of variables turns it into the linear program solved
here; the band constraint keeps its radius scaled by the Charnes-Cooper
homogenizing variable so that the feasible set is exactly the image of the
simplex program.

The bounds are simultaneous: every functional computed from the same band
is covered jointly with probability at least ``1 - alpha``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .estimands import RatioFunctional, make_functional
from .kernel import SelectionRegion
from .priors import PriorDictionary

__all__ = [
    "TruncatedSample",
    "FLocProblem",
    "IntervalResult",
    "EmptyLocalizationError",
    "InsufficientDataError",
    "build_grid",
    "dkw_radius",
    "functional_columns",
    "solve_bounds",
    "floc_band",
    "results_to_csv",
    "results_to_json",
]

CACHE_ENV_VAR = "ZSELECT_CACHE_DIR"


class InsufficientDataError(ValueError):
    """Fewer observations than the operation needs."""


class EmptyLocalizationError(RuntimeError):
    """No dictionary mixture is compatible with the confidence band.

    Under a well-specified prior class this happens with probability at
    most alpha; it usually signals that the class is too narrow for the
    data at the requested confidence level.
    """


@dataclass(frozen=True)
class TruncatedSample:
    """Sorted absolute z-scores inside the selection region, plus the
    pre-truncation counts needed by the publication risk ratio."""

    values: np.ndarray
    region: SelectionRegion
    n_published: int | None = None
    n_sig: int | None = None

    def __post_init__(self) -> None:
        vals = np.sort(np.asarray(self.values, dtype=float))
        if vals.size == 0:
            raise InsufficientDataError("no observations inside the selection region")
        if not np.all(self.region.contains(vals)):
            raise ValueError("sample contains values outside the selection region")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n_trun(self) -> int:
        return int(self.values.size)


def build_grid(sample: TruncatedSample, size: int = 1000) -> np.ndarray:
    """Sample-quantile grid from the smallest to the largest observation.

    Interior points are empirical quantiles at equispaced levels; tied
    quantiles are collapsed, which can only make the band constraint (and
    hence the intervals) more conservative.
    """
    vals = sample.values
    if vals.size < 2:
        raise InsufficientDataError("need at least 2 observations to build a grid")
    size = max(2, int(size))
    levels = np.linspace(0.0, 1.0, size)
    idx = np.minimum((levels * (vals.size - 1)).round().astype(int), vals.size - 1)
    grid = np.unique(vals[idx])
    return grid


def dkw_radius(n: int, alpha: float) -> float:
    """Half-width of the distribution-free CDF band: sqrt(log(2/alpha)/(2n))."""
    if n < 1:
        raise ValueError(f"sample size must be positive, got {n}")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(np.sqrt(np.log(2.0 / alpha) / (2.0 * n)))


@dataclass(frozen=True)
class FLocProblem:
    """Data of the band-constrained program, independent of the estimand.

    ``cdf_columns[j, l]`` is the model CDF of dictionary element j at grid
    point l in the per-unit (tilted) sampling model, i.e. the folded-normal
    mass of ``region intersect [0, s_l]`` divided by the element's selection
    probability.  ``fhat`` is the empirical CDF on the same grid.
    """

    grid: np.ndarray
    fhat: np.ndarray
    radius: float
    alpha: float
    cdf_columns: np.ndarray
    sel_probs: np.ndarray
    dictionary: PriorDictionary | None = None
    prior_class: str = ""
    n_trun: int = 0

    def __post_init__(self) -> None:
        if self.grid.size < 2:
            raise ValueError("grid needs at least two points")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if self.radius <= 0:
            raise ValueError("band radius must be positive")
        if self.cdf_columns.shape != (self.sel_probs.size, self.grid.size):
            raise ValueError("cdf column matrix must be (K, L)")
        if np.any(np.diff(self.cdf_columns, axis=1) < -1e-9):
            raise ValueError("model CDF columns must be nondecreasing along the grid")

    @property
    def n_elements(self) -> int:
        return int(self.sel_probs.size)

    @classmethod
    def from_sample(
        cls,
        dictionary: PriorDictionary,
        sample: TruncatedSample,
        alpha: float = 0.05,
        grid_size: int = 1000,
        cache_dir: str | os.PathLike | None = None,
    ) -> "FLocProblem":
        grid = build_grid(sample, grid_size)
        n = sample.n_trun
        fhat = np.searchsorted(sample.values, grid, side="right") / n
        region = dictionary.region
        columns = _cached_cdf_columns(dictionary, region, grid, cache_dir)
        return cls(
            grid=grid,
            fhat=fhat,
            radius=dkw_radius(n, alpha),
            alpha=alpha,
            cdf_columns=columns,
            sel_probs=dictionary.sel_probs,
            dictionary=dictionary,
            prior_class=dictionary.label,
            n_trun=n,
        )


def _cdf_columns(dictionary: PriorDictionary, region: SelectionRegion, grid: np.ndarray) -> np.ndarray:
    from scipy.special import ndtr

    cols = np.empty((dictionary.size, grid.size))
    for j, g in enumerate(dictionary.elements):
        # folded-normal mass of region intersect [0, s_l] per atom (L, M);
        # grid points below an interval clip to its start and contribute 0
        mass = np.zeros((grid.size, g.n_atoms))
        for a, b in region.intervals:
            hi = np.clip(grid, a, b)[:, None]
            mass += ndtr(hi - g.u) - ndtr(-hi - g.u) - (ndtr(a - g.u) - ndtr(-a - g.u))
        cols[j] = (mass @ g.w) / g.sel_prob
    return np.clip(cols, 0.0, 1.0)


def _cache_path(dictionary: PriorDictionary, region: SelectionRegion, grid: np.ndarray, cache_dir) -> Path | None:
    root = cache_dir or os.environ.get(CACHE_ENV_VAR)
    if not root:
        return None
    key = hashlib.sha256(
        "|".join(
            [dictionary.cache_key(), region.describe(), hashlib.sha256(grid.tobytes()).hexdigest()]
        ).encode()
    ).hexdigest()[:32]
    return Path(root) / f"cdf_columns_{key}.npz"


def _cached_cdf_columns(dictionary, region, grid, cache_dir) -> np.ndarray:
    path = _cache_path(dictionary, region, grid, cache_dir)
    if path is not None and path.exists():
        with np.load(path) as blob:
            stored = blob["columns"]
            if stored.shape == (dictionary.size, grid.size):
                return stored
    columns = _cdf_columns(dictionary, region, grid)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(path, columns=columns)
    return columns


def functional_columns(
    dictionary: PriorDictionary, functional: RatioFunctional
) -> tuple[np.ndarray, np.ndarray]:
    """Per-element numerator and denominator columns in the tilted space:
    ``integral(G_j, psi) / P_j`` for psi in (numerator, denominator)."""
    sel = dictionary.sel_probs
    numer = dictionary.integrals(functional.numerator) / sel
    denom = dictionary.integrals(functional.denominator) / sel
    return numer, denom


@dataclass(frozen=True)
class IntervalResult:
    """One confidence interval with its provenance."""

    estimand: str
    z: float | None
    lower: float
    upper: float
    alpha: float
    prior_class: str
    method: str = "floc"
    status: str = "optimal"
    n_variables: int = 0
    n_constraints: int = 0

    def as_dict(self) -> dict:
        return {
            "estimand": self.estimand,
            "z": self.z,
            "lower": self.lower,
            "upper": self.upper,
            "alpha": self.alpha,
            "prior_class": self.prior_class,
            "method": self.method,
            "status": self.status,
        }


_LP_OPTIONS = {"presolve": True}


def _solve_one(c, a_ub, b_ub, a_eq, b_eq):
    return linprog(
        c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
        options=_LP_OPTIONS,
    )


def solve_bounds(
    problem: FLocProblem,
    numer: np.ndarray,
    denom: np.ndarray,
    estimand: str = "",
    z: float | None = None,
    method: str = "floc",
) -> IntervalResult:
    """Minimize and maximize the functional over mixtures inside the band.

    Variables are the Charnes-Cooper scaled tilted weights; the
    homogenizing variable is eliminated through the simplex identity, which
    turns each band constraint into a pair of homogeneous inequalities.
    Infeasibility raises :class:`EmptyLocalizationError`; an unbounded
    maximization is reported with an infinite endpoint rather than a solver
    failure.
    """
    numer = np.asarray(numer, dtype=float)
    denom = np.asarray(denom, dtype=float)
    k = problem.n_elements
    if numer.shape != (k,) or denom.shape != (k,):
        raise ValueError("functional columns must match the dictionary size")

    dev = problem.cdf_columns - problem.fhat[None, :]  # (K, L)
    upper_rows = (dev - problem.radius).T  # sum_j x_j (dev - r) <= 0
    lower_rows = (-dev - problem.radius).T  # sum_j x_j (-dev - r) <= 0
    a_ub = np.vstack([upper_rows, lower_rows])
    b_ub = np.zeros(a_ub.shape[0])
    a_eq = denom[None, :]
    b_eq = np.array([1.0])

    # objective kept well-conditioned by a scalar rescale; constraints stay
    # in probability units
    scale = float(np.max(np.abs(numer)))
    scale = scale if scale > 0 else 1.0
    c = numer / scale

    bounds = []
    statuses = []
    for sign in (1.0, -1.0):
        res = _solve_one(sign * c, a_ub, b_ub, a_eq, b_eq)
        if res.status == 2:
            raise EmptyLocalizationError(
                f"no {problem.prior_class or 'dictionary'} mixture is compatible with the "
                f"level-{1 - problem.alpha:g} band (estimand {estimand or 'unknown'})"
            )
        if res.status == 3:
            bounds.append(np.inf if sign < 0 else -np.inf)
            statuses.append("unbounded")
        elif res.status == 0:
            bounds.append(sign * res.fun * scale)
            statuses.append("optimal")
        else:
            raise RuntimeError(f"LP solver failed with status {res.status}: {res.message}")

    status = "optimal" if statuses == ["optimal", "optimal"] else "unbounded"
    return IntervalResult(
        estimand=estimand,
        z=z,
        lower=bounds[0],
        upper=bounds[1],
        alpha=problem.alpha,
        prior_class=problem.prior_class,
        method=method,
        status=status,
        n_variables=k,
        n_constraints=a_ub.shape[0] + 1,
    )


def floc_band(
    problem: FLocProblem,
    estimand: str,
    z_grid,
    region: SelectionRegion | None = None,
    power_bin: tuple[float, float] | None = None,
) -> list[IntervalResult]:
    """One interval per evaluation point, all sharing the single band.

    Per-point solver errors are recorded in the result status and the batch
    continues.  Global estimands ignore the grid and solve once.
    """
    if problem.dictionary is None:
        raise ValueError("floc_band needs a problem built from a dictionary")
    region = region or problem.dictionary.region
    points = [None] if z_grid is None else [float(v) for v in np.atleast_1d(z_grid)]
    results: list[IntervalResult] = []
    for z in points:
        functional = make_functional(estimand, z=z, region=region, power_bin=power_bin)
        numer, denom = functional_columns(problem.dictionary, functional)
        try:
            results.append(solve_bounds(problem, numer, denom, estimand, z))
        except EmptyLocalizationError:
            results.append(
                IntervalResult(
                    estimand=estimand,
                    z=z,
                    lower=np.nan,
                    upper=np.nan,
                    alpha=problem.alpha,
                    prior_class=problem.prior_class,
                    status="infeasible",
                )
            )
    return results


def omega_interval(
    dictionary: PriorDictionary,
    sample: TruncatedSample,
    alpha: float = 0.05,
    grid_size: int = 1000,
    cache_dir=None,
):
    """95% interval for the publication risk ratio via two 97.5% pieces.

    The observed-data factor gets a Wald interval from the pre-truncation
    counts; the prior-side factor ``P[|Z| < 1.96] / P[|Z| >= 1.96]`` gets a
    localization interval through the monotone map ``p -> p / (1 - p)``.
    The elementwise product of the two intervals is a level ``1 - alpha``
    interval by Bonferroni.
    """
    from .estimands import combine_omega, make_prob_nonsig, omega1_wald

    if sample.n_published is None or sample.n_sig is None:
        raise ValueError("omega needs the pre-truncation counts on the sample")
    piece_level = 1.0 - alpha / 2.0
    iv1 = omega1_wald(sample.n_sig, sample.n_published, piece_level)

    problem = FLocProblem.from_sample(dictionary, sample, alpha / 2.0, grid_size, cache_dir)
    functional = make_prob_nonsig()
    numer, denom = functional_columns(dictionary, functional)
    res = solve_bounds(problem, numer, denom, "prob_nonsig")
    t_lo = min(max(res.lower, 0.0), 1.0 - 1e-12)
    t_hi = min(max(res.upper, 0.0), 1.0 - 1e-12)
    iv2 = (t_lo / (1.0 - t_lo), t_hi / (1.0 - t_hi))
    return combine_omega(iv1, iv2, sample.n_published, sample.n_sig / sample.n_published)


def results_to_csv(results: list[IntervalResult], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("estimand,z,lower,upper,alpha,prior_class,method,status\n")
        for r in results:
            z = "" if r.z is None else repr(float(r.z))
            fh.write(
                f"{r.estimand},{z},{r.lower!r},{r.upper!r},{r.alpha!r},"
                f"{r.prior_class},{r.method},{r.status}\n"
            )


def results_to_json(results: list[IntervalResult], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.as_dict() for r in results], fh, indent=2)
        fh.write("\n")
