"""Estimand factories: weight-function pairs over folded signal magnitudes.

Every reportable quantity is a ratio of two linear functionals of the
prior, ``T(G) = N(G) / D(G)``.  Because only the distribution of ``|mu|``
is identified, each estimand with a signed decomposition ``(nu(mu),
delta(mu))`` is evaluated through its symmetrized weights

    nu~(u) = (nu(u) + nu(-u)) / 2,    delta~(u) = (delta(u) + delta(-u)) / 2,

which is exact for any prior with the given folded law.  The factories
below bake the evaluation point into closures over ``u >= 0``; they feed
both the plug-in evaluator and the localization LP columns.

Posterior estimands conditional on ``|Z| = z`` share the folded density as
denominator.  The plain posterior mean of ``mu`` given ``Z`` is deliberately
absent: it depends on sign information that truncated absolute z-scores do
not identify.  Its sign-equivariant replacement is
:func:`make_symmetrized_posterior_mean`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri

from .kernel import Z_CRIT, SelectionRegion, folded_density, norm_pdf, power_beta
from .priors import AtomizedPrior, PriorDictionary, prior_integral

__all__ = [
    "RatioFunctional",
    "OmegaResult",
    "ESTIMAND_IDS",
    "make_marginal_density",
    "make_normalized_marginal",
    "make_power_bin",
    "make_sign_agreement",
    "make_symmetrized_posterior_mean",
    "make_replication_prob",
    "make_future_coverage",
    "make_effect_size_repl",
    "make_prob_nonsig",
    "make_functional",
    "power_partition",
    "evaluate_plugin",
    "plugin_value",
    "omega1_wald",
    "combine_omega",
]

ESTIMAND_IDS = (
    "marginal",
    "marginal_norm",
    "power_bin",
    "power_ge80",
    "sign_agreement",
    "sym_post_mean",
    "repl_prob",
    "future_coverage",
    "effect_repl",
    "prob_nonsig",
    "omega",
)

WeightFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RatioFunctional:
    """An estimand as numerator/denominator weight functions over ``u >= 0``."""

    id: str
    numerator: WeightFn
    denominator: WeightFn
    z: float | None = None
    description: str = ""


def _require_z(z: float | None) -> float:
    if z is None:
        raise ValueError("this estimand needs an evaluation point z >= 0")
    z = float(z)
    if z < 0:
        raise ValueError(f"evaluation point must be a nonnegative absolute z-score, got {z}")
    return z


def make_marginal_density(z: float) -> RatioFunctional:
    """Marginal density of |Z| at z for the untruncated study population."""
    z = _require_z(z)
    return RatioFunctional(
        "marginal",
        lambda u: folded_density(z, u),
        lambda u: np.ones_like(np.asarray(u, dtype=float)),
        z,
        f"marginal density of |Z| at z={z:g}",
    )


def make_normalized_marginal(z: float, region: SelectionRegion) -> RatioFunctional:
    """Marginal density at z normalized to integrate to one over the region.

    Defined for every z >= 0; outside the region it extrapolates what the
    density would be had selection not occurred.
    """
    z = _require_z(z)
    return RatioFunctional(
        "marginal_norm",
        lambda u: folded_density(z, u),
        lambda u: region.selection_prob(u),
        z,
        f"normalized marginal density at z={z:g}",
    )


POWER_EDGE_TOL = 1e-5
"""Slack on closed bin edges.  Bin boundaries are display-scale round
numbers while exact power sits just below them for the textbook inputs
(power 0.0499958 at zero signal, 0.7999950 at the nominal 80%-power
signal), so a closed edge admits values within 1e-5 below it."""


def make_power_bin(lo: float, hi: float, closed_left: bool = True) -> RatioFunctional:
    """Probability that the study's two-sided power falls in a bin.

    The left edge is closed (with the display-scale tolerance above) by
    default; pass ``closed_left=False`` for the half-open interior cells of
    a partition, which carry no tolerance so cells never double count.
    """
    lo, hi = float(lo), float(hi)
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError(f"power bin must satisfy 0 <= lo <= hi <= 1, got [{lo}, {hi}]")

    def indicator(u):
        beta = np.asarray(power_beta(u), dtype=float)
        left = beta >= lo - POWER_EDGE_TOL if closed_left else beta > lo
        return (left & (beta <= hi)).astype(float)

    return RatioFunctional(
        "power_bin",
        indicator,
        lambda u: np.ones_like(np.asarray(u, dtype=float)),
        None,
        f"P[power in [{lo:g}, {hi:g}]]",
    )


def power_partition(width: float = 0.05) -> list[tuple[float, float, bool]]:
    """Cells ``(lo, hi, closed_left)`` partitioning [0.05, 1]: the first cell
    is closed, later cells half-open on the left to avoid double counting."""
    edges = np.round(np.arange(0.05, 1.0 + 1e-9, width), 10)
    cells = []
    for i in range(len(edges) - 1):
        cells.append((float(edges[i]), float(edges[i + 1]), i == 0))
    return cells


def make_sign_agreement(z: float) -> RatioFunctional:
    """Posterior probability that the z-score and the true signal share a sign.

    Signed decomposition: numerator ``1{mu>0} phi(z; mu) + 1{mu<0} phi(-z; mu)``
    over the folded density; symmetrized the numerator collapses to
    ``1{u>0} phi(z - u)``.
    """
    z = _require_z(z)
    return RatioFunctional(
        "sign_agreement",
        lambda u: np.where(np.asarray(u) > 0, norm_pdf(z - np.asarray(u, dtype=float)), 0.0),
        lambda u: folded_density(z, u),
        z,
        f"P[sign(mu) = sign(Z) | |Z|={z:g}]",
    )


def make_symmetrized_posterior_mean(z: float) -> RatioFunctional:
    """Posterior mean under the symmetrized prior; odd in z by construction.

    Numerator ``u (phi(z - u) - phi(z + u))`` over the folded density.  The
    mean-squared-error optimal odd denoiser, and minimax among signed priors
    with the same folded law.
    """
    z = _require_z(z)

    def numerator(u):
        u = np.asarray(u, dtype=float)
        return u * (norm_pdf(z - u) - norm_pdf(z + u))

    return RatioFunctional(
        "sym_post_mean",
        numerator,
        lambda u: folded_density(z, u),
        z,
        f"symmetrized posterior mean at z={z:g}",
    )


def make_replication_prob(z: float) -> RatioFunctional:
    """Probability an exact replication is significant with the same sign.

    Symmetrized numerator ``Phi(u - 1.96) phi(z - u) + Phi(-1.96 - u) phi(z + u)``.
    """
    z = _require_z(z)

    def numerator(u):
        u = np.asarray(u, dtype=float)
        return ndtr(u - Z_CRIT) * norm_pdf(z - u) + ndtr(-Z_CRIT - u) * norm_pdf(z + u)

    return RatioFunctional(
        "repl_prob",
        numerator,
        lambda u: folded_density(z, u),
        z,
        f"P[|Z'| > 1.96, Z Z' > 0 | |Z|={z:g}]",
    )


def make_future_coverage(z: float) -> RatioFunctional:
    """Probability the replication's 95% interval contains the initial z-score.

    Signed numerator ``(Phi(z + 1.96 - mu) - Phi(z - 1.96 - mu)) phi(z; mu)``
    plus its mirror image at ``-z``; already even in mu, symmetrization is
    applied anyway for uniformity.
    """
    z = _require_z(z)

    def half(u, sign):
        zz = sign * z
        return (ndtr(zz + Z_CRIT - u) - ndtr(zz - Z_CRIT - u)) * norm_pdf(zz - u)

    def numerator(u):
        u = np.asarray(u, dtype=float)
        # symmetrized over u -> -u
        return 0.5 * (half(u, 1.0) + half(u, -1.0) + half(-u, 1.0) + half(-u, -1.0))

    return RatioFunctional(
        "future_coverage",
        numerator,
        lambda u: folded_density(z, u),
        z,
        f"P[Z in Z' +- 1.96 | |Z|={z:g}]",
    )


def make_effect_size_repl(z: float) -> RatioFunctional:
    """Probability the replication's absolute z-score exceeds the original."""
    z = _require_z(z)

    def numerator(u):
        u = np.asarray(u, dtype=float)
        tail = 1.0 - ndtr(z - u) + ndtr(-z - u)  # even in u
        return tail * folded_density(z, u)

    return RatioFunctional(
        "effect_repl",
        numerator,
        lambda u: folded_density(z, u),
        z,
        f"P[|Z'| >= |Z| | |Z|={z:g}]",
    )


def make_prob_nonsig() -> RatioFunctional:
    """Probability a study in the full population is non-significant,
    ``P[|Z| < 1.96]``; the prior-side factor of the publication risk ratio."""

    def numerator(u):
        u = np.asarray(u, dtype=float)
        return ndtr(Z_CRIT - u) - ndtr(-Z_CRIT - u)

    return RatioFunctional(
        "prob_nonsig",
        numerator,
        lambda u: np.ones_like(np.asarray(u, dtype=float)),
        None,
        "P[|Z| < 1.96]",
    )


def make_functional(
    estimand: str,
    z: float | None = None,
    region: SelectionRegion | None = None,
    power_bin: tuple[float, float] | None = None,
) -> RatioFunctional:
    """Build a functional from its stable estimand id (the CLI contract)."""
    if estimand == "marginal":
        return make_marginal_density(z)
    if estimand == "marginal_norm":
        if region is None:
            raise ValueError("marginal_norm requires a selection region")
        return make_normalized_marginal(z, region)
    if estimand == "power_bin":
        if power_bin is None:
            raise ValueError("power_bin requires a (lo, hi) bin")
        return make_power_bin(*power_bin)
    if estimand == "power_ge80":
        return make_power_bin(0.8, 1.0)
    if estimand == "sign_agreement":
        return make_sign_agreement(z)
    if estimand == "sym_post_mean":
        return make_symmetrized_posterior_mean(z)
    if estimand == "repl_prob":
        return make_replication_prob(z)
    if estimand == "future_coverage":
        return make_future_coverage(z)
    if estimand == "effect_repl":
        return make_effect_size_repl(z)
    if estimand == "prob_nonsig":
        return make_prob_nonsig()
    raise ValueError(f"unknown estimand id {estimand!r}; expected one of {ESTIMAND_IDS}")


GLOBAL_ESTIMANDS = ("power_bin", "power_ge80", "prob_nonsig", "omega")
"""Estimands evaluated once per dataset rather than along a z grid."""


def plugin_value(prior: AtomizedPrior, functional: RatioFunctional) -> float:
    """Direct value of the functional at a known (folded, atomized) prior."""
    num = prior_integral(prior, functional.numerator)
    den = prior_integral(prior, functional.denominator)
    if den == 0.0:
        raise ZeroDivisionError(f"{functional.id} undefined at {prior.label!r}: zero denominator")
    return num / den


def evaluate_plugin(
    dictionary: PriorDictionary, pi, functional: RatioFunctional
) -> float:
    """Plug-in value at the dictionary mixture with original-space weights pi."""
    pi = np.asarray(pi, dtype=float)
    num = float(pi @ dictionary.integrals(functional.numerator))
    den = float(pi @ dictionary.integrals(functional.denominator))
    if den == 0.0:
        raise ZeroDivisionError(f"{functional.id} undefined: zero denominator")
    return num / den


@dataclass(frozen=True)
class OmegaResult:
    """Publication risk ratio pieces: two 97.5% intervals whose product is a
    95% interval for the ratio of publication probabilities."""

    omega1: tuple[float, float]
    omega2: tuple[float, float]
    omega: tuple[float, float]
    n_published: int
    p_hat: float

    def as_dict(self) -> dict:
        return {
            "omega1_lower": self.omega1[0],
            "omega1_upper": self.omega1[1],
            "omega2_lower": self.omega2[0],
            "omega2_upper": self.omega2[1],
            "omega_lower": self.omega[0],
            "omega_upper": self.omega[1],
            "n_published": self.n_published,
            "p_hat": self.p_hat,
        }


def omega1_wald(n_sig: int, n_published: int, level: float = 0.975) -> tuple[float, float]:
    """Wald interval for the significant/non-significant publication odds.

    Builds the Wald interval for ``p = P[|Z| >= 1.96 | published]`` at the
    given level and pushes it through the increasing map ``p -> p/(1-p)``.
    The lower bound is clamped at zero.

    Raises:
        ValueError: if the observed proportion is degenerate (0 or 1).
    """
    if not (0 < n_sig < n_published):
        raise ValueError(
            f"degenerate proportion: n_sig={n_sig}, n_published={n_published}"
        )
    if not (0.5 < level < 1.0):
        raise ValueError(f"confidence level must be in (0.5, 1), got {level}")
    p = n_sig / n_published
    zq = float(ndtri(1.0 - (1.0 - level) / 2.0))
    half = zq * math.sqrt(p * (1.0 - p) / n_published)
    lo = max(0.0, p - half)
    hi = min(p + half, 1.0 - 1e-15)
    return (lo / (1.0 - lo), hi / (1.0 - hi))


def combine_omega(
    omega1_iv: tuple[float, float],
    omega2_iv: tuple[float, float],
    n_published: int = 0,
    p_hat: float = float("nan"),
) -> OmegaResult:
    """Combine the two 97.5% intervals into the 95% product interval."""
    if min(omega1_iv) < 0 or min(omega2_iv) < 0:
        raise ValueError("omega factors must have nonnegative bounds")
    omega = (omega1_iv[0] * omega2_iv[0], omega1_iv[1] * omega2_iv[1])
    return OmegaResult(tuple(omega1_iv), tuple(omega2_iv), omega, n_published, p_hat)
