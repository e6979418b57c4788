"""Tilting between the two truncation mechanisms.

Two sampling schemes produce truncated absolute z-scores: draw effects once
and keep only those with ``|Z|`` in the region (end truncation, model A),
or draw each unit from the likelihood already truncated to the region
(per-unit truncation, model B).  Reweighting a prior by the per-atom
selection probability makes the two observationally equivalent: the model-A
marginal under ``G`` equals the model-B marginal under the tilted ``G``.

This module implements the prior-level tilt and its inverse, the induced
mapping between mixture weights over a dictionary and over its tilted
counterpart, both marginal densities, and evaluation of tilted ratio
functionals.  Because tilted-space evaluation of a ratio functional equals
the original functional at the untilted prior, all downstream optimization
can live in the tilted space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .kernel import SelectionRegion, folded_density
from .priors import AtomizedPrior, PriorDictionary

__all__ = [
    "TiltedPrior",
    "MixtureWeights",
    "DegeneratePriorError",
    "UntiltError",
    "tilt_prior",
    "untilt_prior",
    "map_weights",
    "marginal_end_truncation",
    "marginal_per_unit",
    "tilted_functional",
    "tilted_functional_prior",
]


class DegeneratePriorError(ValueError):
    """The prior places no mass where selection is possible."""


class UntiltError(ValueError):
    """A positively weighted atom has zero selection probability, so the
    tilt cannot be inverted."""


def _atom_sel_probs(g: AtomizedPrior, region: SelectionRegion) -> np.ndarray:
    if g.atom_sel_prob is not None:
        return g.atom_sel_prob
    return np.asarray(region.selection_prob(g.u), dtype=float)


@dataclass(frozen=True)
class TiltedPrior:
    """A prior reweighted atomwise by selection probability.

    ``w_tilted[k]`` is proportional to ``w[k] * P[|Z| in S | u_k]`` and the
    weights sum to one.
    """

    base: AtomizedPrior
    w_tilted: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.w_tilted, dtype=float)
        if w.shape != self.base.u.shape:
            raise ValueError("tilted weights must align with the base atoms")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError("tilted weights must sum to 1 within 1e-12")
        w = np.ascontiguousarray(w)
        w.setflags(write=False)
        object.__setattr__(self, "w_tilted", w)

    @property
    def u(self) -> np.ndarray:
        return self.base.u

    def as_prior(self, label: str | None = None) -> AtomizedPrior:
        return AtomizedPrior(
            self.base.u, self.w_tilted, label or f"tilt({self.base.label})", self.base.atom_sel_prob
        )


def tilt_prior(g: AtomizedPrior, region: SelectionRegion) -> TiltedPrior:
    """Reweight atoms by their selection probability and renormalize.

    Raises:
        DegeneratePriorError: if the total selection mass is zero.
    """
    sel = _atom_sel_probs(g, region)
    raw = g.w * sel
    total = float(raw.sum())
    if total <= 0.0:
        raise DegeneratePriorError(
            f"prior {g.label!r} has zero selection mass on region {region.describe()}"
        )
    base = g if g.atom_sel_prob is not None else g.with_region(region)
    return TiltedPrior(base, raw / total)


def untilt_prior(tg: TiltedPrior, region: SelectionRegion) -> AtomizedPrior:
    """Invert :func:`tilt_prior`: reweight by inverse selection probability.

    Raises:
        UntiltError: if some atom has positive tilted weight but zero
            selection probability.
    """
    sel = _atom_sel_probs(tg.base, region)
    w = np.asarray(tg.w_tilted, dtype=float)
    bad = (w > 0) & (sel <= 0.0)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise UntiltError(f"atom u={float(tg.base.u[k])!r} has positive weight but zero selection probability")
    raw = np.where(w > 0, w / np.where(sel > 0, sel, 1.0), 0.0)
    return AtomizedPrior(tg.base.u, raw / raw.sum(), f"untilt({tg.base.label})", tg.base.atom_sel_prob)


@dataclass(frozen=True)
class MixtureWeights:
    """Simplex weights over a dictionary, tagged by which space they live in."""

    pi: np.ndarray
    space: str = "original"  # "original" | "tilted"

    def __post_init__(self) -> None:
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        if np.any(pi < 0):
            raise ValueError("mixture weights must be nonnegative")
        if abs(float(pi.sum()) - 1.0) > 1e-10:
            raise ValueError("mixture weights must sum to 1 within 1e-10")
        if self.space not in ("original", "tilted"):
            raise ValueError(f"unknown weight space {self.space!r}")
        pi = np.ascontiguousarray(pi)
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)


def map_weights(
    weights: MixtureWeights, dictionary: PriorDictionary, to: str
) -> MixtureWeights:
    """Convert mixture weights between the original and tilted spaces.

    Tilting multiplies each weight by the element's selection probability
    (then renormalizes); untilting divides.  The two directions are exact
    mutual inverses.
    """
    if to not in ("original", "tilted"):
        raise ValueError(f"unknown target space {to!r}")
    if weights.space == to:
        return weights
    if weights.pi.size != dictionary.size:
        raise ValueError("weight vector does not match dictionary size")
    sel = dictionary.sel_probs
    if to == "tilted":
        raw = weights.pi * sel
    else:
        bad = (weights.pi > 0) & (sel <= 0.0)
        if np.any(bad):
            raise UntiltError("positively weighted element has zero selection probability")
        raw = np.where(weights.pi > 0, weights.pi / np.where(sel > 0, sel, 1.0), 0.0)
    total = float(raw.sum())
    if total <= 0.0:
        raise DegeneratePriorError("mixture has zero selection mass")
    return MixtureWeights(raw / total, to)


def marginal_end_truncation(g: AtomizedPrior, z, region: SelectionRegion):
    """Model-A marginal density of the observed |Z| at z under prior g.

    ``sum_k w_k fold(z; u_k) / sum_k w_k P[S | u_k]`` inside the region,
    zero outside.
    """
    sel = _atom_sel_probs(g, region)
    denom = float(g.w @ sel)
    if denom <= 0.0:
        raise DegeneratePriorError(f"prior {g.label!r} has zero selection mass")
    z = np.asarray(z, dtype=float)
    dens = folded_density(z[..., None], g.u) @ g.w / denom
    dens = np.where(region.contains(z), dens, 0.0)
    return dens if dens.ndim else float(dens)


def marginal_per_unit(tg: TiltedPrior, z, region: SelectionRegion):
    """Model-B marginal density at z: mixture of per-atom truncated densities."""
    sel = _atom_sel_probs(tg.base, region)
    if np.any((tg.w_tilted > 0) & (sel <= 0)):
        raise DegeneratePriorError("tilted prior weights atoms with zero selection probability")
    coef = np.where(tg.w_tilted > 0, tg.w_tilted / np.where(sel > 0, sel, 1.0), 0.0)
    z = np.asarray(z, dtype=float)
    dens = folded_density(z[..., None], tg.base.u) @ coef
    dens = np.where(region.contains(z), dens, 0.0)
    return dens if dens.ndim else float(dens)


def tilted_functional(
    dictionary: PriorDictionary,
    pi_tilted: Sequence[float] | MixtureWeights,
    nu: Callable[[np.ndarray], np.ndarray],
    delta: Callable[[np.ndarray], np.ndarray],
) -> float:
    """Tilted ratio functional of a tilted-space dictionary mixture.

    Uses the identity that the tilted functional of the tilted element
    equals the raw integral divided by the element's selection probability,
    so the value is ``sum_j pi_j I_nu(j) / sum_j pi_j I_delta(j)`` with
    ``I_psi(j) = integral(G_j, psi) / P_j``.  This equals the original
    functional at the corresponding untilted mixture.
    """
    if isinstance(pi_tilted, MixtureWeights):
        if pi_tilted.space != "tilted":
            raise ValueError("weights must live in the tilted space")
        pi = pi_tilted.pi
    else:
        pi = np.asarray(pi_tilted, dtype=float)
    sel = dictionary.sel_probs
    num = float(pi @ (dictionary.integrals(nu) / sel))
    den = float(pi @ (dictionary.integrals(delta) / sel))
    if den == 0.0:
        raise ZeroDivisionError("tilted functional undefined: zero denominator")
    return num / den


def tilted_functional_prior(
    tg: TiltedPrior,
    nu: Callable[[np.ndarray], np.ndarray],
    delta: Callable[[np.ndarray], np.ndarray],
    region: SelectionRegion,
) -> float:
    """Tilted ratio functional of a single tilted prior (atom-level form)."""
    sel = _atom_sel_probs(tg.base, region)
    coef = np.where(tg.w_tilted > 0, tg.w_tilted / np.where(sel > 0, sel, 1.0), 0.0)
    num = float(coef @ np.asarray(nu(tg.base.u), dtype=float))
    den = float(coef @ np.asarray(delta(tg.base.u), dtype=float))
    if den == 0.0:
        raise ZeroDivisionError("tilted functional undefined: zero denominator")
    return num / den
