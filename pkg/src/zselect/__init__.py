"""Confidence intervals for empirical-Bayes estimands from selectively
reported z-scores.

The pipeline: ingest confidence intervals into absolute z-scores, truncate
to the selection region, localize the truncated marginal CDF in a
distribution-free band, and bound any ratio functional of the signal prior
by linear programming over a tilted prior dictionary.  A zero-truncated
Poisson variant and a Monte-Carlo coverage harness round out the package.
"""

__version__ = "0.1.0"

from .kernel import SelectionRegion, folded_density, fold_interval_prob, power_beta, selection_prob
from .priors import AtomizedPrior, PriorClassSpec, PriorDictionary, atomize, build_dictionary, point_mass, prior_integral
from .tilting import MixtureWeights, TiltedPrior, map_weights, tilt_prior, untilt_prior
from .estimands import RatioFunctional, evaluate_plugin, make_functional, plugin_value
from .floc import FLocProblem, IntervalResult, TruncatedSample, dkw_radius, floc_band, solve_bounds

__all__ = [
    "__version__",
    "SelectionRegion",
    "folded_density",
    "fold_interval_prob",
    "power_beta",
    "selection_prob",
    "AtomizedPrior",
    "PriorClassSpec",
    "PriorDictionary",
    "atomize",
    "build_dictionary",
    "point_mass",
    "prior_integral",
    "MixtureWeights",
    "TiltedPrior",
    "map_weights",
    "tilt_prior",
    "untilt_prior",
    "RatioFunctional",
    "evaluate_plugin",
    "make_functional",
    "plugin_value",
    "FLocProblem",
    "IntervalResult",
    "TruncatedSample",
    "dkw_radius",
    "floc_band",
    "solve_bounds",
]
