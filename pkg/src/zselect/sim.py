"""Monte-Carlo harness: publication-biased data, coverage, EM comparator.

Replicates draw latent triplets (signal, absolute z-score, publication
indicator), keep the published values inside the analysis region, and build
localization intervals for the configured estimands.  A comparator in the
style of significance-curve fitting is included: an EM fit of mixture
weights over a small integer support to the truncated folded sample,
wrapped in a nonparametric bootstrap.  The EM operates in the per-unit
(tilted) space; weights are untilted before estimands are evaluated.

Reproducibility: every config carries an explicit seed for a counter-based
generator; replicate r uses ``seed XOR r`` so replicates are independent
streams and insensitive to scheduling order.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .estimands import GLOBAL_ESTIMANDS, RatioFunctional, make_functional, plugin_value
from .floc import (
    EmptyLocalizationError,
    FLocProblem,
    InsufficientDataError,
    TruncatedSample,
    functional_columns,
    solve_bounds,
)
from .kernel import SelectionRegion, folded_density
from .priors import AtomizedPrior, PriorDictionary, build_dictionary

__all__ = [
    "SimConfig",
    "TripletBatch",
    "EmFit",
    "CoverageRow",
    "replicate_rng",
    "generate",
    "em_npmle_fit",
    "bootstrap_band",
    "bootstrap_ci",
    "mc_coverage",
    "coverage_to_csv",
    "coverage_to_json",
]


@dataclass
class SimConfig:
    """Declarative simulation configuration (JSON-serializable).

    Schema (all keys optional unless noted):

    * ``seed`` (int, required), ``n_all`` (int), ``n_reps`` (int),
      ``alpha`` (float)
    * ``true_prior``: ``{"u": [...], "w": [...]}`` atoms of the data prior
    * ``region``: ``{"lower": a, "upper": b|null}`` analysis truncation
    * ``pub_region`` + ``pub_prob_in`` + ``pub_prob_out``: the publication
      rule pi(|z|) = out + (in - out) * 1(|z| in pub_region)
    * ``prior_class``: dictionary for the localization method
    * ``estimands``: list of estimand ids; ``z_grid``:
      ``{"start": a, "stop": b, "num": n}`` or explicit list
    * ``methods``: subset of ["floc", "zcurve_em"]
    * ``bootstrap_reps``, ``em_support``, ``em_tol``, ``em_max_iter``,
      ``grid_size``, ``workers``
    """

    seed: int
    true_prior_u: tuple = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    true_prior_w: tuple = (0.35, 0.25, 0.15, 0.10, 0.08, 0.05, 0.02)
    region_lower: float = 1.96
    region_upper: float | None = 6.0
    pub_lower: float = 1.96
    pub_upper: float | None = 6.0
    pub_prob_in: float = 1.0
    pub_prob_out: float = 0.0
    n_all: int = 10000
    n_reps: int = 200
    alpha: float = 0.05
    prior_class: str = "zcurve"
    estimands: tuple = ("marginal_norm",)
    z_grid: tuple = tuple(np.linspace(0.0, 6.0, 13))
    methods: tuple = ("floc",)
    bootstrap_reps: int = 500
    em_support: tuple = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    em_tol: float = 1e-8
    em_max_iter: int = 10000
    grid_size: int = 1000
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n_all < 1 or self.n_reps < 1:
            raise ValueError("n_all and n_reps must be positive")
        if not (0.0 < self.pub_prob_in <= 1.0) or not (0.0 <= self.pub_prob_out <= 1.0):
            raise ValueError("publication probabilities must lie in (0, 1] / [0, 1]")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        unknown = set(self.methods) - {"floc", "zcurve_em"}
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")

    @property
    def region(self) -> SelectionRegion:
        upper = math.inf if self.region_upper is None else self.region_upper
        return SelectionRegion(((self.region_lower, upper),))

    @property
    def pub_region(self) -> SelectionRegion:
        upper = math.inf if self.pub_upper is None else self.pub_upper
        return SelectionRegion(((self.pub_lower, upper),))

    @property
    def true_prior(self) -> AtomizedPrior:
        return AtomizedPrior(np.array(self.true_prior_u), np.array(self.true_prior_w), "true_prior")

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        if "seed" not in raw:
            raise ValueError("simulation config requires an explicit seed")
        kwargs: dict = {"seed": int(raw["seed"])}
        if "true_prior" in raw:
            kwargs["true_prior_u"] = tuple(float(v) for v in raw["true_prior"]["u"])
            kwargs["true_prior_w"] = tuple(float(v) for v in raw["true_prior"]["w"])
        if "region" in raw:
            kwargs["region_lower"] = float(raw["region"]["lower"])
            up = raw["region"].get("upper")
            kwargs["region_upper"] = None if up is None else float(up)
        if "pub_region" in raw:
            kwargs["pub_lower"] = float(raw["pub_region"]["lower"])
            up = raw["pub_region"].get("upper")
            kwargs["pub_upper"] = None if up is None else float(up)
        for key in (
            "pub_prob_in",
            "pub_prob_out",
            "n_all",
            "n_reps",
            "alpha",
            "prior_class",
            "bootstrap_reps",
            "em_tol",
            "em_max_iter",
            "grid_size",
            "workers",
        ):
            if key in raw:
                kwargs[key] = raw[key]
        if "estimands" in raw:
            kwargs["estimands"] = tuple(raw["estimands"])
        if "methods" in raw:
            kwargs["methods"] = tuple(raw["methods"])
        if "em_support" in raw:
            kwargs["em_support"] = tuple(float(v) for v in raw["em_support"])
        if "z_grid" in raw:
            zg = raw["z_grid"]
            if isinstance(zg, dict):
                kwargs["z_grid"] = tuple(np.linspace(zg["start"], zg["stop"], int(zg["num"])))
            else:
                kwargs["z_grid"] = tuple(float(v) for v in zg)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("true_prior_u", "true_prior_w", "estimands", "z_grid", "methods", "em_support"):
            d[key] = list(d[key])
        return d


def replicate_rng(seed: int, rep: int = 0) -> np.random.Generator:
    """Counter-based generator for one replicate: Philox keyed by seed XOR rep."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ np.uint64(rep)))


@dataclass(frozen=True)
class TripletBatch:
    """Latent draws of one replicate: signal, absolute z-score, publication flag."""

    mu: np.ndarray
    absz: np.ndarray
    published: np.ndarray

    def observed(self, region: SelectionRegion) -> np.ndarray:
        keep = self.published & region.contains(self.absz)
        return np.sort(self.absz[keep])


def generate(config: SimConfig, rng: np.random.Generator) -> TripletBatch:
    """Draw n_all triplets from the publication-bias model.

    The publication rule is a two-level step: probability ``pub_prob_in``
    inside the publication region, ``pub_prob_out`` outside.  When the rule
    is constant on the analysis region, selection leaves the truncated
    distribution undistorted.
    """
    prior = config.true_prior
    idx = rng.choice(prior.n_atoms, size=config.n_all, p=prior.w)
    mu = prior.u[idx]
    absz = np.abs(mu + rng.standard_normal(config.n_all))
    prob = np.where(config.pub_region.contains(absz), config.pub_prob_in, config.pub_prob_out)
    published = rng.random(config.n_all) < prob
    return TripletBatch(mu, absz, published)


@dataclass(frozen=True)
class EmFit:
    """EM output: tilted-space mixture weights over the support atoms."""

    weights: np.ndarray
    support: np.ndarray
    loglik_trace: np.ndarray
    n_iter: int
    converged: bool


def _truncated_density_matrix(values: np.ndarray, support: np.ndarray, region: SelectionRegion) -> np.ndarray:
    """(n, K) matrix of per-unit truncated folded densities p(z | u_j)."""
    sel = region.selection_prob(support)
    return folded_density(values[:, None], support[None, :]) / sel[None, :]


def _em_batched(
    dens: np.ndarray,
    obs_weights: np.ndarray,
    tol: float,
    max_iter: int,
    init: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Run EM for B weighted copies of the sample simultaneously.

    ``dens`` is (n, K); ``obs_weights`` is (B, n) with row sums n_b.  The
    update is multiplicative, so all bootstrap fits share the two matrix
    products per iteration; buffers are preallocated because this loop
    dominates the comparator's runtime.  Returns (weights (B, K),
    iterations used per row).
    """
    n, k = dens.shape
    b = obs_weights.shape[0]
    wt = np.full((k, b), 1.0 / k) if init is None else np.tile(init[:, None], (1, b))
    counts_t = np.ascontiguousarray(obs_weights.T)  # (n, B)
    totals = obs_weights.sum(axis=1)  # (B,)
    mix = np.empty((n, b))
    ratio = np.empty((n, b))
    update = np.empty((k, b))
    new_wt = np.empty((k, b))
    iters = np.zeros(b, dtype=int)
    active = np.ones(b, dtype=bool)
    for it in range(max_iter):
        np.matmul(dens, wt, out=mix)
        np.divide(counts_t, mix, out=ratio)
        np.matmul(dens.T, ratio, out=update)
        np.multiply(wt, update, out=new_wt)
        new_wt /= totals
        delta = np.max(np.abs(new_wt - wt), axis=0)
        wt, new_wt = new_wt, wt
        iters[active] = it + 1
        active = delta >= tol
        if not active.any():
            break
    return np.ascontiguousarray(wt.T), iters


def em_npmle_fit(
    values: np.ndarray,
    support,
    region: SelectionRegion,
    tol: float = 1e-8,
    max_iter: int = 10000,
    init=None,
    obs_weights: np.ndarray | None = None,
) -> EmFit:
    """Mixture weights over the support maximizing the truncated likelihood.

    Standard multinomial-mixture EM on the per-unit truncated folded
    densities; uniform initialization; converged when the largest weight
    change drops below tol.  The fitted weights live in the tilted space
    (the per-unit model is what the truncated sample follows); untilt them
    to recover end-truncation weights before evaluating estimands.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InsufficientDataError("EM requires a nonempty truncated sample")
    support = np.asarray(support, dtype=float)
    if not np.all(region.contains(values)):
        raise ValueError("sample values must lie inside the region")
    dens = _truncated_density_matrix(values, support, region)
    if obs_weights is None:
        obs_weights = np.ones((1, values.size))
    init_arr = None if init is None else np.asarray(init, dtype=float)

    k = support.size
    w = np.full(k, 1.0 / k) if init_arr is None else init_arr.copy()
    trace = [float(obs_weights[0] @ np.log(dens @ w))]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mix = dens @ w  # (n,)
        new_w = w * ((obs_weights[0] / mix) @ dens) / obs_weights[0].sum()
        delta = float(np.max(np.abs(new_w - w)))
        w = new_w
        trace.append(float(obs_weights[0] @ np.log(dens @ w)))
        if delta < tol:
            converged = True
            break
    return EmFit(w, support, np.asarray(trace), it, converged)


def _evaluate_weight_rows(
    weights: np.ndarray,
    support: np.ndarray,
    region: SelectionRegion,
    functional: RatioFunctional,
) -> np.ndarray:
    """Plug-in functional values for each row of original-space weights."""
    numer = np.asarray(functional.numerator(support), dtype=float)
    denom = np.asarray(functional.denominator(support), dtype=float)
    return (weights @ numer) / (weights @ denom)


def bootstrap_band(
    values: np.ndarray,
    functionals: list[RatioFunctional],
    support,
    region: SelectionRegion,
    n_boot: int = 500,
    alpha: float = 0.05,
    rng: np.random.Generator | None = None,
    tol: float = 1e-8,
    max_iter: int = 10000,
) -> list[tuple[float, float]]:
    """Percentile intervals from EM refits of nonparametric resamples.

    Each bootstrap draw is a multinomial reweighting of the original
    sample, refit by EM in the tilted space, untilted, and evaluated at
    every functional.  All refits run batched.
    """
    if n_boot < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    values = np.asarray(values, dtype=float)
    support = np.asarray(support, dtype=float)
    rng = rng or np.random.default_rng(0)
    dens = _truncated_density_matrix(values, support, region)
    counts = rng.multinomial(values.size, np.full(values.size, 1.0 / values.size), size=n_boot)
    tilted, _ = _em_batched(dens, counts.astype(float), tol, max_iter)
    sel = region.selection_prob(support)
    original = tilted / sel[None, :]
    original /= original.sum(axis=1, keepdims=True)
    out = []
    for functional in functionals:
        vals = _evaluate_weight_rows(original, support, region, functional)
        lo, hi = np.percentile(vals, [100 * alpha / 2.0, 100 * (1 - alpha / 2.0)])
        out.append((float(lo), float(hi)))
    return out


def bootstrap_ci(
    values: np.ndarray,
    functional: RatioFunctional,
    support,
    region: SelectionRegion,
    n_boot: int = 500,
    alpha: float = 0.05,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Single-functional convenience wrapper around :func:`bootstrap_band`."""
    return bootstrap_band(values, [functional], support, region, n_boot, alpha, rng)[0]


@dataclass
class CoverageRow:
    estimand: str
    z: float | None
    method: str
    coverage: float
    mean_lower: float
    mean_upper: float
    truth: float
    n_effective: int
    n_failed: int


def _functional_list(config: SimConfig) -> list[tuple[str, float | None, RatioFunctional]]:
    out = []
    for est in config.estimands:
        if est in GLOBAL_ESTIMANDS:
            out.append((est, None, make_functional(est, region=config.region)))
        else:
            for z in config.z_grid:
                out.append((est, float(z), make_functional(est, z=float(z), region=config.region)))
    return out


def _run_replicate(config: SimConfig, dictionary: PriorDictionary, rep: int) -> dict:
    rng = replicate_rng(config.seed, rep)
    batch = generate(config, rng)
    observed = batch.observed(config.region)
    if observed.size < 2:
        return {"failed": True}
    sample = TruncatedSample(observed, config.region)
    specs = _functional_list(config)
    rows: dict[tuple, tuple[float, float] | None] = {}

    if "floc" in config.methods:
        problem = FLocProblem.from_sample(dictionary, sample, config.alpha, config.grid_size)
        for est, z, functional in specs:
            numer, denom = functional_columns(dictionary, functional)
            try:
                res = solve_bounds(problem, numer, denom, est, z)
                rows[(est, z, "floc")] = (res.lower, res.upper)
            except EmptyLocalizationError:
                rows[(est, z, "floc")] = None

    if "zcurve_em" in config.methods:
        intervals = bootstrap_band(
            observed,
            [f for _, _, f in specs],
            config.em_support,
            config.region,
            config.bootstrap_reps,
            config.alpha,
            rng,
            config.em_tol,
            config.em_max_iter,
        )
        for (est, z, _), iv in zip(specs, intervals):
            rows[(est, z, "zcurve_em")] = iv
    return {"failed": False, "rows": rows}


def _coverage_cache_path(config: SimConfig, cache_dir) -> Path | None:
    root = cache_dir or os.environ.get("ZSELECT_CACHE_DIR")
    if not root:
        return None
    payload = config.to_dict()
    payload.pop("workers", None)  # parallelism does not change the results
    key = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:32]
    return Path(root) / f"coverage_{key}.json"


def _rows_to_payload(rows: list[CoverageRow]) -> list[dict]:
    return [r.__dict__ for r in rows]


def mc_coverage(config: SimConfig, progress=None, cache_dir=None) -> list[CoverageRow]:
    """Coverage rates and average interval bounds across replicates.

    Per-replicate solver failures are counted, never fatal.  Truth values
    are plug-in functionals of the configured true prior.  The run is
    deterministic given the config (counter-based per-replicate streams),
    so results are cached by config hash when a cache directory is set
    (argument or ``ZSELECT_CACHE_DIR``); delete the cache file to force
    recomputation.
    """
    cache_path = _coverage_cache_path(config, cache_dir)
    if cache_path is not None and cache_path.exists():
        with open(cache_path, encoding="utf-8") as fh:
            return [CoverageRow(**row) for row in json.load(fh)]

    dictionary = build_dictionary(config.prior_class, config.region)
    specs = _functional_list(config)
    truths = {(est, z): plugin_value(config.true_prior, f) for est, z, f in specs}

    keys = [(est, z, m) for est, z, _ in specs for m in config.methods]
    hits = {k: 0 for k in keys}
    lo_sum = {k: 0.0 for k in keys}
    hi_sum = {k: 0.0 for k in keys}
    n_eff = {k: 0 for k in keys}
    n_fail = {k: 0 for k in keys}

    def consume(result):
        if result.get("failed"):
            for k in keys:
                n_fail[k] += 1
            return
        for k in keys:
            iv = result["rows"].get(k)
            if iv is None or not np.isfinite(iv[0]) or not np.isfinite(iv[1]):
                n_fail[k] += 1
                continue
            truth = truths[(k[0], k[1])]
            slack = 1e-9 * max(1.0, abs(truth))  # LP optimality tolerance
            hits[k] += int(iv[0] - slack <= truth <= iv[1] + slack)
            lo_sum[k] += iv[0]
            hi_sum[k] += iv[1]
            n_eff[k] += 1

    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_run_replicate, config, dictionary, r) for r in range(config.n_reps)]
            for i, fut in enumerate(futures):
                consume(fut.result())
                if progress:
                    progress(i + 1, config.n_reps)
    else:
        for r in range(config.n_reps):
            consume(_run_replicate(config, dictionary, r))
            if progress:
                progress(r + 1, config.n_reps)

    out = []
    for est, z, _f in specs:
        for m in config.methods:
            k = (est, z, m)
            n = n_eff[k]
            out.append(
                CoverageRow(
                    estimand=est,
                    z=z,
                    method=m,
                    coverage=hits[k] / n if n else float("nan"),
                    mean_lower=lo_sum[k] / n if n else float("nan"),
                    mean_upper=hi_sum[k] / n if n else float("nan"),
                    truth=truths[(est, z)],
                    n_effective=n,
                    n_failed=n_fail[k],
                )
            )
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        with open(cache_path, "w", encoding="utf-8") as fh:
            json.dump(_rows_to_payload(out), fh, indent=2)
            fh.write("\n")
    return out


def coverage_to_csv(rows: list[CoverageRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("estimand,z,coverage,mean_lower,mean_upper,method\n")
        for r in rows:
            z = "" if r.z is None else repr(float(r.z))
            fh.write(f"{r.estimand},{z},{r.coverage!r},{r.mean_lower!r},{r.mean_upper!r},{r.method}\n")


def coverage_to_json(rows: list[CoverageRow], config: SimConfig, path) -> None:
    payload = {
        "config": config.to_dict(),
        "rows": [
            {
                "estimand": r.estimand,
                "z": r.z,
                "method": r.method,
                "coverage": r.coverage,
                "mean_lower": r.mean_lower,
                "mean_upper": r.mean_upper,
                "truth": r.truth,
                "n_effective": r.n_effective,
                "n_failed": r.n_failed,
            }
            for r in rows
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
