"""Simulation harness: generation, EM comparator, coverage bookkeeping.

Full-scale coverage experiments live in the acceptance suite; here the
mechanics run at small scale with fixed seeds.
"""

import json

import numpy as np
import pytest
from scipy.stats import halfnorm, ks_2samp, kstest

from zselect.floc import InsufficientDataError
from zselect.kernel import SelectionRegion
from zselect.priors import build_dictionary
from zselect.sim import (
    SimConfig,
    bootstrap_band,
    bootstrap_ci,
    coverage_to_csv,
    coverage_to_json,
    em_npmle_fit,
    generate,
    mc_coverage,
    replicate_rng,
)
from zselect.estimands import make_functional
from zselect.tilting import MixtureWeights, map_weights

ZC_REGION = SelectionRegion.interval(1.96, 6.0)


def small_config(**overrides):
    base = dict(
        seed=314,
        n_all=3000,
        n_reps=3,
        methods=("floc",),
        estimands=("marginal_norm",),
        z_grid=(0.0, 2.5, 5.0),
        grid_size=200,
        bootstrap_reps=40,
        em_max_iter=800,
    )
    base.update(overrides)
    return SimConfig(**base)


class TestGenerate:
    def test_halfnormal_under_null(self):
        cfg = small_config(
            true_prior_u=(0.0,), true_prior_w=(1.0,),
            region_lower=0.0, region_upper=None,
            pub_lower=0.0, pub_upper=None, pub_prob_in=1.0, pub_prob_out=1.0,
            n_all=100000,
        )
        batch = generate(cfg, replicate_rng(cfg.seed, 0))
        assert batch.published.all()
        stat = kstest(batch.absz, halfnorm.cdf)
        assert stat.pvalue > 0.01

    def test_publication_rule_restricts_support(self):
        cfg = small_config(pub_prob_out=0.0)
        batch = generate(cfg, replicate_rng(cfg.seed, 1))
        observed = batch.absz[batch.published]
        assert observed.size > 0
        assert np.all((observed >= 1.96) & (observed <= 6.0))

    def test_two_level_rule(self):
        cfg = small_config(pub_prob_in=1.0, pub_prob_out=0.2, n_all=50000)
        batch = generate(cfg, replicate_rng(cfg.seed, 2))
        outside = ~cfg.pub_region.contains(batch.absz)
        rate_out = batch.published[outside].mean()
        assert rate_out == pytest.approx(0.2, abs=0.02)

    def test_deterministic_given_seed(self):
        cfg = small_config()
        a = generate(cfg, replicate_rng(cfg.seed, 5))
        b = generate(cfg, replicate_rng(cfg.seed, 5))
        assert a.absz.tobytes() == b.absz.tobytes()
        assert np.array_equal(a.published, b.published)

    def test_observed_matches_direct_end_truncation_sampling(self):
        # selected draws under the two-level rule match direct sampling
        # from the truncated population (two-sample KS at the 1% level)
        cfg = small_config(n_all=100000, pub_prob_in=0.6, pub_prob_out=0.0)
        batch = generate(cfg, replicate_rng(cfg.seed, 3))
        observed = batch.observed(cfg.region)

        rng = replicate_rng(999, 0)
        prior = cfg.true_prior
        idx = rng.choice(prior.u.size, size=400000, p=prior.w)
        raw = np.abs(prior.u[idx] + rng.standard_normal(400000))
        direct = raw[cfg.region.contains(raw)]
        stat = ks_2samp(observed, direct)
        assert stat.pvalue > 0.01


class TestEmFit:
    def test_zero_iterations_returns_uniform(self):
        vals = np.array([2.0, 2.5, 3.0])
        fit = em_npmle_fit(vals, np.arange(7.0), ZC_REGION, max_iter=0)
        assert np.allclose(fit.weights, 1 / 7)
        assert fit.n_iter == 0

    def test_consistency_point_mass(self):
        rng = replicate_rng(5, 0)
        raw = np.abs(3.0 + rng.standard_normal(20000))
        vals = raw[(raw >= 1.96) & (raw <= 6.0)][:5000]
        fit = em_npmle_fit(vals, np.arange(7.0), ZC_REGION)
        d = build_dictionary("zcurve", ZC_REGION)
        orig = map_weights(MixtureWeights(fit.weights, "tilted"), d, "original")
        assert orig.pi[3] >= 0.95

    def test_loglik_monotone(self):
        rng = replicate_rng(8, 0)
        raw = np.abs(rng.choice([1.0, 3.0], 20000) + rng.standard_normal(20000))
        vals = raw[(raw >= 1.96) & (raw <= 6.0)][:3000]
        fit = em_npmle_fit(vals, np.arange(7.0), ZC_REGION, max_iter=400)
        diffs = np.diff(fit.loglik_trace)
        assert np.all(diffs >= -1e-9 * np.abs(fit.loglik_trace[:-1]))

    def test_empty_sample_rejected(self):
        with pytest.raises(InsufficientDataError):
            em_npmle_fit(np.array([]), np.arange(7.0), ZC_REGION)


class TestBootstrap:
    def test_smoke_two_resamples(self):
        rng = replicate_rng(21, 0)
        raw = np.abs(2.0 + rng.standard_normal(8000))
        vals = raw[(raw >= 1.96) & (raw <= 6.0)][:1500]
        f = make_functional("marginal_norm", z=2.5, region=ZC_REGION)
        lo, hi = bootstrap_ci(vals, f, np.arange(7.0), ZC_REGION, n_boot=2, rng=rng)
        assert lo <= hi

    def test_zero_variance_sample_degenerate(self):
        vals = np.full(200, 2.5)
        f = make_functional("marginal_norm", z=2.5, region=ZC_REGION)
        lo, hi = bootstrap_ci(vals, f, np.arange(7.0), ZC_REGION, n_boot=50,
                              rng=replicate_rng(3, 0))
        assert hi - lo < 1e-10

    def test_needs_two_resamples(self):
        with pytest.raises(ValueError):
            bootstrap_ci(np.array([2.0, 2.5]), make_functional("prob_nonsig"),
                         np.arange(7.0), ZC_REGION, n_boot=1)

    def test_band_shares_refits(self):
        rng = replicate_rng(22, 0)
        raw = np.abs(2.0 + rng.standard_normal(8000))
        vals = raw[(raw >= 1.96) & (raw <= 6.0)][:1200]
        fns = [make_functional("marginal_norm", z=z, region=ZC_REGION) for z in (0.0, 3.0)]
        ivs = bootstrap_band(vals, fns, np.arange(7.0), ZC_REGION, n_boot=30,
                             rng=rng, max_iter=500)
        assert len(ivs) == 2
        for lo, hi in ivs:
            assert lo <= hi


class TestMcCoverage:
    def test_single_replicate_binary_coverage(self):
        cfg = small_config(n_reps=1)
        rows = mc_coverage(cfg)
        for r in rows:
            assert r.coverage in (0.0, 1.0)
            assert r.n_effective + r.n_failed == 1

    def test_truth_in_singleton_dictionary_always_covered(self):
        # a one-atom truth inside the dictionary: the band always contains it
        cfg = small_config(
            true_prior_u=(3.0,), true_prior_w=(1.0,), n_reps=4, n_all=4000,
        )
        rows = mc_coverage(cfg)
        for r in rows:
            assert r.coverage == 1.0

    def test_rows_cover_grid_and_methods(self):
        cfg = small_config(n_reps=2, methods=("floc",), estimands=("marginal_norm", "prob_nonsig"))
        rows = mc_coverage(cfg)
        keys = {(r.estimand, r.z, r.method) for r in rows}
        assert ("marginal_norm", 0.0, "floc") in keys
        assert ("prob_nonsig", None, "floc") in keys
        assert len(rows) == 4

    def test_cache_round_trip(self, tmp_path):
        cfg = small_config(n_reps=2)
        rows1 = mc_coverage(cfg, cache_dir=tmp_path)
        assert len(list(tmp_path.glob("coverage_*.json"))) == 1
        rows2 = mc_coverage(cfg, cache_dir=tmp_path)
        assert [r.__dict__ for r in rows1] == [r.__dict__ for r in rows2]

    def test_writers(self, tmp_path):
        cfg = small_config(n_reps=1)
        rows = mc_coverage(cfg)
        coverage_to_csv(rows, tmp_path / "cov.csv")
        coverage_to_json(rows, cfg, tmp_path / "cov.json")
        lines = (tmp_path / "cov.csv").read_text().splitlines()
        assert lines[0] == "estimand,z,coverage,mean_lower,mean_upper,method"
        payload = json.loads((tmp_path / "cov.json").read_text())
        assert payload["config"]["seed"] == cfg.seed
        assert len(payload["rows"]) == len(rows)


class TestSimConfig:
    def test_json_round_trip(self, tmp_path):
        cfg = small_config()
        path = tmp_path / "config.json"
        with open(path, "w") as fh:
            json.dump(cfg.to_dict() | {
                "true_prior": {"u": list(cfg.true_prior_u), "w": list(cfg.true_prior_w)},
                "region": {"lower": cfg.region_lower, "upper": cfg.region_upper},
                "pub_region": {"lower": cfg.pub_lower, "upper": cfg.pub_upper},
            }, fh)
        loaded = SimConfig.from_json(path)
        assert loaded.seed == cfg.seed
        assert loaded.z_grid == cfg.z_grid
        assert loaded.region.intervals == cfg.region.intervals

    def test_schema_validation(self):
        with pytest.raises(ValueError):
            SimConfig(seed=1, n_all=0)
        with pytest.raises(ValueError):
            SimConfig(seed=1, methods=("floc", "magic"))
        with pytest.raises(ValueError):
            SimConfig.from_dict({})

    def test_z_grid_spec(self):
        cfg = SimConfig.from_dict({"seed": 2, "z_grid": {"start": 0, "stop": 6, "num": 13}})
        assert len(cfg.z_grid) == 13
        assert cfg.z_grid[1] == pytest.approx(0.5)


class TestReplicateRng:
    def test_streams_differ_and_reproduce(self):
        a1 = replicate_rng(77, 1).standard_normal(5)
        a2 = replicate_rng(77, 1).standard_normal(5)
        b = replicate_rng(77, 2).standard_normal(5)
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, b)
