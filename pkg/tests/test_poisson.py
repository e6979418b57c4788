"""Zero-truncated Poisson variant: tilting, marginals, posterior-mean bands."""

import math

import numpy as np
import pytest
from scipy.stats import gamma as gamma_dist

from zselect.floc import InsufficientDataError
from zselect.poisson import (
    CountSample,
    capture_prob,
    log_spaced_support,
    plugin_posterior_mean,
    poisson_floc_problem,
    poisson_posterior_mean_band,
    poisson_prior,
    posterior_mean_functional,
    read_counts_csv,
    tilt_poisson,
    untilt_poisson,
    zt_marginals,
    zt_pmf,
)
from zselect.priors import AtomizedPrior


class TestTilt:
    def test_point_mass_fixed(self):
        g = poisson_prior([2.5], [1.0])
        assert tilt_poisson(g).w[0] == pytest.approx(1.0, abs=1e-15)

    def test_two_point_example(self):
        g = poisson_prior([1.0, 2.0], [0.5, 0.5])
        tg = tilt_poisson(g)
        c1, c2 = 1 - math.exp(-1), 1 - math.exp(-2)
        assert np.allclose(tg.w, [c1 / (c1 + c2), c2 / (c1 + c2)], atol=1e-12)
        assert tg.w[0] == pytest.approx(0.42232, abs=1e-5)

    def test_round_trip(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            u = np.sort(np.exp(rng.uniform(math.log(0.01), math.log(25), 12)))
            w = rng.dirichlet(np.ones(12))
            g = poisson_prior(u, w)
            back = untilt_poisson(tilt_poisson(g))
            assert np.max(np.abs(back.w - g.w)) < 1e-12

    def test_zero_mass_rejected(self):
        with pytest.raises(ValueError):
            poisson_prior([0.0, 1.0], [0.5, 0.5])


class TestMarginals:
    def test_point_mass_one(self):
        g = poisson_prior([1.0], [1.0])
        end, per = zt_marginals(g, 5)
        expected_z1 = math.exp(-1) / (1 - math.exp(-1))  # 0.5819767068693265
        assert end[0] == pytest.approx(expected_z1, abs=1e-12)
        assert per[0] == pytest.approx(expected_z1, abs=1e-12)

    def test_observational_equivalence_random(self):
        rng = np.random.default_rng(9)
        worst = 0.0
        for _ in range(30):
            u = np.sort(np.exp(rng.uniform(math.log(0.01), math.log(25), 20)))
            w = rng.dirichlet(np.ones(20))
            g = poisson_prior(u, w)
            end, _ = zt_marginals(g, 50)
            _, per_tilted = zt_marginals(tilt_poisson(g), 50)
            worst = max(worst, float(np.max(np.abs(end - per_tilted))))
        assert worst < 1e-12

    def test_normalization_with_tail(self):
        g = poisson_prior([1.0, 2.0], [0.5, 0.5])
        end, per = zt_marginals(g, 40)  # max count + generous tail
        assert end.sum() == pytest.approx(1.0, abs=1e-12)
        assert per.sum() == pytest.approx(1.0, abs=1e-12)

    def test_pmf_matches_direct_formula(self):
        for u in (0.3, 1.0, 7.0):
            for z in (1, 2, 10):
                direct = math.exp(-u) * u**z / (math.factorial(z) * (1 - math.exp(-u)))
                assert zt_pmf(u, z) == pytest.approx(direct, rel=1e-12)


class TestPosteriorMean:
    def test_point_mass(self):
        assert plugin_posterior_mean(poisson_prior([3.0], [1.0]), 2) == pytest.approx(3.0)

    def test_two_atom_example(self):
        g = poisson_prior([1.0, 2.0], [0.5, 0.5])
        e1, e2 = math.exp(-1), math.exp(-2)
        expected = (e1 + 4 * e2) / (e1 + 2 * e2)  # 1.4238831152341709
        assert plugin_posterior_mean(g, 1) == pytest.approx(expected, abs=1e-12)

    def test_gamma_conjugacy(self):
        # Gamma(shape a, rate b) prior: posterior mean (a + z) / (b + 1);
        # 512 midpoint-quantile atoms reach 1e-3 when the posterior stays
        # inside the prior bulk
        q = (np.arange(512) + 0.5) / 512
        for a, b, z in [(2.0, 1.0, 1), (2.0, 1.0, 2), (3.5, 0.7, 3), (5.0, 0.5, 7)]:
            u = gamma_dist.ppf(q, a, scale=1.0 / b)
            g = AtomizedPrior(u, np.full(512, 1 / 512))
            got = plugin_posterior_mean(g, z)
            assert got == pytest.approx((a + z) / (b + 1), abs=1e-3)

    def test_invalid_count(self):
        with pytest.raises(ValueError):
            posterior_mean_functional(0)


class TestCountSample:
    def test_validation(self):
        with pytest.raises(ValueError):
            CountSample(np.array([0, 1]))
        with pytest.raises(InsufficientDataError):
            CountSample(np.array([], dtype=int))

    def test_frequencies(self):
        s = CountSample(np.array([1, 1, 2, 5]))
        assert s.frequencies() == {1: 2, 2: 1, 5: 1}
        assert s.max_count == 5

    def test_read_csv(self, tmp_path):
        path = tmp_path / "counts.csv"
        path.write_text("count,species_frequency\n# comment row\n1,3\n2,1\n")
        s = read_counts_csv(path)
        assert np.array_equal(s.counts, [1, 1, 1, 2])

    def test_read_rejects_invalid(self, tmp_path):
        path = tmp_path / "counts.csv"
        path.write_text("count,species_frequency\n0,3\n")
        with pytest.raises(ValueError):
            read_counts_csv(path)


class TestPosteriorMeanBand:
    def _draw_sample(self, g, n, seed):
        rng = np.random.default_rng(seed)
        u = rng.choice(g.u, size=4 * n, p=g.w)
        z = rng.poisson(u)
        z = z[z >= 1][:n]
        return CountSample(z)

    def test_bounds_bracket_truth_on_grid_prior(self):
        support = log_spaced_support()
        true_g = poisson_prior(support[[230, 280]], [0.5, 0.5])
        sample = self._draw_sample(true_g, 2500, 12)
        rows = poisson_posterior_mean_band(sample, range(1, 8), alpha=0.05)
        for row in rows:
            truth = plugin_posterior_mean(true_g, int(row.z))
            assert row.lower - 1e-9 <= truth <= row.upper + 1e-9

    def test_bundled_fixture_contains_reference_line(self):
        import importlib.resources as resources

        path = resources.files("zselect").joinpath("data/butterfly_counts.csv")
        sample = read_counts_csv(str(path))
        rows = poisson_posterior_mean_band(sample, range(1, 11), alpha=0.05)
        for row in rows:
            assert row.status == "optimal"
            assert row.lower <= row.z <= row.upper

    def test_grid_uses_distinct_counts(self):
        sample = CountSample(np.array([1] * 10 + [2] * 5 + [4] * 3))
        problem, support = poisson_floc_problem(sample, alpha=0.1)
        assert np.allclose(problem.grid, [1.0, 2.0, 4.0])
        assert problem.fhat[-1] == pytest.approx(1.0)
        assert support.size == 400

    def test_capture_prob(self):
        assert capture_prob(1.0) == pytest.approx(1 - math.exp(-1), rel=1e-14)
        assert capture_prob(50.0) == pytest.approx(1.0, abs=1e-15)
