"""Estimand factories against closed-form and simulation oracles.

Conjugate-prior identities (normal-normal) provide exact targets for the
posterior estimands; a seeded signed-prior simulation cross-checks the
symmetrization rule end to end at unit scale (the full 1e7-draw oracle runs
in the acceptance suite).
"""

import math

import numpy as np
import pytest

from zselect.estimands import (
    combine_omega,
    evaluate_plugin,
    make_effect_size_repl,
    make_functional,
    make_future_coverage,
    make_marginal_density,
    make_normalized_marginal,
    make_power_bin,
    make_prob_nonsig,
    make_replication_prob,
    make_sign_agreement,
    make_symmetrized_posterior_mean,
    omega1_wald,
    plugin_value,
    power_partition,
)
from zselect.kernel import SelectionRegion, power_beta
from zselect.priors import AtomizedPrior, atomize, build_dictionary, mixture_prior, point_mass

REGION = SelectionRegion.half_line(2.1)


def oracle_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def oracle_pdf(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def half_normal(sigma2, m=512):
    return atomize(("normal", 0.0, math.sqrt(sigma2)), m)


class TestMarginal:
    def test_point_mass_zero(self):
        assert plugin_value(point_mass(0.0), make_marginal_density(0.0)) == pytest.approx(
            0.7978845608, abs=1e-9
        )

    def test_scale_normal_convolution(self):
        # |Z| density with prior N(0, 3): 2 phi(z; 0, 4)
        got = plugin_value(half_normal(3.0), make_marginal_density(2.0))
        assert got == pytest.approx(oracle_pdf(1.0), abs=1e-5)
        assert got == pytest.approx(0.24197, abs=1e-4)

    def test_point_mass_three(self):
        got = plugin_value(point_mass(3.0), make_marginal_density(3.0))
        assert got == pytest.approx(oracle_pdf(0.0) + oracle_pdf(6.0), abs=1e-12)


class TestNormalizedMarginal:
    def test_zero_signal(self):
        f = make_normalized_marginal(2.5, REGION)
        got = plugin_value(point_mass(0.0), f)
        assert got == pytest.approx(2 * oracle_pdf(2.5) / (2 * (1 - oracle_cdf(2.1))), abs=1e-12)

    def test_integrates_to_one_over_region(self):
        from scipy.integrate import quad

        g = point_mass(2.5)
        total, _ = quad(
            lambda z: plugin_value(g, make_normalized_marginal(z, REGION)), 2.1, np.inf, limit=200
        )
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_defined_below_region(self):
        f = make_normalized_marginal(0.0, REGION)
        got = plugin_value(point_mass(3.0), f)
        expected = (2 * oracle_pdf(3.0)) / (1 - oracle_cdf(-0.9) + oracle_cdf(-5.1))
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.010863, abs=1e-6)


class TestPowerBin:
    def test_null_study_in_first_cell(self):
        # beta(0) = 0.049996 counts as display-level 0.05
        f = make_power_bin(0.05, 0.10)
        assert plugin_value(point_mass(0.0), f) == pytest.approx(1.0)

    def test_eighty_percent_boundary(self):
        f = make_power_bin(0.8, 1.0)
        assert plugin_value(point_mass(2.8016), f) == pytest.approx(1.0)

    def test_mixture_half(self):
        g = mixture_prior([point_mass(0.0), point_mass(5.0)], [0.5, 0.5])
        assert plugin_value(g, make_power_bin(0.8, 1.0)) == pytest.approx(0.5)
        assert power_beta(5.0) == pytest.approx(0.9988, abs=1e-4)

    def test_partition_covers_without_overlap(self):
        cells = power_partition()
        assert cells[0] == (0.05, 0.10, True)
        assert cells[-1][1] == pytest.approx(1.0)
        u = np.linspace(0, 9, 400)
        total = np.zeros_like(u)
        g = AtomizedPrior(u, np.full(u.size, 1 / u.size))
        for lo, hi, closed in cells:
            f = make_power_bin(lo, hi, closed)
            total += np.asarray(f.numerator(u))
        assert np.allclose(total, 1.0)  # each u in exactly one cell

    def test_invalid_bin(self):
        with pytest.raises(ValueError):
            make_power_bin(0.5, 0.4)


class TestSignAgreement:
    def test_null_prior_zero(self):
        assert plugin_value(point_mass(0.0), make_sign_agreement(2.0)) == 0.0

    def test_wide_prior_approaches_one(self):
        got = plugin_value(half_normal(400.0), make_sign_agreement(3.0))
        assert got > 0.95

    def test_conjugate_normal_prior(self):
        # P(mu > 0 | Z = z) with prior N(0,1): Phi(z / sqrt(2))
        got = plugin_value(half_normal(1.0), make_sign_agreement(2.22))
        assert got == pytest.approx(oracle_cdf(2.22 / math.sqrt(2)), abs=5e-5)
        assert got == pytest.approx(0.9417, abs=1e-3)


class TestSymmetrizedPosteriorMean:
    def test_null_prior(self):
        assert plugin_value(point_mass(0.0), make_symmetrized_posterior_mean(2.0)) == 0.0

    def test_at_origin_zero(self):
        g = half_normal(2.0)
        assert plugin_value(g, make_symmetrized_posterior_mean(0.0)) == pytest.approx(0.0, abs=1e-15)

    def test_conjugate_shrinkage(self):
        # posterior mean z sigma^2 / (1 + sigma^2); discretization error at
        # 512 atoms stays below 1e-6 once the prior is wider than the noise
        got = plugin_value(half_normal(4.0), make_symmetrized_posterior_mean(2.0))
        assert got == pytest.approx(1.6, abs=1e-6)

    def test_numerator_odd_in_z(self):
        f_pos = make_symmetrized_posterior_mean(1.7)
        u = np.linspace(0, 6, 50)
        # swapping the roles of phi(z-u) and phi(z+u) flips the sign
        flipped = u * (
            np.exp(-0.5 * (1.7 + u) ** 2) - np.exp(-0.5 * (1.7 - u) ** 2)
        ) / math.sqrt(2 * math.pi)
        assert np.allclose(np.asarray(f_pos.numerator(u)), -flipped, atol=1e-12)


class TestReplicationProb:
    def test_null_prior_quarter_of_ten_percent(self):
        for z in (2.0, 3.5):
            got = plugin_value(point_mass(0.0), make_replication_prob(z))
            assert got == pytest.approx(oracle_cdf(-1.96), abs=1e-12)  # 0.0249979

    def test_strong_signal_limit(self):
        assert plugin_value(point_mass(12.0), make_replication_prob(3.0)) == pytest.approx(
            1.0, abs=1e-9
        )


class TestFutureCoverage:
    def test_null_prior_at_origin(self):
        got = plugin_value(point_mass(0.0), make_future_coverage(0.0))
        assert got == pytest.approx(oracle_cdf(1.96) - oracle_cdf(-1.96), abs=1e-12)

    def test_null_prior_at_three(self):
        got = plugin_value(point_mass(0.0), make_future_coverage(3.0))
        assert got == pytest.approx(oracle_cdf(4.96) - oracle_cdf(1.04), abs=1e-12)
        assert got == pytest.approx(0.1492, abs=1e-4)


class TestEffectSizeReplication:
    def test_null_prior_at_threshold(self):
        got = plugin_value(point_mass(0.0), make_effect_size_repl(1.96))
        assert got == pytest.approx(2 * (1 - oracle_cdf(1.96)), abs=1e-12)

    def test_certain_at_origin(self):
        for g in (point_mass(0.0), half_normal(2.0, 64), point_mass(4.0)):
            assert plugin_value(g, make_effect_size_repl(0.0)) == pytest.approx(1.0, abs=1e-12)


class TestProbNonsig:
    def test_null_prior(self):
        got = plugin_value(point_mass(0.0), make_prob_nonsig())
        assert got == pytest.approx(1 - power_beta(0.0), abs=1e-12)
        assert got == pytest.approx(0.95, abs=1e-4)

    def test_strong_signal(self):
        assert plugin_value(point_mass(15.0), make_prob_nonsig()) == pytest.approx(0.0, abs=1e-12)

    def test_scale_normal(self):
        got = plugin_value(half_normal(3.0), make_prob_nonsig())
        assert got == pytest.approx(2 * oracle_cdf(1.96 / 2.0) - 1, abs=1e-4)
        assert got == pytest.approx(0.6729, abs=1e-3)


class TestProbabilityRange:
    @pytest.mark.parametrize(
        "factory",
        [make_sign_agreement, make_replication_prob, make_future_coverage, make_effect_size_repl],
    )
    def test_probability_estimands_in_unit_interval(self, factory):
        d = build_dictionary("zcurve", REGION)
        rng = np.random.default_rng(19)
        for _ in range(10):
            pi = rng.dirichlet(np.ones(7))
            for z in (0.5, 2.22, 4.5):
                val = evaluate_plugin(d, pi, factory(z))
                assert -1e-12 <= val <= 1 + 1e-12


class TestSignedSpaceReference:
    """The symmetrized folded weights must reproduce signed-prior values."""

    @staticmethod
    def signed_reference(factory_id, atoms_u, atoms_w, z):
        # evaluate the decomposition with explicit +-u atoms at weight w/2
        u = np.concatenate([atoms_u, -atoms_u])
        w = np.concatenate([atoms_w, atoms_w]) / 2.0
        phi = lambda x: np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
        Phi = np.vectorize(oracle_cdf)
        if factory_id == "sign_agreement":
            nu = np.where(u > 0, phi(z - u), 0.0) + np.where(u < 0, phi(-z - u), 0.0)
            de = phi(z - u) + phi(-z - u)
        elif factory_id == "repl_prob":
            nu = (1 - Phi(1.96 - u)) * phi(z - u) + Phi(-1.96 - u) * phi(-z - u)
            de = phi(z - u) + phi(-z - u)
        elif factory_id == "future_coverage":
            nu = (Phi(z + 1.96 - u) - Phi(z - 1.96 - u)) * phi(z - u) + (
                Phi(-z + 1.96 - u) - Phi(-z - 1.96 - u)
            ) * phi(-z - u)
            de = phi(z - u) + phi(-z - u)
        elif factory_id == "effect_repl":
            nu = (1 - Phi(z - u) + Phi(-z - u)) * (phi(z - u) + phi(-z - u))
            de = phi(z - u) + phi(-z - u)
        elif factory_id == "sym_post_mean":
            nu = u * (phi(z - u) - phi(-z - u))
            de = phi(z - u) + phi(-z - u)
        return float(w @ nu) / float(w @ de)

    @pytest.mark.parametrize(
        "factory_id,factory",
        [
            ("sign_agreement", make_sign_agreement),
            ("repl_prob", make_replication_prob),
            ("future_coverage", make_future_coverage),
            ("effect_repl", make_effect_size_repl),
            ("sym_post_mean", make_symmetrized_posterior_mean),
        ],
    )
    def test_matches_signed_reference(self, factory_id, factory):
        rng = np.random.default_rng(23)
        for _ in range(5):
            u = np.sort(rng.uniform(0.05, 6, 8))
            w = rng.dirichlet(np.ones(8))
            g = AtomizedPrior(u, w)
            for z in (1.0, 2.22, 4.0):
                got = plugin_value(g, factory(z))
                ref = self.signed_reference(factory_id, u, w, z)
                assert got == pytest.approx(ref, abs=1e-10)


class TestMonteCarloOracle:
    """Small-scale posterior simulation cross-check (1e6 draws; the
    acceptance suite runs the 1e7 version)."""

    def test_replication_prob_mc(self):
        rng = np.random.default_rng(101)
        g = mixture_prior([point_mass(1.0), point_mass(3.0)], [0.6, 0.4])
        n = 10**6
        u = rng.choice(g.u, size=n, p=g.w)
        sign = rng.choice([-1.0, 1.0], size=n)
        mu = sign * u
        z_draw = mu + rng.standard_normal(n)
        z_rep = mu + rng.standard_normal(n)
        z0 = 2.22
        window = np.abs(np.abs(z_draw) - z0) <= 0.01
        hits = (np.abs(z_rep[window]) > 1.96) & (z_draw[window] * z_rep[window] > 0)
        p_hat = hits.mean()
        se = math.sqrt(p_hat * (1 - p_hat) / window.sum())
        got = plugin_value(g, make_replication_prob(z0))
        assert abs(got - p_hat) < 3 * se + 1e-4


class TestOmega:
    def test_wald_example(self):
        lo, hi = omega1_wald(60, 100)
        assert lo == pytest.approx(0.9615, abs=2e-4)
        assert hi == pytest.approx(2.4460, abs=2e-4)

    def test_symmetric_center(self):
        lo, hi = omega1_wald(500, 1000)
        assert math.sqrt(lo * hi) == pytest.approx(1.0, abs=1e-12)

    def test_width_shrinks(self):
        lo1, hi1 = omega1_wald(5000, 10000)
        lo2, hi2 = omega1_wald(500000, 10**6)
        assert (hi2 - lo2) < (hi1 - lo1) / 5

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            omega1_wald(0, 100)
        with pytest.raises(ValueError):
            omega1_wald(100, 100)

    def test_combine_identity(self):
        res = combine_omega((1.0, 1.0), (1.0, 1.0))
        assert res.omega == (1.0, 1.0)

    def test_combine_matches_published_products(self):
        res = combine_omega((5.46, 5.58), (1.26, 4.43))
        assert res.omega[0] == pytest.approx(6.88, abs=0.02)
        assert res.omega[1] == pytest.approx(24.72, abs=0.02)

    def test_combine_arithmetic(self):
        res = combine_omega((2.0, 3.0), (0.5, 0.6))
        assert res.omega == (1.0, 1.7999999999999998)


class TestMakeFunctional:
    def test_registry_ids(self):
        region = REGION
        for est in ("marginal", "marginal_norm", "sign_agreement", "sym_post_mean",
                    "repl_prob", "future_coverage", "effect_repl"):
            f = make_functional(est, z=2.0, region=region)
            assert f.id == est
        assert make_functional("power_ge80").id == "power_bin"
        assert make_functional("prob_nonsig").id == "prob_nonsig"

    def test_negative_z_rejected(self):
        with pytest.raises(ValueError):
            make_functional("sign_agreement", z=-1.0)

    def test_unknown_id(self):
        with pytest.raises(ValueError):
            make_functional("posterior_mean", z=1.0)
