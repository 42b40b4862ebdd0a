"""Replication engine, tail scans, envelopes, scaling and decoupling reports."""

import numpy as np
import pytest

from ustatlab.distributions import FiniteDistribution, SamplerSpec, draw_iid
from ustatlab.hilbert import HilbertSpace
from ustatlab.kernels import KernelSpec, SupBoundWarning, gini, product
from ustatlab.montecarlo import (
    BoundEnvelope,
    ExperimentConfig,
    ScalingCell,
    bounded_kernel_tail,
    coordinate_kernel,
    decouple_compare,
    empirical_tail,
    envelope_eval,
    fit_tail_exponent,
    hk_tail_oracle,
    incomplete_scaling_experiment,
    matching_point_compare,
    replicate,
    tail_scan,
)
from ustatlab.ustats import SamplingDesign, complete, inc_count

line = HilbertSpace.euclidean(1)
rademacher = SamplerSpec(kind="rademacher")


def zero_kernel():
    return KernelSpec(
        arity=2,
        codomain=line,
        eval_one=lambda x, y: 0.0,
        eval_batch=lambda x, y: np.zeros(np.shape(x)[0]),
        symmetric=True,
        name="zero",
    )


def make_config(**overrides):
    base = dict(
        kernel=product(),
        sampler=rademacher,
        sample_size=12,
        replicas=200,
        master_seed=7,
        x_grid=np.geomspace(0.2, 6.0, 12),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestExperimentConfig:
    def test_replica_floor(self):
        with pytest.raises(ValueError, match="replicas"):
            make_config(replicas=50)

    def test_grid_must_increase(self):
        with pytest.raises(ValueError, match="x_grid"):
            make_config(x_grid=np.array([1.0, 0.5]))
        with pytest.raises(ValueError, match="x_grid"):
            make_config(x_grid=np.array([0.0, 1.0]))

    def test_sample_size_floor(self):
        with pytest.raises(ValueError, match="arity"):
            make_config(sample_size=1)

    def test_normalization_names(self):
        with pytest.raises(ValueError, match="normalization"):
            make_config(normalization="scaled")


class TestReplicate:
    def test_same_seed_is_bit_identical(self):
        a = replicate(make_config())
        b = replicate(make_config())
        np.testing.assert_array_equal(a, b)

    def test_thread_count_does_not_change_results(self):
        a = replicate(make_config(threads=1))
        b = replicate(make_config(threads=4))
        np.testing.assert_array_equal(a, b)

    def test_point_mass_law_gives_all_zeros(self):
        dist = FiniteDistribution(np.array([0.0]), np.array([1.0]))
        cfg = make_config(sampler=SamplerSpec(kind="finite", dist=dist))
        np.testing.assert_array_equal(replicate(cfg), np.zeros(cfg.replicas))

    def test_scaled_means_concentrate(self):
        """Averages of gini values over tuples settle near the law mean."""
        n, replicas = 30, 2000
        sampler = SamplerSpec(kind="rademacher", seed_stream=21)

        def stat(r):
            sample = draw_iid(sampler, n, r)
            return complete(gini(), sample).coords[0] / inc_count(2, n)

        cfg = make_config(kernel=gini(), sample_size=n, replicas=replicas)
        values = replicate(cfg, stat_fn=stat)
        se = values.std(ddof=1) / np.sqrt(replicas)
        assert abs(values.mean() - 1.0) <= 4.0 * se


class TestFitTailExponent:
    def test_exact_synthetic_curve(self):
        xs = np.geomspace(0.95, 2.4, 12)
        beta, used = fit_tail_exponent(xs, np.exp(-(xs**2)))
        assert used == 12
        assert beta == pytest.approx(2.0, abs=1e-9)

    def test_too_few_points(self):
        xs = np.array([1.0, 1.2, 1.4])
        beta, used = fit_tail_exponent(xs, np.exp(-(xs**2)))
        assert beta is None
        assert used == 3

    def test_flat_zero_curve(self):
        xs = np.geomspace(0.5, 4.0, 10)
        beta, used = fit_tail_exponent(xs, np.zeros(10))
        assert beta is None
        assert used == 0


class TestTailScan:
    def test_uncentered_kernel_rejected(self):
        with pytest.raises(ValueError, match="not centered"):
            tail_scan(make_config(kernel=gini()))

    def test_continuous_law_needs_an_explicit_order(self):
        sampler = SamplerSpec(kind="discretized-gaussian", space=line)
        cfg = make_config(kernel=gini(), sampler=sampler)
        with pytest.raises(ValueError, match="finite support"):
            tail_scan(cfg)

    def test_stated_order_must_match_the_computed_one(self):
        with pytest.raises(ValueError, match="degeneracy"):
            tail_scan(make_config(), degeneracy=1)

    def test_zero_kernel_has_no_fit(self):
        report = tail_scan(make_config(kernel=zero_kernel()))
        np.testing.assert_array_equal(report.p_hat, np.zeros(12))
        assert not report.fit_available
        assert report.beta is None
        assert report.degeneracy == 2

    def test_normalization_factor(self):
        deg = tail_scan(make_config())
        raw = tail_scan(make_config(normalization="raw"))
        assert deg.normalization == pytest.approx(12.0)  # n^(m - d/2) at d = m = 2
        assert raw.normalization == 1.0
        assert deg.target_exponent == pytest.approx(1.0)

    def test_sup_bound_spot_check_fires(self):
        cfg = make_config(kernel=product(sup_bound=0.5), replicas=100)
        with pytest.warns(SupBoundWarning):
            tail_scan(cfg)


class TestEnvelope:
    def test_field_validation(self):
        with pytest.raises(ValueError):
            BoundEnvelope(
                arity=2, scale=-1.0, first_coefficient=1.0,
                second_coefficient=1.0, tail_scale=1.0,
            )

    def test_exponent_bookkeeping(self):
        env = BoundEnvelope(
            arity=3, scale=1.0, first_coefficient=1.0,
            second_coefficient=1.0, tail_scale=1.0,
        )
        assert env.p_m == pytest.approx(5.0)  # m(m+1)/2 - 1
        assert env.log_power == pytest.approx(6.0)

    def test_pure_exponential(self):
        env = BoundEnvelope(
            arity=2, scale=3.0, first_coefficient=1.0,
            second_coefficient=0.0, tail_scale=1.0,
        )
        out = envelope_eval(env, x=6.0, tail_oracle=bounded_kernel_tail(10.0))
        assert out.total == pytest.approx(np.exp(-2.0))
        assert out.second_term == 0.0
        assert not out.diverged

    def test_bounded_tail_cutoff_kills_the_integral(self):
        """With the scale at the cutoff the indicator tail never triggers."""
        bound = 4.0
        env = BoundEnvelope(
            arity=2, scale=bound, first_coefficient=1.0,
            second_coefficient=5.0, tail_scale=1.0,
        )
        out = envelope_eval(env, x=2.0, tail_oracle=bounded_kernel_tail(bound))
        assert out.second_term == 0.0
        assert not out.diverged

    def test_quadrature_self_convergence(self):
        rng = np.random.default_rng(61)
        samples = np.abs(rng.normal(size=10_000))
        env = BoundEnvelope(
            arity=2, scale=1.0, first_coefficient=1.0,
            second_coefficient=1.0, tail_scale=1.0,
        )
        coarse = envelope_eval(env, x=2.0, tail_oracle=samples, resolution=64)
        fine = envelope_eval(env, x=2.0, tail_oracle=samples, resolution=128)
        assert coarse.second_term > 0.0
        assert abs(fine.total - coarse.total) <= 1e-3 * coarse.total

    def test_heavy_tail_flags_divergence(self):
        env = BoundEnvelope(
            arity=2, scale=1.0, first_coefficient=1.0,
            second_coefficient=1.0, tail_scale=1.0,
        )
        out = envelope_eval(env, x=1.0, tail_oracle=lambda t: 1.0)
        assert out.diverged

    def test_exact_conditional_tail_oracle(self):
        dist = FiniteDistribution.rademacher()
        tail = hk_tail_oracle(gini(), dist, 1)
        assert tail(0.5) == 1.0
        assert tail(1.0) == 0.0

    def test_empirical_tail_steps(self):
        tail = empirical_tail(np.array([1.0, 2.0, 3.0, 4.0]))
        assert tail(0.5) == 1.0
        assert tail(2.0) == pytest.approx(0.5)
        assert tail(9.0) == 0.0


class TestIncompleteScaling:
    def test_grid_rows_and_unbiasedness(self):
        cells = [
            ScalingCell(sample_size=n, design=SamplingDesign(kind="with-replacement", size=N))
            for n in (10, 14)
            for N in (50, 200)
        ]
        report = incomplete_scaling_experiment(
            product(), rademacher, cells, replicas=300, master_seed=31
        )
        assert report.degeneracy == 2
        assert len(report.rows) == 4
        for row in report.rows:
            assert row.used == 300 - row.empty_count
            assert row.quantile_lo <= row.quantile <= row.quantile_hi
            assert row.unbias_ok
        assert report.spread >= 1.0

    def test_threads_do_not_change_the_report(self):
        cells = [
            ScalingCell(sample_size=10, design=SamplingDesign(kind="with-replacement", size=80))
        ]
        kw = dict(replicas=200, master_seed=32)
        a = incomplete_scaling_experiment(product(), rademacher, cells, threads=1, **kw)
        b = incomplete_scaling_experiment(product(), rademacher, cells, threads=3, **kw)
        assert a.rows[0].quantile == b.rows[0].quantile
        assert a.rows[0].unbias_max_sigmas == b.rows[0].unbias_max_sigmas

    def test_full_bernoulli_design_is_exactly_unbiased(self):
        """Keeping every tuple reduces the estimator to the complete sum."""
        cells = [ScalingCell(sample_size=8, design=SamplingDesign(kind="bernoulli", rate=1.0))]
        report = incomplete_scaling_experiment(
            product(), rademacher, cells, replicas=150, master_seed=33
        )
        row = report.rows[0]
        assert row.empty_count == 0
        assert row.unbias_max_sigmas == 0.0
        assert row.quantile > 0.0


def test_matching_point_normalizations_agree():
    sampler = SamplerSpec(kind="discretized-gaussian", space=line)
    report = matching_point_compare(
        sampler, sample_size=20, size=10, replicas=600, master_seed=41
    )
    assert report.rate == pytest.approx(0.5)
    assert report.overlap


class TestDecoupleCompare:
    def test_arity_one_constant_is_near_one(self):
        cfg = ExperimentConfig(
            kernel=coordinate_kernel(),
            sampler=rademacher,
            sample_size=20,
            replicas=2000,
            master_seed=51,
            x_grid=np.geomspace(0.5, 8.0, 12),
        )
        report = decouple_compare(cfg)
        assert report.constant_defined
        assert 1.0 <= report.fitted_constant <= 1.5

    def test_zero_kernel_leaves_the_constant_undefined(self):
        cfg = make_config(kernel=zero_kernel(), replicas=300)
        report = decouple_compare(cfg)
        assert not report.constant_defined
        assert report.fitted_constant is None
        assert not report.usable.any()

    def test_product_kernel_domination(self):
        cfg = make_config(sample_size=20, replicas=2000, master_seed=52)
        report = decouple_compare(cfg)
        assert report.constant_defined
        assert report.fitted_constant >= 1.0
        assert report.usable.any()
        assert report.replicas == 2000
