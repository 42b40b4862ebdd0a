"""Exact projections, degeneracy detection, and the decomposition identity."""

import itertools

import numpy as np
import pytest

from helpers import random_scalar_dist, table_kernel, uniform_three
from ustatlab.distributions import (
    FiniteDistribution,
    SamplerSpec,
    draw_iid,
    exact_expectation,
)
from ustatlab.hilbert import HilbertSpace
from ustatlab.hoeffding import (
    decomposition_check,
    degeneracy_order,
    project,
    project_mc,
)
from ustatlab.kernels import KernelSpec, centered, gini, product, symmetrize

rademacher = FiniteDistribution.rademacher()


class TestProject:
    def test_product_kernel_first_projection_vanishes(self):
        """A centered factor law kills the level-1 projection of x*y."""
        proj = project(product(), rademacher, 1)
        for atom in (-1.0, 1.0):
            np.testing.assert_allclose(proj.eval(atom), [0.0], atol=1e-15)

    def test_gini_rademacher_first_projection_vanishes(self):
        proj = project(gini(), rademacher, 1)
        for atom in (-1.0, 1.0):
            np.testing.assert_allclose(proj.eval(atom), [0.0], atol=1e-15)

    def test_gini_rademacher_second_projection(self):
        proj = project(gini(), rademacher, 2)
        np.testing.assert_allclose(proj.eval(1.0, -1.0), [1.0], rtol=1e-14)
        np.testing.assert_allclose(proj.eval(1.0, 1.0), [-1.0], rtol=1e-14)

    def test_gini_uniform_three_level_one(self):
        """h_1(0) = E|0 - xi| - E|xi - xi'| = 2/3 - 8/9 = -2/9."""
        proj = project(gini(), uniform_three(), 1)
        np.testing.assert_allclose(proj.eval(0.0), [-2.0 / 9.0], rtol=1e-13)

    def test_level_zero_is_the_mean(self):
        proj = project(gini(), uniform_three(), 0)
        np.testing.assert_allclose(proj.eval(), [8.0 / 9.0], rtol=1e-14)

    def test_asymmetric_kernel_rejected(self):
        line = HilbertSpace.euclidean(1)
        k = KernelSpec(arity=2, codomain=line, eval_one=lambda x, y: x)
        with pytest.raises(ValueError, match="symmetric"):
            project(k, rademacher, 1)

    def test_projection_values_are_conditionally_centered(self):
        """Integrating out the last argument of h_k gives zero pointwise."""
        rng = np.random.default_rng(21)
        dist = random_scalar_dist(rng, 4)
        kernel = table_kernel(3, dist, rng)
        for k in (1, 2, 3):
            proj = project(kernel, dist, k)
            for head in itertools.product(dist.atoms, repeat=k - 1):
                out = exact_expectation(lambda last: proj.eval(*head, last), dist, 1)
                np.testing.assert_allclose(out, [0.0], atol=1e-12)

    def test_constant_kernel_projects_to_zero(self):
        line = HilbertSpace.euclidean(1)
        k = KernelSpec(
            arity=2, codomain=line, eval_one=lambda x, y: 4.5, symmetric=True
        )
        proj = project(k, uniform_three(), 1)
        for atom in uniform_three().atoms:
            np.testing.assert_allclose(proj.eval(atom), [0.0], atol=1e-15)

    def test_additive_kernel_has_no_level_two_part(self):
        line = HilbertSpace.euclidean(1)
        k = KernelSpec(
            arity=2,
            codomain=line,
            eval_one=lambda x, y: x * x + y * y,
            symmetric=True,
        )
        proj = project(k, uniform_three(), 2)
        for a, b in itertools.product(uniform_three().atoms, repeat=2):
            np.testing.assert_allclose(proj.eval(a, b), [0.0], atol=1e-14)


class TestDegeneracyOrder:
    def test_gini_uniform_three_is_order_one(self):
        report = degeneracy_order(gini(), uniform_three())
        assert report.order == 1
        assert not report.fully_degenerate

    def test_gini_rademacher_is_order_two(self):
        report = degeneracy_order(gini(), rademacher)
        assert report.order == 2
        assert report.residuals[0] <= 1e-12
        # order matches the arity but the kernel mean is 1, so the
        # centered-and-degenerate flag stays off until we subtract it
        assert not report.fully_degenerate
        assert degeneracy_order(centered(gini(), rademacher), rademacher).fully_degenerate

    def test_centered_product_is_order_two_and_equals_its_top_projection(self):
        kernel = product()
        report = degeneracy_order(kernel, rademacher)
        assert report.order == 2
        proj = project(kernel, rademacher, 2)
        for a, b in itertools.product((-1.0, 1.0), repeat=2):
            np.testing.assert_allclose(proj.eval(a, b), [a * b], rtol=1e-14)

    def test_declared_degeneracy_is_cross_checked(self):
        report = degeneracy_order(product(), rademacher)
        assert report.declared == 2
        assert report.declared_matches


class TestDecompositionCheck:
    def test_arity_one_telescopes_exactly(self):
        rng = np.random.default_rng(31)
        dist = random_scalar_dist(rng, 5)
        kernel = table_kernel(1, dist, rng)
        sample = draw_iid(SamplerSpec(kind="finite", dist=dist, seed_stream=1), 9, 0)
        check = decomposition_check(kernel, dist, sample)
        assert check.within(1e-12)

    def test_gini_rademacher_n6(self):
        sample = draw_iid(SamplerSpec(kind="rademacher", seed_stream=2), 6, 0)
        check = decomposition_check(gini(), rademacher, sample)
        assert check.within(1e-10)
        assert len(check.per_order_norms) == 3

    def test_product_uniform_three_n5(self):
        sample = draw_iid(
            SamplerSpec(kind="finite", dist=uniform_three(), seed_stream=3), 5, 0
        )
        assert decomposition_check(product(), uniform_three(), sample).within(1e-10)

    @pytest.mark.parametrize("case", range(10))
    def test_randomized_kernels(self, case):
        """Spot sample of the identity; the full sweep runs in acceptance."""
        rng = np.random.default_rng(1000 + case)
        m = int(rng.integers(1, 4))
        dist = random_scalar_dist(rng, int(rng.integers(2, 6)))
        kernel = table_kernel(m, dist, rng, dim=int(rng.integers(1, 4)))
        n = int(rng.integers(max(m, 2), 9))
        sample = draw_iid(
            SamplerSpec(kind="finite", dist=dist, seed_stream=int(case)), n, 0
        )
        assert decomposition_check(kernel, dist, sample).within(1e-10)


def test_plugin_projection_tracks_the_exact_one():
    """Monte Carlo conditional means agree with enumeration at 4 sigma."""
    sampler = SamplerSpec(kind="finite", dist=uniform_three(), seed_stream=8)
    draws = 20_000
    approx = project_mc(gini(), sampler, 1, draws=draws, stream=3)
    exact = project(gini(), uniform_three(), 1)
    for atom in uniform_three().atoms:
        got = approx.eval(atom)[0]
        want = exact.eval(atom)[0]
        assert abs(got - want) <= 4.0 * 1.0 / np.sqrt(draws)


def test_projection_reuse_is_consistent():
    first = project(gini(), rademacher, 2)
    second = project(gini(), rademacher, 2)
    np.testing.assert_array_equal(first.eval(1.0, -1.0), second.eval(1.0, -1.0))
