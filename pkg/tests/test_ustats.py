"""Complete, decoupled, weighted, and incomplete estimators plus the tuple stream."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_scalar_dist, table_kernel, uniform_three
from ustatlab.distributions import EnumerationBudgetError, SamplerSpec, draw_iid
from ustatlab.hilbert import HilbertSpace, norm
from ustatlab.kernels import KernelSpec, gini, product
from ustatlab.ustats import (
    DecoupledSample,
    SamplingDesign,
    WeightScheme,
    complete,
    decoupled,
    design_mean_factor,
    draw_design,
    enumerate_inc,
    inc_count,
    incomplete,
    rank_combination,
    running_max,
    running_max_embedding_check,
    unrank_combination,
    weight_aggregate,
    weighted,
    weighted_decomposition_check,
)

line = HilbertSpace.euclidean(1)


class TestEnumerateInc:
    def test_pairs_of_three(self):
        assert list(enumerate_inc(2, 3)) == [(1, 2), (1, 3), (2, 3)]

    def test_single_full_tuple(self):
        assert list(enumerate_inc(3, 3)) == [(1, 2, 3)]

    def test_count_ten_choose_two(self):
        assert inc_count(2, 10) == 45
        assert sum(1 for _ in enumerate_inc(2, 10)) == 45

    def test_cap(self):
        with pytest.raises(EnumerationBudgetError):
            list(enumerate_inc(2, 10, cap=44))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 20))
    def test_count_and_order(self, m, n):
        if m > n:
            tuples = list(enumerate_inc(m, n)) if inc_count(m, n) else []
            assert tuples == []
            return
        tuples = list(enumerate_inc(m, n))
        assert len(tuples) == math.comb(n, m)
        assert tuples == sorted(tuples)
        for tpl in tuples:
            assert all(a < b for a, b in zip(tpl, tpl[1:]))
            assert 1 <= tpl[0] and tpl[-1] <= n

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 4), st.integers(4, 15), st.data())
    def test_rank_roundtrip(self, m, n, data):
        rank = data.draw(st.integers(0, math.comb(n, m) - 1))
        tpl = unrank_combination(rank, n, m)
        assert rank_combination(tpl, n) == rank


class TestComplete:
    def test_product_hand_enumeration(self):
        value = complete(product(), np.array([1.0, -1.0, 2.0]))
        assert value.coords[0] == -1.0

    def test_gini_hand_enumeration(self):
        value = complete(gini(), np.array([0.0, 3.0, 7.0]))
        assert value.coords[0] == 14.0

    def test_single_term_at_minimal_sample(self):
        value = complete(gini(), np.array([2.0, -3.0]))
        assert value.coords[0] == 5.0

    def test_permutation_invariance_for_symmetric_kernels(self):
        rng = np.random.default_rng(43)
        sample = rng.normal(size=7)
        shuffled = rng.permutation(sample)
        a = complete(gini(), sample).coords[0]
        b = complete(gini(), shuffled).coords[0]
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_sample_shorter_than_arity_rejected(self):
        with pytest.raises(ValueError):
            complete(gini(), np.array([1.0]))


class TestRunningMax:
    def test_minimal_sample_is_the_single_term(self):
        out = running_max(product(), np.array([3.0, 2.0]))
        assert out.max_norm == 6.0
        assert out.argmax_prefix == 2

    def test_nonnegative_kernel_peaks_at_the_end(self):
        sample = np.abs(np.random.default_rng(44).normal(size=9)) + 0.5
        out = running_max(gini(), sample)
        assert out.argmax_prefix == 9
        assert out.max_norm == out.prefix_norms[-1]

    def test_matches_bruteforce_prefix_recomputation(self):
        rng = np.random.default_rng(45)
        sample = rng.normal(size=8)
        out = running_max(product(), sample)
        for stop in range(2, 9):
            fresh = complete(product(), sample[:stop])
            np.testing.assert_allclose(
                out.prefix_values[stop - 2], fresh.coords, rtol=1e-12, atol=1e-12
            )
        assert out.max_norm == pytest.approx(out.prefix_norms.max())


class TestDecoupled:
    def test_equal_rows_reproduce_complete(self):
        rng = np.random.default_rng(46)
        sample = rng.normal(size=6)
        twin = DecoupledSample(rows=(sample, sample))
        np.testing.assert_array_equal(
            decoupled(product(), twin).coords, complete(product(), sample).coords
        )

    def test_arity_one_is_complete(self):
        rng = np.random.default_rng(47)
        k = KernelSpec(
            arity=1,
            codomain=line,
            eval_one=lambda x: x * x,
            eval_batch=lambda x: np.asarray(x) ** 2,
            symmetric=True,
        )
        sample = rng.normal(size=5)
        solo = DecoupledSample(rows=(sample,))
        np.testing.assert_array_equal(
            decoupled(k, solo).coords, complete(k, sample).coords
        )

    def test_two_row_hand_enumeration(self):
        pair = DecoupledSample(rows=(np.array([1.0, 2.0]), np.array([3.0, 4.0])))
        assert decoupled(product(), pair).coords[0] == 4.0

    def test_row_count_must_match_arity(self):
        with pytest.raises(ValueError, match="arity"):
            decoupled(product(), DecoupledSample(rows=(np.zeros(3),)))


class TestEmbeddingCheck:
    def test_minimal_sample_deviation_is_zero(self):
        assert running_max_embedding_check(product(), np.array([1.5, -2.0])) == 0.0

    def test_zero_kernel(self):
        k = KernelSpec(
            arity=2, codomain=line, eval_one=lambda x, y: 0.0, symmetric=True
        )
        assert running_max_embedding_check(k, np.zeros(6)) == 0.0

    def test_random_sample(self):
        rng = np.random.default_rng(48)
        assert running_max_embedding_check(product(), rng.normal(size=7)) <= 1e-12


class TestWeights:
    def test_aggregate_hand_example(self):
        scheme = WeightScheme(
            kind="scalar", values={(1, 2): 1.0, (1, 3): 2.0, (2, 3): 3.0}
        )
        agg = weight_aggregate(scheme, m=2, n=3, k=1)
        assert agg[(1,)] == pytest.approx(3.0)
        assert agg[(2,)] == pytest.approx(4.0)
        assert agg[(3,)] == pytest.approx(5.0)

    def test_unit_weights_count_tuples_through_each_index(self):
        n, m = 6, 3
        scheme = WeightScheme(
            kind="scalar", values={tpl: 1.0 for tpl in enumerate_inc(m, n)}
        )
        agg = weight_aggregate(scheme, m=m, n=n, k=1)
        for i in range(1, n + 1):
            assert agg[(i,)] == pytest.approx(math.comb(n - 1, m - 1))

    def test_single_triple_aggregates_to_itself_on_pairs(self):
        scheme = WeightScheme(kind="scalar", values={(1, 2, 3): 2.5})
        agg = weight_aggregate(scheme, m=3, n=3, k=2)
        for pair in [(1, 2), (1, 3), (2, 3)]:
            assert agg[pair] == pytest.approx(2.5)

    def test_identity_weights_reproduce_complete(self):
        rng = np.random.default_rng(49)
        sample = rng.normal(size=6)
        lhs = weighted(product(), WeightScheme.identity(), sample)
        rhs = complete(product(), sample)
        np.testing.assert_array_equal(lhs.coords, rhs.coords)

    def test_zero_weights_give_the_zero_vector(self):
        scheme = WeightScheme(kind="scalar", values={})
        out = weighted(product(), scheme, np.arange(5.0))
        assert norm(out) == 0.0

    def test_scalar_weights_match_the_projection_expansion(self):
        rng = np.random.default_rng(50)
        dist = random_scalar_dist(rng, 3)
        kernel = table_kernel(2, dist, rng)
        n = 6
        sample = draw_iid(SamplerSpec(kind="finite", dist=dist, seed_stream=9), n, 0)
        scheme = WeightScheme(
            kind="scalar",
            values={tpl: float(rng.normal()) for tpl in enumerate_inc(2, n)},
        )
        assert weighted_decomposition_check(kernel, dist, scheme, sample) <= 1e-10

    def test_diagonal_weights_match_the_projection_expansion(self):
        rng = np.random.default_rng(51)
        dist = random_scalar_dist(rng, 3)
        kernel = table_kernel(2, dist, rng, dim=3)
        n = 5
        sample = draw_iid(SamplerSpec(kind="finite", dist=dist, seed_stream=10), n, 0)
        scheme = WeightScheme(
            kind="diagonal",
            values={tpl: rng.normal(size=3) for tpl in enumerate_inc(2, n)},
        )
        assert weighted_decomposition_check(kernel, dist, scheme, sample) <= 1e-10

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            WeightScheme(kind="scalar", values={(1, 2): np.array([1.0, 2.0])})
        with pytest.raises(ValueError):
            WeightScheme(kind="other", values={})


class TestDesigns:
    def test_without_replacement_full_draw_hits_every_tuple(self):
        rng = np.random.default_rng(52)
        design = SamplingDesign(kind="without-replacement", size=inc_count(2, 5))
        sel = draw_design(design, 2, 5, rng)
        assert sel.distinct == 10
        np.testing.assert_array_equal(sel.counts, np.ones(10, dtype=np.int64))
        np.testing.assert_array_equal(sel.ranks, np.arange(10))

    def test_bernoulli_rate_one_keeps_everything(self):
        rng = np.random.default_rng(53)
        sel = draw_design(SamplingDesign(kind="bernoulli", rate=1.0), 2, 6, rng)
        assert sel.distinct == inc_count(2, 6)
        assert not sel.empty

    def test_with_replacement_frequencies(self):
        """Each of the 10 pairs from n=5 lands near frequency 1/10."""
        rng = np.random.default_rng(54)
        design = SamplingDesign(kind="with-replacement", size=10_000)
        sel = draw_design(design, 2, 5, rng)
        freq = np.zeros(10)
        freq[sel.ranks] = sel.counts / design.size
        se = np.sqrt(0.1 * 0.9 / design.size)
        np.testing.assert_allclose(freq, 0.1, atol=4.0 * se)

    def test_without_replacement_cannot_exceed_the_population(self):
        rng = np.random.default_rng(55)
        with pytest.raises(ValueError):
            draw_design(SamplingDesign(kind="without-replacement", size=11), 2, 5, rng)

    def test_design_validation(self):
        with pytest.raises(ValueError):
            SamplingDesign(kind="bernoulli", rate=1.5)
        with pytest.raises(ValueError):
            SamplingDesign(kind="with-replacement")
        with pytest.raises(ValueError):
            SamplingDesign(kind="bernoulli", rate=0.5, size=3)

    def test_mean_factor(self):
        assert design_mean_factor(
            SamplingDesign(kind="bernoulli", rate=0.25), 2, 6
        ) == pytest.approx(0.25)
        assert design_mean_factor(
            SamplingDesign(kind="without-replacement", size=3), 2, 6
        ) == pytest.approx(3.0 / 15.0)


class TestIncomplete:
    def test_full_selection_is_complete(self):
        rng = np.random.default_rng(56)
        sample = rng.normal(size=6)
        sel = draw_design(SamplingDesign(kind="bernoulli", rate=1.0), 2, 6, rng)
        out = incomplete(product(), sample, sel)
        np.testing.assert_allclose(
            out.value.coords, complete(product(), sample).coords, rtol=1e-12
        )
        assert out.distinct == 15

    def test_empty_selection_flags_and_zeroes(self):
        rng = np.random.default_rng(57)
        sel = draw_design(SamplingDesign(kind="bernoulli", rate=1e-9), 2, 6, rng)
        out = incomplete(product(), np.arange(6.0), sel)
        assert out.empty
        assert norm(out.value) == 0.0

    def test_design_unbiasedness_monte_carlo(self):
        """Design means of incomplete/N track complete/binom within 4 SE."""
        rng = np.random.default_rng(58)
        sample = draw_iid(SamplerSpec(kind="rademacher", seed_stream=11), 8, 0)
        target = complete(gini(), sample).coords[0] / inc_count(2, 8)
        design = SamplingDesign(kind="with-replacement", size=20)
        draws = np.empty(2000)
        for r in range(draws.size):
            sel = draw_design(design, 2, 8, rng)
            draws[r] = incomplete(gini(), sample, sel).value.coords[0] / design.size
        se = draws.std(ddof=1) / np.sqrt(draws.size)
        assert abs(draws.mean() - target) <= 4.0 * se

    def test_selection_must_match_the_sample(self):
        rng = np.random.default_rng(59)
        sel = draw_design(SamplingDesign(kind="bernoulli", rate=0.5), 2, 6, rng)
        with pytest.raises(ValueError):
            incomplete(product(), np.arange(5.0), sel)
