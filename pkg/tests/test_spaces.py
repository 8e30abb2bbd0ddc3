
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfbridge.errors import CapacityError, DegenerateConditionError, InputError
from mfbridge.prohorov import prohorov
from mfbridge.spaces import (
    Dist,
    FiniteMetricSpace,
    JointDist,
    MultiDist,
    PolicyKernel,
    condition_first,
    contaminate,
    empirical,
    is_symmetric,
    marginal,
    product,
    push,
)

S2 = FiniteMetricSpace(("s1", "s2"))
X2 = FiniteMetricSpace(("a", "b"))


def prob_vectors(k):
    return st.lists(st.integers(0, 20), min_size=k, max_size=k).filter(sum).map(
        lambda c: np.array(c, dtype=float) / sum(c))


class TestSpace:
    def test_discrete_default(self):
        assert np.array_equal(S2.dist, [[0, 1], [1, 0]])
        assert S2.d_min == 1.0

    @pytest.mark.parametrize("d", [
        [[0, 1], [2, 0]],            # asymmetric
        [[1, 1], [1, 0]],            # nonzero diagonal
        [[0, 0], [0, 0]],            # not discrete
        [[0, 1, 5], [1, 0, 1], [5, 1, 0]],   # triangle inequality
    ])
    def test_rejects_bad_metric(self, d):
        with pytest.raises(InputError):
            FiniteMetricSpace(tuple(range(len(d))), d)

    def test_product_uses_max_metric(self):
        A = FiniteMetricSpace(("x", "y"), [[0, 0.3], [0.3, 0]])
        B = FiniteMetricSpace(("u", "v"), [[0, 0.7], [0.7, 0]])
        AB = A.product(B)
        i, j = AB.index(("x", "u")), AB.index(("y", "v"))
        assert AB.dist[i, j] == 0.7
        assert AB.dist[i, AB.index(("y", "u"))] == 0.3


class TestDist:
    def test_sum_checked(self):
        with pytest.raises(InputError):
            Dist(S2, [0.5, 0.6])

    def test_immutable(self):
        p = Dist(S2, [0.5, 0.5])
        with pytest.raises(ValueError):
            p.weights[0] = 1.0


class TestEmpirical:
    def test_counts(self):
        assert np.allclose(empirical(["s1", "s1", "s2"], S2).weights, [2 / 3, 1 / 3])

    def test_singleton_is_dirac(self):
        assert empirical(["s1"], S2) == Dist.dirac(S2, "s1")

    def test_unknown_label(self):
        with pytest.raises(InputError):
            empirical(["zz"], S2)

    def test_empty(self):
        with pytest.raises(InputError):
            empirical([], S2)

    def test_large_sample_close(self):
        # DKW: P(sup gap > e) <= 2 exp(-2 n e^2) ~ 2e-22 for n=10^4, e=0.05
        rng = np.random.default_rng(0)
        p = Dist(S2, [0.3, 0.7])
        hits = 0
        for _ in range(1000):
            draws = rng.choice(2, size=10_000, p=p.weights)
            hits += prohorov(Dist(S2, np.bincount(draws, minlength=2) / 10_000), p).value < 0.05
        assert hits >= 990


class TestProductPush:
    def test_deterministic_kernel(self):
        k = PolicyKernel.deterministic(S2, X2, [0, 1])
        j = product(Dist(S2, [0.5, 0.5]), k)
        assert np.array_equal(j.weights, [[0.5, 0], [0, 0.5]])

    def test_dirac_marginal(self):
        k = PolicyKernel(S2, X2, [[0.3, 0.7], [0.9, 0.1]])
        j = product(Dist.dirac(S2, "s1"), k)
        assert np.array_equal(j.weights, [[0.3, 0.7], [0, 0]])

    def test_oracle(self):
        k = PolicyKernel(S2, X2, [[0.5, 0.5], [0.2, 0.8]])
        p = Dist(S2, [0.25, 0.75])
        assert np.allclose(product(p, k).weights, [[0.125, 0.125], [0.15, 0.6]], atol=1e-15)
        assert np.allclose(push(p, k).weights, [0.275, 0.725], atol=1e-15)

    def test_state_independent_push(self):
        k = PolicyKernel(S2, X2, [[0.3, 0.7], [0.3, 0.7]])
        assert np.allclose(push(Dist(S2, [0.5, 0.5]), k).weights, [0.3, 0.7])

    def test_push_dirac(self):
        k = PolicyKernel(S2, X2, [[0.3, 0.7], [0.9, 0.1]])
        assert push(Dist.dirac(S2, "s2"), k).allclose(k.row("s2"))

    def test_space_mismatch(self):
        k = PolicyKernel.uniform(X2, S2)
        with pytest.raises(InputError):
            product(Dist.uniform(S2), k)

    def test_marginals(self):
        j = JointDist(S2, X2, [[0.125, 0.125], [0.15, 0.6]])
        assert np.allclose(marginal(j, "row").weights, [0.25, 0.75])
        d = JointDist(S2, X2, np.diag([0.5, 0.5]))
        assert np.array_equal(marginal(d, "row").weights, [0.5, 0.5])
        assert np.array_equal(marginal(d, "col").weights, [0.5, 0.5])

    @settings(max_examples=200, deadline=None)
    @given(prob_vectors(3), prob_vectors(2), prob_vectors(2), prob_vectors(2))
    def test_product_properties(self, p, k0, k1, k2):
        S3 = FiniteMetricSpace(("u", "v", "w"))
        p = Dist(S3, p)
        k = PolicyKernel(S3, X2, [k0, k1, k2])
        j = product(p, k)
        assert np.allclose(marginal(j, "row").weights, p.weights, atol=1e-14, rtol=0)
        assert np.array_equal(push(p, k).weights, marginal(j, "col").weights)


class TestContaminate:
    def test_formula(self):
        out = contaminate("s1", Dist.dirac(S2, "s2"), 2)
        assert np.array_equal(out.weights, [0.5, 0.5])

    def test_absorbing(self):
        assert contaminate("s1", Dist.dirac(S2, "s1"), 2) == Dist.dirac(S2, "s1")

    def test_arithmetic(self):
        out = contaminate("s1", Dist(S2, [2 / 3, 1 / 3]), 4)
        assert np.allclose(out.weights, [0.75, 0.25], atol=1e-15)

    def test_rejects_non_empirical(self):
        with pytest.raises(InputError):
            contaminate("s1", Dist(S2, [0.3, 0.7]), 3)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 12), st.data())
    def test_result_is_n_point_empirical(self, n, data):
        S3 = FiniteMetricSpace(("u", "v", "w"))
        counts = data.draw(st.lists(st.integers(0, n - 1), min_size=3, max_size=3)
                           .filter(lambda c: sum(c) == n - 1))
        a = data.draw(st.sampled_from(S3.labels))
        out = contaminate(a, Dist(S3, np.array(counts) / (n - 1)), n)
        assert abs(out.weights.sum() - 1) < 1e-12
        assert np.allclose(out.weights * n, np.round(out.weights * n), atol=1e-9)


class TestConditionFirst:
    def test_perfect_correlation(self):
        pi = MultiDist(S2, 2, [[0.5, 0], [0, 0.5]])
        assert condition_first(pi, "s1").weights.tolist() == [1.0, 0.0]

    def test_independent(self):
        p = Dist(S2, [0.3, 0.7])
        out = condition_first(MultiDist.power(p, 2), "s2")
        assert np.allclose(out.weights, p.weights)

    def test_oracle(self):
        pi = MultiDist(S2, 2, [[0.2, 0.3], [0.3, 0.2]])
        assert np.allclose(condition_first(pi, "s1").weights, [0.4, 0.6])

    def test_zero_mass(self):
        pi = MultiDist(S2, 2, [[0, 0], [0.5, 0.5]])
        with pytest.raises(DegenerateConditionError):
            condition_first(pi, "s1")

    @settings(max_examples=100, deadline=None)
    @given(prob_vectors(2), prob_vectors(2), st.integers(2, 4))
    def test_product_returns_rest(self, p, q, n):
        p, q = Dist(S2, p), Dist(S2, q)
        w = np.multiply.outer(p.weights, MultiDist.power(q, n - 1).weights)
        pi = MultiDist(S2, n, w)
        for a in S2.labels:
            if p[a] > 0:
                assert np.allclose(condition_first(pi, a).weights, MultiDist.power(q, n - 1).weights, atol=1e-14)


class TestSymmetry:
    def test_product(self):
        assert is_symmetric(MultiDist.power(Dist(S2, [0.3, 0.7]), 3))

    def test_asymmetric(self):
        assert not is_symmetric(MultiDist(S2, 2, [[0, 1], [0, 0]]))

    def test_after_game_step(self):
        from mfbridge.exact import multistate_distribution
        from mfbridge.presets import tiny_game
        g = tiny_game()
        chi = PolicyKernel(g.S, g.X, [[0.3, 0.7], [0.6, 0.4]])
        pi = multistate_distribution(g, 3, 2, None, [chi, chi])
        assert is_symmetric(pi, 1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.01, 1), min_size=8, max_size=8), st.permutations(range(3)))
    def test_invariant_to_coordinate_order(self, w, perm):
        arr = np.array(w).reshape(2, 2, 2)
        arr /= arr.sum()
        a = MultiDist(S2, 3, arr)
        b = MultiDist(S2, 3, np.transpose(arr, perm))
        assert is_symmetric(a) == is_symmetric(b)

    def test_cap(self):
        big = FiniteMetricSpace(tuple(range(10)))
        with pytest.raises(CapacityError):
            MultiDist.power(Dist.uniform(big), 8)
