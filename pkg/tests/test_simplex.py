import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from robustgrowth.errors import BoundaryError, InvalidInput, InvalidParameter
from robustgrowth.simplex import (
    EPS_FLOOR, TangentVector, as_point, canonical, grad_fd, project_to_simplex, rank,
    sample_dirichlet, tangent_equal,
)


def brute_projection(y):
    """Projection by enumerating supports and solving the KKT system on each."""
    d = y.size
    best, best_dist = None, np.inf
    for mask in range(1, 2**d):
        s = np.array([(mask >> i) & 1 for i in range(d)], dtype=bool)
        tau = (y[s].sum() - 1) / s.sum()
        p = np.where(s, y - tau, 0.0)
        if np.all(p >= -1e-15):
            dist = np.sum((p - y) ** 2)
            if dist < best_dist:
                best, best_dist = np.maximum(p, 0), dist
    return best


class TestProjection:
    def test_symmetric_excess(self):
        np.testing.assert_allclose(project_to_simplex([0.6, 0.6]), [0.5, 0.5], atol=1e-15)

    def test_identity_on_simplex(self):
        np.testing.assert_allclose(project_to_simplex([0.2, 0.5, 0.3]), [0.2, 0.5, 0.3], atol=1e-15)

    def test_floor_at_boundary(self):
        p = project_to_simplex([1.2, -0.2])
        np.testing.assert_allclose(p, [1 - 1e-10, 1e-10], rtol=0, atol=1e-16)
        assert p.sum() == pytest.approx(1.0, abs=1e-15)

    def test_non_finite(self):
        with pytest.raises(InvalidInput):
            project_to_simplex([np.nan, 1.0])

    @settings(max_examples=200, deadline=None)
    @given(arrays(float, st.integers(2, 6), elements=st.floats(-3, 3)))
    def test_matches_kkt_enumeration(self, y):
        p = project_to_simplex(y)
        ref = brute_projection(y)
        assert np.all(p >= EPS_FLOOR)
        assert abs(p.sum() - 1) < 1e-12
        np.testing.assert_allclose(p, ref, atol=1e-9 * max(1, y.size))

    @settings(max_examples=200, deadline=None)
    @given(arrays(float, 4, elements=st.floats(1e-3, 1)), arrays(float, 4, elements=st.floats(1e-3, 1)))
    def test_idempotent_and_nonexpansive(self, a, b):
        x, y = a / a.sum(), b / b.sum()
        np.testing.assert_allclose(project_to_simplex(x), x, atol=1e-15)
        u, v = x + 0.3 * (a - 0.5), y + 0.3 * (b - 0.5)
        assert np.linalg.norm(project_to_simplex(u) - project_to_simplex(v)) <= np.linalg.norm(u - v) + 1e-9

    def test_batched(self):
        y = np.array([[0.6, 0.6], [1.2, -0.2]])
        np.testing.assert_allclose(project_to_simplex(y)[0], [0.5, 0.5])


class TestRank:
    def test_examples(self):
        r = rank([0.2, 0.5, 0.3])
        np.testing.assert_array_equal(r.sorted, [0.5, 0.3, 0.2])
        np.testing.assert_array_equal(r.perm + 1, [2, 3, 1])
        np.testing.assert_array_equal(rank([1 / 3, 1 / 3, 1 / 3]).perm + 1, [1, 2, 3])
        r = rank([0.1, 0.1, 0.8])
        np.testing.assert_array_equal(r.sorted, [0.8, 0.1, 0.1])
        np.testing.assert_array_equal(r.perm + 1, [3, 1, 2])

    @given(arrays(float, st.integers(1, 8), elements=st.sampled_from([0.1, 0.2, 0.3, 0.25])))
    def test_inverse_perm(self, x):
        r = rank(x)
        assert np.all(np.diff(r.sorted) <= 0)
        back = np.empty_like(x)
        back[r.perm] = r.sorted
        np.testing.assert_array_equal(back, x)
        # ties broken by lowest index
        for k in range(x.size - 1):
            if r.sorted[k] == r.sorted[k + 1]:
                assert r.perm[k] < r.perm[k + 1]


class TestDirichlet:
    def test_uniform_mean(self):
        d = 4
        x = sample_dirichlet(np.ones(d), 10**5, seed=3)
        se = x.std(axis=0) / np.sqrt(x.shape[0])
        assert np.all(np.abs(x.mean(axis=0) - 1 / d) < 3 * se)

    def test_symmetric_variance(self):
        d, a, n = 3, 2.5, 10**5
        x = sample_dirichlet(np.full(d, a), n, seed=5)
        var_ref = (d - 1) / (d**2 * (a * d + 1))
        # independent sampler: Beta marginal from scipy
        beta = stats.beta(a, (d - 1) * a).rvs(size=n, random_state=11)
        for v in (x[:, 0], beta):
            dev = (v - v.mean()) ** 2
            assert abs(dev.mean() - var_ref) < 3 * dev.std() / np.sqrt(n)

    def test_ks_marginal(self):
        alpha = np.array([0.7, 2.0, 3.5])
        x = sample_dirichlet(alpha, 10**4, seed=9)
        res = stats.kstest(x[:, 0], stats.beta(alpha[0], alpha.sum() - alpha[0]).cdf)
        assert res.statistic < 1.628 / np.sqrt(10**4)

    def test_small_shape_stays_interior(self):
        x = sample_dirichlet(np.full(5, 0.02), 2000, seed=1)
        assert np.all(x >= EPS_FLOOR)
        np.testing.assert_allclose(x.sum(axis=1), 1, atol=1e-12)

    def test_deterministic_and_block_independent(self):
        a = sample_dirichlet([1.0, 2.0], 10000, seed=42)
        b = sample_dirichlet([1.0, 2.0], 10000, seed=42)
        np.testing.assert_array_equal(a, b)
        c = sample_dirichlet([1.0, 2.0], 5000, seed=42)
        np.testing.assert_array_equal(a[:4096], c[:4096])

    def test_bad_alpha(self):
        with pytest.raises(InvalidParameter):
            sample_dirichlet([1.0, 0.0], 10, seed=0)


class TestGradFd:
    def test_constant(self):
        np.testing.assert_allclose(grad_fd(lambda x: np.ones(len(x)), [0.3, 0.7]), 0, atol=1e-12)

    def test_linear(self):
        g = grad_fd(lambda x: x[:, 0], [0.2, 0.3, 0.5])
        assert tangent_equal(g, [1, 0, 0], atol=1e-8)

    def test_log(self):
        g = grad_fd(lambda x: np.log(x[:, 0]), [0.5, 0.5])
        assert tangent_equal(g, [2, 0], atol=1e-6)
        assert g[-1] == 0

    def test_quadratic_exact(self):
        A = np.array([[2.0, 0.5, 0.1], [0.5, 1.0, 0.3], [0.1, 0.3, 3.0]])
        x = np.array([0.2, 0.3, 0.5])
        g = grad_fd(lambda y: 0.5 * np.einsum("ni,ij,nj->n", y, A, y), x, h=1e-3)
        assert tangent_equal(g, A @ x, atol=1e-9)

    def test_second_order_ratio(self):
        # central differences are exact on quadratics, so the rate is measured on a smooth non-polynomial
        f = lambda y: np.exp(y[:, 0]) * np.sin(3 * y[:, 1]) + np.log(y[:, 2])  # noqa: E731
        x = np.array([0.3, 0.3, 0.4])
        exact = np.array([np.exp(x[0]) * np.sin(3 * x[1]), 3 * np.exp(x[0]) * np.cos(3 * x[1]), 1 / x[2]])
        errs = [np.abs(canonical(grad_fd(f, x, h)) - canonical(exact)).max() for h in (1e-2, 5e-3)]
        assert 3 <= errs[0] / errs[1] <= 5

    def test_boundary(self):
        with pytest.raises(BoundaryError):
            grad_fd(lambda x: x[:, 0], [1e-9, 1 - 1e-9], h=1e-6)


def test_tangent_vector_equality():
    v = TangentVector(np.array([1.0, 2.0, 3.0]))
    assert v.equals(np.array([11.0, 12.0, 13.0]))
    assert not v.equals(np.array([1.0, 2.0, 4.0]))
    np.testing.assert_allclose(v.canonical(), [-1, 0, 1])


def test_as_point():
    np.testing.assert_allclose(as_point([1, 3]), [0.25, 0.75])
    with pytest.raises(InvalidInput):
        as_point([0.5, 0.0])
