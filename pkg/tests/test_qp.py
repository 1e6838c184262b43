import itertools

import numpy as np
import pytest
from scipy import stats

from robustgrowth import model as mdl
from robustgrowth import portfolio as pf
from robustgrowth import qp
from robustgrowth.errors import InvalidParameter
from robustgrowth.simplex import canonical, sample_dirichlet, tangent_equal


def kkt_enumeration(Q, r):
    """Exact minimum of 1/2 mu'Q mu - mu'r on the simplex by enumerating supports."""
    M = r.size
    best = np.inf
    for k in range(1, M + 1):
        for S in itertools.combinations(range(M), k):
            S = list(S)
            A = np.zeros((k + 1, k + 1))
            A[:k, :k] = Q[np.ix_(S, S)]
            A[:k, k] = 1
            A[k, :k] = 1
            rhs = np.append(r[S], 1.0)
            sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
            mu = np.zeros(M)
            mu[S] = sol[:k]
            if np.all(mu >= -1e-12) and abs(mu.sum() - 1) < 1e-9:
                mu = np.maximum(mu, 0)
                mu /= mu.sum()
                best = min(best, 0.5 * mu @ Q @ mu - mu @ r)
    return best


def grid_min(Q, r, step=1e-3):
    n = int(round(1 / step))
    M = r.size
    if M == 1:
        return 0.5 * Q[0, 0] - r[0]
    if M == 2:
        t = np.linspace(0, 1, n + 1)
        mu = np.stack([t, 1 - t], axis=1)
    else:
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = i + j <= n
        mu = np.stack([i[keep], j[keep], n - i[keep] - j[keep]], axis=1) / n
    return float((0.5 * np.einsum("ni,ij,nj->n", mu, Q, mu) - mu @ r).min())


def random_qp(M, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(M, M))
    return A @ A.T / M, rng.normal(size=M)


class TestFamily:
    def test_rows_sum_to_d(self):
        fam = qp.generate_family(5, 7, 3, seed=1)
        np.testing.assert_allclose(fam.w.sum(axis=2), 3.0)
        assert np.all(fam.w > 0)

    def test_all_ones(self):
        fam = qp.LogAffineFamily(np.ones((1, 1, 3)))
        x = sample_dirichlet(np.ones(3), 10, 0)
        np.testing.assert_allclose(fam.phi(x), 0, atol=1e-15)
        assert tangent_equal(qp.supergradient(fam, 0, x[0]), np.zeros(3))

    def test_ks_uniform(self):
        fam = qp.generate_family(200, 50, 3, seed=7)
        u = (fam.w / 3).reshape(-1, 3)[:, 0]
        assert stats.kstest(u, stats.beta(1, 2).cdf).pvalue > 0.01

    def test_deterministic_and_nested(self):
        a = qp.generate_family(10, 4, 3, seed=5)
        b = qp.generate_family(20, 4, 3, seed=5)
        np.testing.assert_array_equal(a.w, b.w[:10])
        np.testing.assert_array_equal(a.w, qp.generate_family(10, 4, 3, seed=5).w)

    def test_supergradient_example(self):
        fam = qp.LogAffineFamily(np.array([[[2.0, 1.0], [1.0, 2.0]]]))
        np.testing.assert_allclose(qp.supergradient(fam, 0, [0.6, 0.4]), np.array([1.0, 2.0]) / 1.4)

    def test_supergradient_single_plane(self):
        w = np.array([[[0.5, 1.0, 1.5]]])
        x = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(qp.supergradient(qp.LogAffineFamily(w), 0, x), w[0, 0] / (w[0, 0] @ x))

    def test_tie_lowest_index(self):
        fam = qp.LogAffineFamily(np.array([[[2.0, 1.0], [1.0, 2.0]]]))
        np.testing.assert_allclose(qp.supergradient(fam, 0, [0.5, 0.5]), [2.0 / 1.5, 1.0 / 1.5])

    def test_invalid(self):
        with pytest.raises(InvalidParameter):
            qp.LogAffineFamily(np.array([[[1.0, 0.0]]]))


class TestAssembly:
    def test_zero_row_for_constant_generator(self, presets):
        m = presets["dirichlet"]
        fam = qp.LogAffineFamily(np.ones((1, 1, 3))).append(qp.generate_family(3, 5, 3, seed=2))
        prob = qp.assemble_qp(m, fam, n=500, seed=1)
        assert np.all(prob.Q[0] == 0) and np.all(prob.Q[:, 0] == 0) and prob.r[0] == 0

    def test_duplicate_rows(self, presets):
        m = presets["dirichlet"]
        base = qp.generate_family(3, 5, 3, seed=2)
        fam = base.append(qp.LogAffineFamily(base.w[:1]))
        prob = qp.assemble_qp(m, fam, n=300, seed=1)
        np.testing.assert_allclose(prob.Q[0], prob.Q[3], rtol=1e-12)
        assert prob.r[0] == pytest.approx(prob.r[3], rel=1e-12)

    def test_single_sample(self, dir2):
        fam = qp.generate_family(4, 6, 2, seed=3)
        prob = qp.assemble_qp(dir2, fam, n=1, seed=9)
        s = int(np.random.SeedSequence(9).spawn(1)[0].generate_state(1)[0])
        x, _ = dir2.density.sample(1, s, 2)
        G = canonical(fam.supergradients(x))[0]
        c = mdl.covariance(dir2, x[0])
        np.testing.assert_allclose(prob.Q, 2 * G @ c @ G.T, atol=1e-12)
        np.testing.assert_allclose(prob.r, 2 * G @ c @ canonical(mdl.ell(dir2, x[0])), atol=1e-12)

    def test_psd_symmetric_and_thread_invariant(self, presets):
        m = presets["gen_vol_stab"]
        fam = qp.generate_family(8, 10, 4, seed=4)
        a = qp.assemble_qp(m, fam, n=1000, seed=3, threads=1)
        b = qp.assemble_qp(m, fam, n=1000, seed=3, threads=4)
        np.testing.assert_array_equal(a.Q, b.Q)
        np.testing.assert_array_equal(a.r, b.r)
        np.testing.assert_array_equal(a.Q, a.Q.T)
        assert np.linalg.eigvalsh(a.Q).min() >= -1e-9

    def test_importance_sampled(self, presets):
        m = presets["logit_normal"]
        prob = qp.assemble_qp(m, qp.generate_family(4, 5, 3, seed=1), n=1000, seed=2)
        assert np.all(np.isfinite(prob.Q)) and np.isfinite(prob.C)


class TestSolver:
    def test_single(self):
        sol = qp.solve_qp(np.array([[3.0]]), r=np.array([1.0]))
        np.testing.assert_array_equal(sol.mu_hat, [1.0])

    def test_hand_example(self):
        sol = qp.solve_qp(np.diag([1.0, 2.0]), r=np.array([1.0, 1.0]))
        np.testing.assert_allclose(sol.mu_hat, [2 / 3, 1 / 3], atol=1e-8)
        assert sol.objective == pytest.approx(-2 / 3, abs=1e-12)
        assert sol.converged and sol.fw_gap <= 1e-8

    def test_identity(self):
        M = 5
        sol = qp.solve_qp(np.eye(M), r=np.zeros(M))
        np.testing.assert_allclose(sol.mu_hat, 1 / M, atol=1e-12)
        assert sol.objective == pytest.approx(1 / (2 * M))

    @pytest.mark.parametrize("M", [1, 2, 3])
    @pytest.mark.parametrize("seed", range(5))
    def test_grid_oracle(self, M, seed):
        Q, r = random_qp(M, seed)
        sol = qp.solve_qp(Q, r=r)
        assert sol.objective <= grid_min(Q, r) + 1e-5
        assert abs(sol.objective - grid_min(Q, r)) < 1e-5 + 2e-3 * np.abs(Q).max()

    @pytest.mark.parametrize("M", [2, 4, 6])
    @pytest.mark.parametrize("seed", range(10))
    def test_kkt_oracle(self, M, seed):
        Q, r = random_qp(M, seed)
        sol = qp.solve_qp(Q, r=r)
        assert abs(sol.objective - kkt_enumeration(Q, r)) < 1e-5

    @pytest.mark.parametrize("seed", range(5))
    def test_monotone_and_feasible(self, seed):
        Q, r = random_qp(12, seed)
        Q[0] = Q[:, 0] = 0  # rank-deficient, like a constant generator
        sol = qp.solve_qp(Q, r=r)
        assert np.all(np.diff(sol.history) <= 1e-15)
        assert sol.mu_hat.min() >= 0 and abs(sol.mu_hat.sum() - 1) < 1e-12

    def test_max_iter_flag(self):
        Q, r = random_qp(10, 1)
        sol = qp.solve_qp(Q, r=r, tol=1e-300, max_iter=3)
        assert not sol.converged and sol.iterations == 3


class TestQpPortfolio:
    def test_market(self):
        fam = qp.LogAffineFamily(np.ones((1, 1, 3))).append(qp.generate_family(2, 3, 3, seed=0))
        gp = qp.qp_portfolio(None, fam, np.array([1.0, 0.0, 0.0]))
        x = sample_dirichlet(np.ones(3), 100, 1)
        np.testing.assert_allclose(gp.weights(x), x, atol=1e-14)

    @pytest.mark.parametrize("seed", range(3))
    def test_long_only(self, seed):
        d = 3 + seed
        fam = qp.generate_family(20, 30, d, seed=seed)
        mu = np.random.default_rng(seed).dirichlet(np.ones(20))
        gp = qp.qp_portfolio(None, fam, mu)
        x = sample_dirichlet(np.full(d, 0.5), 10**5, seed)
        w = gp.weights(x)
        assert w.min() >= -1e-12
        np.testing.assert_allclose(w.sum(axis=1), 1, atol=1e-12)

    def test_scaling(self):
        fam = qp.generate_family(10, 20, 3, seed=1)
        p1 = qp.assemble_qp(mdl.dirichlet(3.0, d=3, sigma2=0.1), fam, n=500, seed=4)
        p3 = qp.assemble_qp(mdl.dirichlet(3.0, d=3, sigma2=0.3), fam, n=500, seed=4)
        np.testing.assert_allclose(p3.Q, 3 * p1.Q, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(p3.r, 3 * p1.r, rtol=1e-10, atol=1e-14)
        s1, s3 = qp.solve_qp(p1, tol=1e-10), qp.solve_qp(p3, tol=1e-10)
        assert abs(s3.objective - 3 * s1.objective) <= 3e-10
        assert abs(p3.objective(s1.mu_hat) - s3.objective) <= 3e-10

    def test_refinement_monotone(self, dir2):
        def per_sample(fam, mu, seed, n):
            x, _ = dir2.density.sample(n, seed, 2)
            g = canonical(np.einsum("m,nmd->nd", mu, fam.supergradients(x)))
            lc = canonical(mdl.ell(dir2, x))
            c = dir2.covariance_fn(x)
            return np.einsum("ni,nij,nj->n", g - lc, c, g - lc)

        n = 2000
        fails = 0
        for s in range(10):
            small = qp.generate_family(10, 20, 2, seed=s)
            big = small.append(qp.generate_family(10, 20, 2, seed=1000 + s))
            o = []
            for fam, aseed in ((small, 2 * s + 1), (big, 2 * s + 2)):
                sol = qp.solve_qp(qp.assemble_qp(dir2, fam, n=n, seed=aseed))
                v = per_sample(fam, sol.mu_hat, 5000 + aseed, n)
                o.append((v.mean(), v.std(ddof=1) / np.sqrt(n)))
            fails += o[1][0] > o[0][0] + 3 * np.hypot(o[0][1], o[1][1])
        assert fails == 0

    @pytest.mark.xfail(strict=True, reason="every log-affine hyperplane passes through the barycenter, "
                                           "so the mixture is a step at x = 1/2 (see decisions ledger)")
    def test_weight_curve_close_to_two_asset_optimum(self, dir2):
        sol2 = pf.solve_two_asset_long_only(dir2)
        x = np.linspace(0.01, 0.99, 981)
        keep = (np.abs(x - 0.25) > 0.05) & (np.abs(x - 0.75) > 0.05)
        pts = np.stack([x[keep], 1 - x[keep]], axis=1)
        best = np.inf
        for s in range(5):
            gp = qp.run_qp(dir2, M=25, K=100, N=100, seed=s, n_lambda=1000)[3]
            best = min(best, np.abs(gp.weights(pts)[:, 0] - sol2.pi1(x[keep])).max())
        assert best <= 0.1


def test_barycenter_kink():
    fam = qp.generate_family(30, 50, 3, seed=2)
    np.testing.assert_allclose(fam.phi(np.full(3, 1 / 3)), 0, atol=1e-14)
    spread = qp.generate_family(30, 50, 3, seed=2, scale_spread=1.0)
    assert np.abs(spread.phi(np.full(3, 1 / 3))).max() > 0.1
    np.testing.assert_array_equal(qp.generate_family(30, 50, 3, seed=2, scale_spread=0.0).w, fam.w)


def test_scaled_family_reaches_two_asset_optimum(dir2):
    lam_long = pf.solve_two_asset_long_only(dir2).lambda_long
    rep = qp.run_qp(dir2, M=200, K=200, N=10**4, seed=0, n_lambda=10**5, scale_spread=1.0)[4]
    assert abs(rep.lambda_mc - lam_long) <= 0.05 * lam_long


class TestLambdaE:
    def test_market_zero(self, dir2):
        gp = pf.market_portfolio()
        assert qp.lambda_E_estimate(dir2, gp, n=1000).lambda_mc == 0.0

    def test_ordering(self, dir2):
        fam, prob, sol, gp, rep = qp.run_qp(dir2, M=25, K=100, N=100, seed=0, n_lambda=10**5)
        assert 0 <= rep.lambda_mc <= 0.1125 + 3 * rep.stderr
        assert sol.lambda_E_estimate == rep.lambda_mc
        assert rep.lower_bound is not None

    def test_bundle_roundtrip(self, dir2, tmp_path):
        import json

        fam, prob, sol, gp, rep = qp.run_qp(dir2, M=5, K=10, N=50, seed=1, n_lambda=1000)
        path = tmp_path / "b.json"
        path.write_text(json.dumps(qp.bundle_dict(fam, prob, sol, rep)))
        fam2, mu, data = qp.load_bundle(path)
        np.testing.assert_array_equal(fam2.w, fam.w)
        np.testing.assert_array_equal(mu, sol.mu_hat)
        assert data["in_sample_lambda"] == pytest.approx(-0.5 * sol.objective)
