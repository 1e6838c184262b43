import warnings

import numpy as np
import pytest
from scipy import stats

from robustgrowth import model as mdl
from robustgrowth import portfolio as pf
from robustgrowth import sim
from robustgrowth.errors import InvalidInput, InvalidParameter, StepSizeWarning


def coarsen(Z):
    return (Z[0::2] + Z[1::2]) / np.sqrt(2)


class TestConfig:
    def test_invalid(self):
        with pytest.raises(InvalidParameter):
            sim.SimConfig(dt=0.0, T=1.0)
        with pytest.raises(InvalidParameter):
            sim.SimConfig(dt=0.1, T=0.01)
        with pytest.raises(InvalidParameter):
            sim.SimConfig(dt=0.1, T=1.0, scheme="milstein")

    def test_noise_shape(self, dir2):
        with pytest.raises(InvalidInput):
            sim.simulate(dir2, [0.5, 0.5], sim.SimConfig(dt=0.1, T=1.0), noise=np.zeros((3, 2)))


class TestPaths:
    def test_zero_noise_step(self):
        m = mdl.vol_stabilized(2.0, 2, 0.1)
        cfg = sim.SimConfig(dt=0.01, T=0.01)
        p = sim.simulate_weights(m, [0.8, 0.2], cfg, noise=np.zeros((1, 2)))
        assert p.x[-1, 0] == pytest.approx(0.7994, abs=1e-14)

    @pytest.mark.parametrize("name", ["dirichlet", "vol_stab", "gen_vol_stab"])
    def test_barycenter_fixed_point(self, name):
        m = {"dirichlet": mdl.dirichlet(3.0, 1.5, d=3, sigma2=0.2),
             "vol_stab": mdl.vol_stabilized(2.0, 4, 0.1),
             "gen_vol_stab": mdl.gen_vol_stab(3.0, 0.4, d=3, sigma2=0.2)}[name]
        cfg = sim.SimConfig(dt=0.01, T=1.0)
        p = sim.simulate_weights(m, np.full(m.d, 1 / m.d), cfg, noise=np.zeros((cfg.n_steps, m.d)))
        np.testing.assert_allclose(p.x, 1 / m.d, atol=1e-14)

    def test_zero_noise_follows_ode(self):
        m = mdl.vol_stabilized(2.0, 2, 0.1)
        cfg = sim.SimConfig(dt=1e-3, T=5.0)
        p = sim.simulate_weights(m, [0.8, 0.2], cfg, noise=np.zeros((cfg.n_steps, 2)))
        exact = 0.5 + 0.3 * np.exp(-0.2 * p.times)
        assert np.abs(p.x[:, 0] - exact).max() < 1e-3 * 0.3

    @pytest.mark.parametrize("name", ["dirichlet", "gen_vol_stab", "logit_normal"])
    def test_states_in_open_simplex(self, presets, name):
        m = presets[name]
        p = sim.simulate_weights(m, np.full(m.d, 1 / m.d), sim.SimConfig(dt=1e-2, T=200.0, seed=3))
        assert np.all(p.x > 0)
        assert np.abs(p.x.sum(axis=1) - 1).max() < 1e-12

    def test_deterministic_and_chunk_invariant(self, presets):
        m = presets["dirichlet"]
        a = sim.simulate_weights(m, [0.3, 0.3, 0.4], sim.SimConfig(dt=1e-2, T=50.0, seed=9))
        b = sim.simulate_weights(m, [0.3, 0.3, 0.4], sim.SimConfig(dt=1e-2, T=50.0, seed=9))
        np.testing.assert_array_equal(a.x, b.x)
        Z = np.random.default_rng(1).standard_normal((5000, 3))
        c = sim.simulate_weights(m, [0.3, 0.3, 0.4], sim.SimConfig(dt=1e-2, T=50.0, chunk_steps=777), noise=Z)
        d = sim.simulate_weights(m, [0.3, 0.3, 0.4], sim.SimConfig(dt=1e-2, T=50.0), noise=Z)
        np.testing.assert_array_equal(c.x, d.x)

    def test_record_stride(self, dir2):
        full = sim.simulate_weights(dir2, [0.4, 0.6], sim.SimConfig(dt=0.01, T=10.0, seed=2))
        thin = sim.simulate_weights(dir2, [0.4, 0.6], sim.SimConfig(dt=0.01, T=10.0, seed=2, record_stride=7))
        np.testing.assert_array_equal(thin.x[:-1], full.x[::7])
        np.testing.assert_array_equal(thin.x[-1], full.x[-1])

    def test_python_fallback_matches_kernel(self, presets):
        m = presets["dirichlet"]
        slow = mdl.ModelInputs(d=m.d, density=m.density, covariance_fn=m.covariance_fn, log_phi=m.log_phi,
                               grad_log_phi=m.grad_log_phi, hess_log_phi=m.hess_log_phi)
        cfg = sim.SimConfig(dt=1e-2, T=2.0, seed=4)
        a = sim.simulate_weights(m, [0.3, 0.3, 0.4], cfg)
        b = sim.simulate_weights(slow, [0.3, 0.3, 0.4], cfg)
        np.testing.assert_allclose(a.x, b.x, atol=1e-12)


class TestErgodic:
    @pytest.fixture(scope="class")
    @classmethod
    def long_path(cls):
        m = mdl.dirichlet(3.0, 1.0, sigma2=0.1, d=2)
        return sim.simulate_weights(m, [0.5, 0.5], sim.SimConfig(dt=1e-2, T=1e4, seed=11))

    def test_occupation_mean(self, long_path):
        est, se = sim.time_average(long_path.x[:, 0])
        assert abs(est - 0.5) < 3 * se

    def test_indicator(self, long_path):
        # asymmetric test set so the answer is not fixed by symmetry
        est, se = sim.time_average((long_path.x[:, 0] > 0.7).astype(float))
        ref = stats.beta(3, 3).sf(0.7)
        assert abs(est - ref) < 3 * se

    def test_asymmetric_mean(self):
        a = np.array([2.0, 4.0])
        m = mdl.dirichlet(a, 1.0, sigma2=0.2)
        p = sim.simulate_weights(m, [0.5, 0.5], sim.SimConfig(dt=1e-2, T=1e4, seed=5))
        est, se = sim.time_average(p.x[:, 0])
        assert abs(est - a[0] / a.sum()) < 3 * se


def test_weak_convergence():
    # coupled paths: the terminal-mean differences between successive dt follow the bias
    a, s2, T = 2.0, 0.1, 10.0
    m = mdl.vol_stabilized(a, 2, s2)
    dts = (0.4, 0.2, 0.1)
    rng = np.random.default_rng(0)
    n = 20000
    X = np.empty((n, 3))
    for p in range(n):
        Z = [rng.standard_normal((int(T / dts[-1]), 2))]
        Z += [coarsen(Z[0])]
        Z += [coarsen(Z[1])]
        for j, dt in enumerate(dts):
            cfg = sim.SimConfig(dt=dt, T=T, record_stride=10**9)
            X[p, j] = sim.simulate(m, [0.9, 0.1], cfg, noise=Z[2 - j], warn=False).path.x[-1, 0]
    d1, d2 = (X[:, 0] - X[:, 1]).mean(), (X[:, 1] - X[:, 2]).mean()
    assert 1.5 <= d1 / d2 <= 3


def test_generated_wealth_decomposition_rate():
    m = mdl.dirichlet(3.0, 1.0, sigma2=0.1, d=2)
    cv = np.array([0.3, 0.2])
    gp = pf.power_generator(cv)

    def minus_lg_over_g(x):
        c = m.covariance_fn(x)
        H = (cv / x)[:, :, None] * (cv / x)[:, None, :]
        i = np.arange(2)
        H[:, i, i] -= cv / x**2
        return -0.5 * np.einsum("nij,nij->n", c, H)

    T, dts = 5.0, (0.02, 0.01, 0.005)
    rng = np.random.default_rng(1)
    err = []
    for _ in range(300):
        Z = [rng.standard_normal((int(round(T / dts[-1])), 2))]
        Z += [coarsen(Z[0])]
        Z += [coarsen(Z[1])]
        row = []
        for j, dt in enumerate(dts):
            r = sim.simulate(m, [0.4, 0.6], sim.SimConfig(dt=dt, T=T), {"g": gp}, noise=Z[2 - j], warn=False)
            x = r.path.x
            log_g = (cv * np.log(x)).sum(axis=1)
            rhs = log_g[-1] - log_g[0] + minus_lg_over_g(x[:-1]).sum() * dt
            row.append(r.wealth["g"].log_V[-1] - rhs if r.path.boundary_hits == 0 else np.nan)
        err.append(row)
    err = np.array(err)
    err = err[~np.isnan(err).any(axis=1)]
    assert err.shape[0] > 250
    ms = (err**2).mean(axis=0)
    # the discrepancy is a quadratic-variation martingale: its mean square is O(dt)
    assert 1.5 <= ms[0] / ms[1] <= 3 and 1.5 <= ms[1] / ms[2] <= 3


class TestWealth:
    @pytest.fixture(scope="class")
    @classmethod
    def result(cls):
        m = mdl.dirichlet([2.5, 3.0, 4.0], 1.0, sigma2=0.2)
        ports = {"market": pf.market_portfolio(), "asset2": pf.single_asset_portfolio(1),
                 "opt": pf.unconstrained_optimum(m), "equal": pf.equal_weight_portfolio(3)}
        r = sim.simulate(m, [0.3, 0.3, 0.4], sim.SimConfig(dt=1e-3, T=500.0, seed=7), ports)
        return m, ports, r

    def test_market_zero(self, result):
        _, _, r = result
        assert np.abs(r.wealth["market"].log_V).max() < 1e-9
        est, se = sim.growth_rate(r.wealth["market"])
        assert abs(est) < 1e-12 and se < 1e-12

    def test_single_asset(self, result):
        _, _, r = result
        x = r.path.x
        np.testing.assert_allclose(r.wealth["asset2"].log_V, np.log(x[:, 1] / x[0, 1]), atol=1e-8)

    def test_log_v_starts_at_zero(self, result):
        _, _, r = result
        for w in r.wealth.values():
            assert w.log_V[0] == 0 and np.all(np.isfinite(w.log_V))

    def test_integrate_wealth_matches_inline(self, result):
        m, ports, r = result
        p = sim.simulate_weights(m, [0.3, 0.3, 0.4], sim.SimConfig(dt=1e-3, T=20.0, seed=7))
        w = sim.integrate_wealth(m, p, ports["opt"])
        np.testing.assert_allclose(w.log_V, r.wealth["opt"].log_V[: w.log_V.size], atol=1e-9)

    def test_growth_matches_lambda_mc(self, result):
        m, ports, r = result
        for name in ("opt", "equal"):
            est, se = sim.growth_rate(r.wealth[name])
            rep = pf.lambda_mc(m, ports[name], n=10**5, seed=3)
            assert abs(est - rep.lambda_mc) < 4 * np.hypot(se, rep.stderr), name

    def test_guard_warning(self):
        class Wild:
            def weights(self, x):
                return np.tile([40.0, -39.0], (x.shape[0], 1))

        m = mdl.dirichlet(3.0, 1.0, sigma2=1.0, d=2)
        with pytest.warns(StepSizeWarning):
            r = sim.simulate(m, [0.5, 0.5], sim.SimConfig(dt=0.05, T=50.0, seed=1), {"wild": Wild()})
        assert r.guard_trips["wild"] > 0
        assert np.all(np.isfinite(r.wealth["wild"].log_V))

    def test_no_warning_for_market(self, dir2):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            sim.simulate(dir2, [0.5, 0.5], sim.SimConfig(dt=1e-2, T=10.0), {"m": pf.market_portfolio()})


class TestCapitalCurve:
    def test_decreasing_and_normalized(self):
        cc = sim.capital_distribution_curve(1.0, 500, n_draws=200, seed=1)
        assert np.all(np.diff(cc.mean) < 0)
        assert cc.mean.sum() == pytest.approx(1.0, abs=1e-12)
        assert len(list(cc.rows())) == 500

    def test_concentration(self):
        hi = sim.capital_distribution_curve(2.0, 500, n_draws=1000, seed=2).mean[0]
        lo = sim.capital_distribution_curve(0.5, 500, n_draws=1000, seed=2).mean[0]
        assert hi < lo

    def test_quantiles_ordered(self):
        cc = sim.capital_distribution_curve(1.0, 50, n_draws=500, seed=3)
        assert np.all(cc.quantiles[0.05] <= cc.quantiles[0.5])
        assert np.all(cc.quantiles[0.5] <= cc.quantiles[0.95])
