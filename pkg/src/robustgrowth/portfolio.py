"""Functionally generated portfolios, closed-form optima and growth-rate estimators."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy import integrate, optimize
from scipy.special import gammaln

from . import model as mdl
from .errors import InvalidInput, InvalidParameter, NotGradientError, NumericalError
from .simplex import ambient_grad_fd, barycenter, canonical, sample_dirichlet
from .stats import weighted_mean_se

Array = NDArray[np.float64]


def _batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


@dataclass(frozen=True)
class GeneratedPortfolio:
    """Portfolio generated by ``G = exp(phi)`` through the master formula.

    Parameters
    ----------
    log_G : callable
        ``phi(x)`` for points ``(n, d) -> (n,)``.
    grad_log_G : callable, optional
        Ambient gradient ``(n, d) -> (n, d)``; any representative modulo the
        all-ones vector.  Central differences are used when omitted.
    hess_log_G : callable, optional
        Ambient Hessian ``(n, d) -> (n, d, d)``, needed for the drift term
        ``-LG/G``.
    smooth : bool
        False for generators with kinks (e.g. minima of log-affine functions).
    concave_flag : {"yes", "no", "unknown"}
        Whether ``G`` is known to be concave (long-only portfolio).
    """

    log_G: Callable[[Array], Array]
    grad_log_G: Callable[[Array], Array] | None = None
    hess_log_G: Callable[[Array], Array] | None = None
    name: str = "generated"
    smooth: bool = True
    concave_flag: str = "unknown"

    def gradient(self, x) -> Array:
        xb, single = _batch(x)
        if self.grad_log_G is not None:
            g = self.grad_log_G(xb)
        else:
            g = ambient_grad_fd(self.log_G, xb, 1e-6 * xb.min())
        return g[0] if single else g

    def hessian(self, x) -> Array:
        xb, single = _batch(x)
        if self.hess_log_G is not None:
            h = self.hess_log_G(xb)
        else:
            h = mdl._jacobian_fd(lambda y: self.gradient(y), xb, 1e-5 * xb.min())
        return h[0] if single else h

    def weights(self, x) -> Array:
        return master_formula_weights(self, x)


def master_formula_weights(gp, x) -> Array:
    """Weights ``pi_i = x_i (d_i phi + 1 - sum_j x_j d_j phi)``.

    Parameters
    ----------
    gp : GeneratedPortfolio or callable
        A generated portfolio, or directly a gradient field ``(n, d) -> (n, d)``.
    x : array_like, shape (d,) or (n, d)

    Returns
    -------
    ndarray
        Weights with the shape of ``x``; they sum to 1 up to rounding.
    """
    xb, single = _batch(x)
    g = gp.gradient(xb) if isinstance(gp, GeneratedPortfolio) else np.asarray(gp(xb), dtype=float)
    g = canonical(g)
    pi = xb * (g + 1.0 - (xb * g).sum(axis=1, keepdims=True))
    # large gradients amplify the rounding of sum(x); push the residual back along x
    # (the target is sum(x), so the market portfolio stays exactly pi = x)
    sx = xb.sum(axis=1, keepdims=True)
    pi += xb * ((sx - pi.sum(axis=1, keepdims=True)) / sx)
    return pi[0] if single else pi


def _const_zero(x):
    return np.zeros(x.shape[0])


def market_portfolio() -> GeneratedPortfolio:
    """``G = 1``; weights equal the market weights."""
    return GeneratedPortfolio(
        log_G=_const_zero,
        grad_log_G=lambda x: np.zeros_like(x),
        hess_log_G=lambda x: np.zeros(x.shape + (x.shape[-1],)),
        name="market",
        concave_flag="yes",
    )


def power_generator(c, name: str = "power") -> GeneratedPortfolio:
    """``G = prod x_i^{c_i}``; ``c_i = 1/d`` generates equal weights."""
    c = np.asarray(c, dtype=float)

    def hess(x):
        out = np.zeros(x.shape + (x.shape[-1],))
        idx = np.arange(x.shape[-1])
        out[:, idx, idx] = -c / x**2
        return out

    flag = "yes" if np.all(c >= 0) and c.sum() <= 1 else "unknown"
    return GeneratedPortfolio(
        log_G=lambda x: (c * np.log(x)).sum(axis=-1),
        grad_log_G=lambda x: c / x,
        hess_log_G=hess,
        name=name,
        concave_flag=flag,
    )


def equal_weight_portfolio(d: int) -> GeneratedPortfolio:
    return power_generator(np.full(d, 1.0 / d), name="equal")


def linear_generator(w) -> GeneratedPortfolio:
    """``G = w . x`` with ``w > 0``."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise InvalidParameter("linear generator needs positive coefficients")

    def hess(x):
        s = x @ w
        return -w[None, :, None] * w[None, None, :] / (s**2)[:, None, None]

    return GeneratedPortfolio(
        log_G=lambda x: np.log(x @ w),
        grad_log_G=lambda x: w[None, :] / (x @ w)[:, None],
        hess_log_G=hess,
        name="linear",
        concave_flag="yes",
    )


def single_asset_portfolio(i: int) -> GeneratedPortfolio:
    """Everything in asset ``i``: ``G = x_i``."""
    def grad(x):
        g = np.zeros_like(x)
        g[:, i] = 1.0 / x[:, i]
        return g

    def hess(x):
        h = np.zeros(x.shape + (x.shape[-1],))
        h[:, i, i] = -1.0 / x[:, i] ** 2
        return h

    return GeneratedPortfolio(lambda x: np.log(x[:, i]), grad, hess, name=f"asset{i + 1}",
                              concave_flag="yes")


def unconstrained_optimum(m: mdl.ModelInputs) -> GeneratedPortfolio:
    """Growth-optimal portfolio without constraints, generated by ``exp(log R)``.

    ``log R = (log p + log g + sum log f_i) / 2`` for the product-form class,
    normalized so that the generator equals 1 at the barycenter.
    """
    if m.log_phi is None:
        raise NotGradientError(
            "the drift field of this model is not a known gradient; the unconstrained "
            "optimum would require solving the variational problem, which is not supported"
        )
    bary = barycenter(m.d)
    offset = float(mdl.log_R(m, bary))
    return GeneratedPortfolio(
        log_G=lambda x: mdl.log_R(m, x) - offset,
        grad_log_G=lambda x: mdl.ell(m, x),
        hess_log_G=lambda x: mdl.hess_log_R(m, x),
        name="unconstrained",
    )


def _log_beta(r) -> float:
    r = np.asarray(r, dtype=float)
    return float(gammaln(r).sum() - gammaln(r.sum()))


def lambda_dirichlet_closed_form(a, b=1.0, alpha=1.0, d: int | None = None) -> float:
    """Optimal growth rate of the Dirichlet preset in closed form.

    ``lambda = (1 / 8B(a)) sum_{i != j} alpha_ij (gamma_i^2 B(a + (b_i - 2) e_i + b_j e_j)
    - gamma_i gamma_j B(a + (b_i - 1) e_i + (b_j - 1) e_j))`` with the
    multivariate Beta function ``B``, evaluated through log-gamma.

    Parameters
    ----------
    a, b : float or array_like
        Preset parameters; ``gamma = a + b - 1`` must exceed 1.
    alpha : float or array_like
        Pair constants ``f_ij`` (scalar or symmetric table).
    """
    if isinstance(a, mdl.ModelInputs):
        m = a
        if m.preset is None or m.preset.kind != "dirichlet":
            raise InvalidParameter("closed form only available for the Dirichlet preset")
        a, b, alpha = m.preset.params["a"], m.preset.params["b"], m.preset.params["alpha_pair"]
    if d is None:
        d = max(np.size(a), np.size(b), int(np.sqrt(np.size(alpha))), 2)
    a = mdl._vec(a, d, "a")
    b = mdl._vec(b, d, "b")
    table = mdl._pair_table(alpha, 1.0, d) if np.ndim(alpha) else mdl._pair_table(None, alpha, d)
    gamma = a + b - 1
    if np.any(gamma <= 1):
        raise InvalidParameter("closed-form lambda needs gamma_i = a_i + b_i - 1 > 1")
    lb = _log_beta(a)
    total = 0.0
    for i in range(d):
        for j in range(d):
            if i == j or table[i, j] == 0:
                continue
            r1 = a.copy()
            r1[i] += b[i] - 2
            r1[j] += b[j]
            r2 = a.copy()
            r2[i] += b[i] - 1
            r2[j] += b[j] - 1
            total += table[i, j] * (gamma[i] ** 2 * np.exp(_log_beta(r1) - lb)
                                    - gamma[i] * gamma[j] * np.exp(_log_beta(r2) - lb))
    return total / 8.0


# ---------------------------------------------------------------------------
# two assets


@dataclass(frozen=True)
class TwoAssetInputs:
    """One-dimensional description of a two-asset market in the coordinate ``x = x^1``.

    ``ell_tilde = (log(p_tilde c_tilde))' / 2``; derivatives are taken by
    central differences when ``ell_tilde`` or its derivative are omitted.
    """

    c_tilde: Callable[[Array], Array]
    p_tilde: Callable[[Array], Array]
    ell_tilde: Callable[[Array], Array] | None = None
    ell_tilde_prime: Callable[[Array], Array] | None = None
    breakpoints: tuple = ()
    domain: tuple = (0.0, 1.0)

    def ell(self, x):
        if self.ell_tilde is not None:
            return self.ell_tilde(x)
        h = 1e-6 * np.minimum(x, 1 - x)
        lf = lambda t: np.log(self.p_tilde(t) * self.c_tilde(t))  # noqa: E731
        return 0.5 * (lf(x + h) - lf(x - h)) / (2 * h)

    def ell_prime(self, x):
        if self.ell_tilde_prime is not None:
            return self.ell_tilde_prime(x)
        h = 1e-6 * np.minimum(x, 1 - x)
        return (self.ell(x + h) - self.ell(x - h)) / (2 * h)


def two_asset_inputs(m: mdl.ModelInputs) -> TwoAssetInputs:
    if m.d != 2:
        raise InvalidInput(f"two-asset solver needs d = 2, model has d = {m.d}")

    def pts(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.stack([x, 1 - x], axis=1)

    def c_t(x):
        return m.covariance_fn(pts(x))[:, 0, 0]

    def ell_t(x):
        g = mdl.ell(m, pts(x))
        return g[:, 0] - g[:, 1]

    def ell_tp(x):
        h = mdl.hess_log_R(m, pts(x))
        return h[:, 0, 0] - 2 * h[:, 0, 1] + h[:, 1, 1]

    bp = ()
    pr = m.preset
    if pr is not None and pr.kind in ("dirichlet", "gen_vol_stab"):
        t1, t2 = two_asset_cutoffs(m)
        bp = tuple(v for v in _cut_points(m, t1, t2) if 0 < v < 1)
    if m.density.normalized:
        p_t = lambda x: np.exp(m.density.log_p(pts(x)))  # noqa: E731
    else:
        ref = float(m.density.log_p(pts(0.5))[0])
        raw = lambda x: np.exp(m.density.log_p(pts(x)) - ref)  # noqa: E731
        z, _ = integrate.quad(lambda t: raw(t)[0], 0, 1, epsabs=1e-12, limit=200)
        p_t = lambda x: raw(x) / z  # noqa: E731
    return TwoAssetInputs(c_tilde=c_t, p_tilde=p_t, ell_tilde=ell_t, ell_tilde_prime=ell_tp,
                          breakpoints=bp)


def two_asset_cutoffs(m: mdl.ModelInputs) -> tuple[float, float]:
    """Preset cutoffs ``(theta1, theta2)`` (``inf`` when a cutoff does not exist).

    Dirichlet: ``theta1 = (g1 - 2)/(g1 + g2 - 2)``, ``theta2 = g1/(g1 + g2 - 2)``;
    the long-only optimum holds only asset 1 for ``x < theta1`` and only
    asset 2 for ``x > theta2``.  Generalized volatility-stabilized:
    ``theta1 = ((g2 - 2)/g1)^{1/(2b)}`` if ``g2 > 2``, ``theta2 = (g2/(g1 - 2))^{1/(2b)}``
    if ``g1 > 2``; the switch points in ``x`` are ``1/(1 + theta2)`` and
    ``1/(1 + theta1)``.
    """
    if m.preset is None:
        raise InvalidParameter("cutoffs are only tabulated for presets")
    p = m.preset.params
    if m.preset.kind == "dirichlet":
        g1, g2 = p["gamma"]
        s = g1 + g2 - 2
        return (g1 - 2) / s, g1 / s
    if m.preset.kind == "gen_vol_stab":
        g1, g2 = p["gamma"]
        q = 2 * p["beta"]
        t1 = ((g2 - 2) / g1) ** (1 / q) if g2 > 2 else np.inf
        t2 = (g2 / (g1 - 2)) ** (1 / q) if g1 > 2 else np.inf
        return t1, t2
    raise InvalidParameter(f"no tabulated cutoffs for preset {m.preset.kind}")


def _cut_points(m, t1, t2):
    if m.preset.kind == "dirichlet":
        return (t1, t2)
    lo = 1 / (1 + t2) if np.isfinite(t2) else 0.0
    hi = 1 / (1 + t1) if np.isfinite(t1) else 1.0
    return (lo, hi)


def _find_breakpoints(inp: TwoAssetInputs, n: int = 4001) -> tuple:
    x = np.linspace(1e-6, 1 - 1e-6, n)
    out = []
    for fn in (lambda t: inp.ell(t) - 1 / t, lambda t: inp.ell(t) + 1 / (1 - t)):
        v = fn(x)
        for k in np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)[0]:
            out.append(optimize.brentq(lambda t: float(fn(np.array([t]))[0]), x[k], x[k + 1],
                                       xtol=1e-14))
    return tuple(sorted(out))


@dataclass(frozen=True)
class TwoAssetSolution:
    """Long-only growth-optimal portfolio for two assets.

    ``pi1(x)`` is the weight of asset 1 at ``x = x^1``; ``weights`` returns
    both weights for points ``(n, 2)`` so the solution can be simulated like
    any other portfolio.
    """

    inputs: TwoAssetInputs
    theta1: float
    theta2: float
    lambda_long: float
    lambda_unconstrained: float
    clipped_mass: float
    concave_generated: bool
    breakpoints: tuple = field(default=())
    name: str = "long_only"

    def varphi(self, x):
        x = np.asarray(x, dtype=float)
        return np.clip(self.inputs.ell(x), -1 / (1 - x), 1 / x)

    def pi1(self, x):
        x = np.asarray(x, dtype=float)
        lt = self.inputs.ell(np.atleast_1d(x))
        mid = x + x * (1 - x) * lt
        out = np.where(lt > 1 / x, 1.0, np.where(lt < -1 / (1 - x), 0.0, mid))
        return out if np.ndim(x) else float(out[0])

    def weights(self, x):
        xb, single = _batch(x)
        p1 = self.pi1(xb[:, 0])
        w = np.stack([p1, 1 - p1], axis=1)
        return w[0] if single else w


def solve_two_asset_long_only(m, epsabs: float = 1e-8) -> TwoAssetSolution:
    """Long-only optimum for ``d = 2`` by clipping ``ell_tilde`` to ``[-1/(1-x), 1/x]``.

    ``lambda_long = (1/2) int (ell^2 - (ell - varphi)^2) c p dx`` is computed by
    adaptive quadrature split at the cutoffs where the integrand has kinks.

    Parameters
    ----------
    m : ModelInputs or TwoAssetInputs
    epsabs : float
        Absolute quadrature tolerance.
    """
    if isinstance(m, TwoAssetInputs):
        inp = m
        t1 = t2 = np.nan
    else:
        inp = two_asset_inputs(m)
        try:
            t1, t2 = two_asset_cutoffs(m)
        except InvalidParameter:
            t1 = t2 = np.nan
    bps = inp.breakpoints or _find_breakpoints(inp)
    if isinstance(m, TwoAssetInputs) and len(bps) == 2:
        t1, t2 = bps
    lo, hi = inp.domain
    edges = [lo] + [b for b in sorted(bps) if lo < b < hi] + [hi]

    def f_long(t):
        t = np.array([t])
        lt = inp.ell(t)
        ph = np.clip(lt, -1 / (1 - t), 1 / t)
        return float((0.5 * (lt**2 - (lt - ph) ** 2) * inp.c_tilde(t) * inp.p_tilde(t))[0])

    def f_full(t):
        t = np.array([t])
        lt = inp.ell(t)
        return float((0.5 * lt**2 * inp.c_tilde(t) * inp.p_tilde(t))[0])

    def f_mass(t):
        t = np.array([t])
        lt = inp.ell(t)
        clipped = (lt > 1 / t) | (lt < -1 / (1 - t))
        return float((clipped * inp.p_tilde(t))[0])

    def quad(fn):
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            val, err = integrate.quad(fn, a, b, epsabs=epsabs, epsrel=1e-10, limit=500)
            if not np.isfinite(val) or err > max(10 * epsabs, 1e-6 * abs(val)):
                raise NumericalError(f"quadrature did not converge on [{a}, {b}] (err {err:g})")
            total += val
        return total

    lam_long = quad(f_long)
    lam_full = quad(f_full)
    mass = quad(f_mass)
    concave = concavity_criterion(inp)
    return TwoAssetSolution(inputs=inp, theta1=float(t1), theta2=float(t2), lambda_long=lam_long,
                            lambda_unconstrained=lam_full, clipped_mass=mass,
                            concave_generated=concave, breakpoints=tuple(bps))


def concavity_margin(m, n_grid: int = 20001) -> float:
    """Largest value of ``ell_tilde^2 + ell_tilde'`` over the unclipped region."""
    inp = m if isinstance(m, TwoAssetInputs) else two_asset_inputs(m)
    lo, hi = inp.domain
    x = np.linspace(lo, hi, n_grid + 2)[1:-1]
    lt = inp.ell(x)
    inside = (lt > -1 / (1 - x)) & (lt < 1 / x)
    if not np.any(inside):
        return -np.inf
    v = lt[inside] ** 2 + inp.ell_prime(x[inside])
    return float(v.max())


def concavity_criterion(m, n_grid: int = 20001, tol: float = 1e-9) -> bool:
    """True iff the long-only optimum for ``d = 2`` is generated by a concave function.

    Checks ``ell_tilde^2 + ell_tilde' <= tol`` on a grid of the region where
    the clip is inactive.
    """
    return concavity_margin(m, n_grid) <= tol


# ---------------------------------------------------------------------------
# growth rates


@dataclass
class GrowthRateReport:
    """Monte Carlo growth-rate estimate (nats per unit time).

    ``quadratic_term`` is ``(1/2) E[ell' c ell]`` and ``residual_term`` is
    ``(1/2) E[(ell - h)' c (ell - h)]`` with ``h = pi / x``; the estimate is
    their difference, computed samplewise.  ``ibp_estimate`` is the
    ``E[-LG/G]`` form for smooth generated portfolios.
    """

    lambda_mc: float
    stderr: float
    method: str
    lambda_closed_form: float | None = None
    quadratic_term: float | None = None
    residual_term: float | None = None
    ibp_estimate: float | None = None
    ibp_stderr: float | None = None
    n: int = 0
    divergent_variance: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def discrepancy(self) -> float | None:
        if self.ibp_estimate is None:
            return None
        return float(self.ibp_estimate - self.lambda_mc)

    @property
    def consistent(self) -> bool | None:
        if self.lambda_closed_form is None:
            return None
        return bool(abs(self.lambda_closed_form - self.lambda_mc) <= 4 * self.stderr)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("lambda_mc", "stderr", "method", "lambda_closed_form",
                                             "quadratic_term", "residual_term", "ibp_estimate",
                                             "ibp_stderr", "n", "divergent_variance")}
        out["discrepancy"] = self.discrepancy
        out["consistent"] = self.consistent
        out.update(self.extra)
        return out


MC_BLOCK = 8192


def _growth_terms(m, portfolio, x):
    c = m.covariance_fn(x)
    lc = canonical(mdl.ell(m, x))
    pi = portfolio.weights(x)
    h = canonical(pi / x)
    ch = np.einsum("nij,nj->ni", c, h)
    integrand = (ch * lc).sum(axis=1) - 0.5 * (ch * h).sum(axis=1)
    quad = 0.5 * np.einsum("ni,nij,nj->n", lc, c, lc)
    return integrand, quad, c


def lambda_mc(m: mdl.ModelInputs, gp, n: int = 100_000, seed: int = 0,
              closed_form: float | None = None, ibp: bool | None = None) -> GrowthRateReport:
    """Growth rate of a portfolio under the worst-case measure by Monte Carlo.

    The integrand is ``h' c ell - h' c h / 2`` with ``h = pi / x``, the
    samplewise form of ``(ell' c ell - (ell - h)' c (ell - h)) / 2``, so the
    market portfolio (``h`` constant) gives exactly 0.  Draws come from the
    invariant density (exact or self-normalized importance sampling).

    Parameters
    ----------
    m : ModelInputs
    gp : GeneratedPortfolio or object with ``weights(x)``
    n : int
        Number of draws.
    seed : int
    closed_form : float, optional
        Reference value stored in the report.
    ibp : bool, optional
        Also estimate ``E[-LG/G]``; defaults to True for smooth generated
        portfolios.
    """
    x, w = m.density.sample(n, seed, m.d)
    integrand, quad, c = _growth_terms(m, gp, x)
    if not np.all(np.isfinite(integrand)):
        k = int(np.nonzero(~np.isfinite(integrand))[0][0])
        raise NumericalError(f"non-finite growth integrand at sample {k}")
    est, se = weighted_mean_se(integrand, w)
    qv, _ = weighted_mean_se(quad, w)
    if ibp is None:
        ibp = isinstance(gp, GeneratedPortfolio) and gp.smooth
    ibp_est = ibp_se = None
    if ibp:
        g = gp.gradient(x)
        hs = gp.hessian(x)
        lg = 0.5 * np.einsum("nij,nij->n", c, hs + g[:, :, None] * g[:, None, :])
        ibp_est, ibp_se = weighted_mean_se(-lg, w)
    div = bool(se > 0.5 * abs(est)) if est != 0 else False
    return GrowthRateReport(
        lambda_mc=est, stderr=se, method="snis" if w is not None else "mc",
        lambda_closed_form=closed_form, quadratic_term=qv, residual_term=qv - est,
        ibp_estimate=ibp_est, ibp_stderr=ibp_se, n=n, divergent_variance=div,
    )


def is_rank_based_portfolio(gp, d: int, n_checks: int = 100, seed: int = 0, tol: float = 1e-9) -> bool:
    """Check ``pi(x_sigma) = pi(x)_sigma`` at random points and permutations."""
    rng = np.random.default_rng(seed)
    xs = sample_dirichlet(np.ones(d), n_checks, seed)
    perms = np.stack([rng.permutation(d) for _ in range(n_checks)])
    xp = np.take_along_axis(xs, perms, axis=1)
    w = np.asarray(gp.weights(xs))
    wp = np.asarray(gp.weights(xp))
    return bool(np.all(np.abs(wp - np.take_along_axis(w, perms, axis=1)) <= tol))
