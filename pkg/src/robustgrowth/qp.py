"""Quadratic-programming approximation of the long-only concave-generated optimum.

The candidate generators are minima of log-affine functions,
``phi_m(x) = min_k log(w_mk . x)``, which are exponentially concave.  A
mixture ``psi = sum_m mu_m phi_m`` with ``mu`` in the probability simplex is
fitted by minimizing the Monte Carlo estimate of ``||grad psi - ell||^2``:

    1/2 mu' Q mu - mu' r + C,   Q = mean 2 G c G',  r = mean 2 G c ell,

where row ``m`` of ``G`` is a supergradient of ``phi_m`` and
``C = mean ell' c ell``.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import model as mdl
from .errors import InvalidParameter, NumericalError
from .portfolio import GeneratedPortfolio, GrowthRateReport, lambda_mc
from .simplex import block_rngs, canonical, _project_sorted
from .stats import weighted_mean_se

Array = NDArray[np.float64]
QP_BLOCK = 256


@dataclass(frozen=True)
class LogAffineFamily:
    """``M`` generators ``phi_m(x) = min_k log(w[m, k] . x)`` with ``w > 0``."""

    w: Array

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 3:
            raise InvalidParameter("family coefficients must have shape (M, K, d)")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise InvalidParameter("family coefficients must be finite and positive")
        object.__setattr__(self, "w", w)

    @property
    def M(self) -> int:
        return self.w.shape[0]

    @property
    def K(self) -> int:
        return self.w.shape[1]

    @property
    def d(self) -> int:
        return self.w.shape[2]

    def _active(self, x: Array, members=None):
        w = self.w if members is None else self.w[members]
        vals = np.einsum("mkd,nd->nmk", w, x)
        k = vals.argmin(axis=2)  # first index on ties
        return w, vals, k

    def phi(self, x, members=None) -> Array:
        """Values ``phi_m(x)``, shape ``(n, M)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        _, vals, _ = self._active(x, members)
        return np.log(vals.min(axis=2))

    def supergradients(self, x, members=None) -> Array:
        """Supergradients ``w_mk* / (w_mk* . x)``, shape ``(n, M, d)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        w, vals, k = self._active(x, members)
        wk = w[np.arange(w.shape[0])[None, :], k]
        vk = np.take_along_axis(vals, k[:, :, None], axis=2)
        return wk / vk

    def append(self, other: "LogAffineFamily") -> "LogAffineFamily":
        """Concatenate generators; the family with fewer planes repeats its first
        plane, which leaves each minimum unchanged."""
        a, b = self.w, other.w
        K = max(a.shape[1], b.shape[1])
        a, b = (np.concatenate([v, np.repeat(v[:, :1], K - v.shape[1], axis=1)], axis=1) for v in (a, b))
        return LogAffineFamily(np.concatenate([a, b], axis=0))


def generate_family(M: int, K: int, d: int, seed: int, scale_spread: float = 0.0) -> LogAffineFamily:
    """Draw ``w_mk = d * Dir(1, ..., 1)``.

    Generator ``m`` uses the ``m``-th child stream of ``seed``, so families
    are nested: the first ``M`` generators of a larger family with the same
    seed coincide with the smaller family.

    With ``scale_spread = 0`` every plane has ``w . x = 1`` at the
    barycenter, so all generators have their kink there.  A positive value
    multiplies each plane by ``exp(U(-s, s))``, which moves the kinks apart
    (opt-in variant; the default is the plain family).
    """
    if M < 1 or K < 1 or d < 2:
        raise InvalidParameter("need M >= 1, K >= 1, d >= 2")
    if scale_spread < 0:
        raise InvalidParameter("scale_spread must be >= 0")
    w = np.empty((M, K, d))
    for m, rng in enumerate(block_rngs(seed, M)):
        g = rng.standard_exponential(size=(K, d))
        w[m] = d * g / g.sum(axis=1, keepdims=True)
        if scale_spread > 0:
            w[m] *= np.exp(rng.uniform(-scale_spread, scale_spread, size=(K, 1)))
    return LogAffineFamily(w)


def supergradient(fam: LogAffineFamily, m: int, x) -> Array:
    """Supergradient of ``phi_m`` at one point or a batch (lowest active index on ties)."""
    x = np.asarray(x, dtype=float)
    g = fam.supergradients(np.atleast_2d(x), members=[m])[:, 0]
    return g[0] if x.ndim == 1 else g


@dataclass
class QpProblem:
    """Assembled Monte Carlo quadratic program.

    ``C`` estimates ``E[ell' c ell]``, so ``1/2 mu' Q mu - mu' r + C``
    estimates ``||grad psi - ell||^2`` and ``-objective/2`` is the in-sample
    growth-rate estimate of the mixture.
    """

    Q: Array
    r: Array
    n_samples: int
    seed: int
    C: float = float("nan")
    C_stderr: float = float("nan")
    min_eig_raw: float = 0.0

    @property
    def M(self) -> int:
        return self.r.size

    def objective(self, mu) -> float:
        mu = np.asarray(mu, dtype=float)
        return float(0.5 * mu @ self.Q @ mu - mu @ self.r)


def _qp_block(m: mdl.ModelInputs, fam: LogAffineFamily, x: Array, w: Array | None):
    c = m.covariance_fn(x)
    lc = canonical(mdl.ell(m, x))
    G = fam.supergradients(x)
    # any representative works under c; this one is exactly 0 for constant gradients
    G = G - G[:, :, -1:]
    wt = np.ones(x.shape[0]) if w is None else w
    CG = np.einsum("nde,nme->nmd", c, G)
    q_n = 2.0 * np.einsum("nmd,nkd->nmk", G, CG)
    r_n = 2.0 * np.einsum("nmd,nd->nm", CG, lc)
    cst = np.einsum("ni,nij,nj->n", lc, c, lc)
    bad = ~(np.isfinite(q_n).all(axis=(1, 2)) & np.isfinite(r_n).all(axis=1) & np.isfinite(cst) & np.isfinite(wt))
    return (np.einsum("n,nmk->mk", wt, q_n), wt @ r_n, wt.sum(), cst, wt, bad)


def assemble_qp(m: mdl.ModelInputs, fam: LogAffineFamily, n: int = 100, seed: int = 0,
                threads: int = 1, block: int = QP_BLOCK) -> QpProblem:
    """Monte Carlo assembly of ``Q = mean 2 G c G'`` and ``r = mean 2 G c ell``.

    Samples are drawn in fixed blocks, each from its own child stream of
    ``seed``; block sums are added in block order, so the result is
    bit-identical for any ``threads``.  ``Q`` is symmetrized and its
    eigenvalues floored at 0 (rows that are exactly zero are kept exact).
    """
    if fam.d != m.d:
        raise InvalidParameter(f"family dimension {fam.d} differs from model dimension {m.d}")
    if n < 1:
        raise InvalidParameter("n must be >= 1")
    n_blocks = (n + block - 1) // block
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_blocks)]

    def work(b):
        size = min(block, n - b * block)
        x, w = m.density.sample(size, seeds[b], m.d)
        return _qp_block(m, fam, x, w)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, range(n_blocks)))
    else:
        parts = [work(b) for b in range(n_blocks)]

    Q = np.zeros((fam.M, fam.M))
    r = np.zeros(fam.M)
    wsum = 0.0
    for b, (qb, rb, sb, _, _, bad) in enumerate(parts):
        if np.any(bad):
            k = b * block + int(np.nonzero(bad)[0][0])
            raise NumericalError(f"non-finite Q/r contribution at sample {k}")
        Q += qb
        r += rb
        wsum += sb
    Q /= wsum
    r /= wsum
    cst = np.concatenate([p[3] for p in parts])
    wts = np.concatenate([p[4] for p in parts])
    C, C_se = weighted_mean_se(cst, None if np.all(wts == 1.0) else wts)

    Q = 0.5 * (Q + Q.T)
    min_raw = 0.0
    live = np.any(Q != 0, axis=1)
    if np.any(live):
        sub = Q[np.ix_(live, live)]
        lam, v = np.linalg.eigh(sub)
        min_raw = float(lam.min())
        if min_raw < 0:
            sub = (v * np.maximum(lam, 0.0)) @ v.T
            Q[np.ix_(live, live)] = 0.5 * (sub + sub.T)
    return QpProblem(Q=Q, r=r, n_samples=n, seed=seed, C=C, C_stderr=C_se, min_eig_raw=min_raw)


@dataclass
class QpSolution:
    """Minimizer of ``1/2 mu' Q mu - mu' r`` over the probability simplex."""

    mu_hat: Array
    objective: float
    fw_gap: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)
    lambda_E_estimate: float | None = None
    lambda_E_stderr: float | None = None


def fw_gap(Q: Array, r: Array, mu: Array) -> float:
    """Frank-Wolfe gap ``max_j(-grad_j) - mu'(-grad)`` with ``grad = Q mu - r``."""
    g = Q @ mu - r
    return float(mu @ g - g.min())


def _project_exact(v: Array) -> Array:
    # exact Euclidean projection (closed simplex, zeros allowed)
    p = _project_sorted(v)
    return p / p.sum()


def solve_qp(qp, tol: float = 1e-8, max_iter: int = 100_000, r=None) -> QpSolution:
    """Projected gradient with monotone backtracking on the probability simplex.

    Starts at the uniform mixture; trial steps use the Barzilai-Borwein
    length, halved until the objective decreases by the Armijo condition.
    Stops when the Frank-Wolfe gap is at most ``tol``; otherwise returns
    the last iterate with ``converged = False``.

    ``qp`` may be a QpProblem or a matrix ``Q`` (then pass ``r``).
    """
    if isinstance(qp, QpProblem):
        Q, r = qp.Q, qp.r
    else:
        Q = np.asarray(qp, dtype=float)
        r = np.asarray(r, dtype=float)
    M = r.size
    if tol <= 0:
        raise InvalidParameter("tol must be positive")
    if Q.shape != (M, M):
        raise InvalidParameter("Q and r have inconsistent shapes")

    def obj(v):
        return 0.5 * v @ Q @ v - v @ r

    mu = np.full(M, 1.0 / M)
    f = obj(mu)
    grad = Q @ mu - r
    history = [float(f)]
    lip = max(float(np.abs(Q).sum(axis=1).max()), 1e-12)
    step = 1.0 / lip
    gap = float(mu @ grad - grad.min())
    it = 0
    while gap > tol and it < max_iter:
        it += 1
        t = step
        while True:
            cand = _project_exact(mu - t * grad)
            fc = obj(cand)
            if fc <= f + grad @ (cand - mu) + 0.5 / t * ((cand - mu) @ (cand - mu)) and fc <= f:
                break
            t *= 0.5
            if t < 1e-300:
                cand, fc = mu, f
                break
        s = cand - mu
        new_grad = Q @ cand - r
        yv = new_grad - grad
        mu, f, grad = cand, fc, new_grad
        history.append(float(f))
        gap = float(mu @ grad - grad.min())
        sy = s @ yv
        step = (s @ s) / sy if sy > 0 else min(2 * t, 1e6 / lip)
        if not np.isfinite(step) or step <= 0:
            step = 1.0 / lip
    return QpSolution(mu_hat=mu, objective=float(f), fw_gap=gap, iterations=it,
                      converged=gap <= tol, history=history)


def qp_portfolio(m: mdl.ModelInputs | None, fam: LogAffineFamily, sol: QpSolution | Array,
                 drop_below: float = 0.0) -> GeneratedPortfolio:
    """Portfolio generated by ``exp(sum_m mu_m phi_m)``; long-only by construction."""
    mu = np.asarray(sol.mu_hat if isinstance(sol, QpSolution) else sol, dtype=float)
    members = np.nonzero(mu > drop_below)[0]
    coef = mu[members]

    def log_g(x):
        x = np.atleast_2d(x)
        return fam.phi(x, members) @ coef

    def grad(x):
        x = np.atleast_2d(x)
        return np.einsum("m,nmd->nd", coef, fam.supergradients(x, members))

    return GeneratedPortfolio(log_G=log_g, grad_log_G=grad, name="qp", smooth=False,
                              concave_flag="yes")


@dataclass
class QpGrowthReport(GrowthRateReport):
    """Growth-rate report with the ``(1/2) E[grad psi' c grad psi]`` lower-bound diagnostic."""

    lower_bound: float | None = None
    lower_bound_ok: bool | None = None


def lambda_E_estimate(m: mdl.ModelInputs, gp: GeneratedPortfolio, n: int = 100_000,
                      seed: int = 0) -> QpGrowthReport:
    """Growth rate of a QP portfolio and the soft check ``estimate >= E[grad psi' c grad psi]/2 - 2 se``."""
    rep = lambda_mc(m, gp, n=n, seed=seed, ibp=False)
    x, w = m.density.sample(n, seed, m.d)
    c = m.covariance_fn(x)
    g = canonical(gp.gradient(x))
    lb, _ = weighted_mean_se(0.5 * np.einsum("ni,nij,nj->n", g, c, g), w)
    out = QpGrowthReport(**{k: getattr(rep, k) for k in GrowthRateReport.__dataclass_fields__})
    out.method = rep.method + "+lambda_E"
    out.lower_bound = lb
    out.lower_bound_ok = bool(rep.lambda_mc >= lb - 2 * rep.stderr)
    return out


def run_qp(m: mdl.ModelInputs, M: int = 25, K: int = 100, N: int = 100, seed: int = 0,
           tol: float = 1e-8, max_iter: int = 100_000, n_lambda: int = 100_000,
           threads: int = 1, scale_spread: float = 0.0):
    """Family generation, assembly, solve, portfolio and growth estimate in one call.

    Family, assembly and evaluation use independent child seeds of ``seed``.
    Returns ``(family, problem, solution, portfolio, report)``.
    """
    s_fam, s_asm, s_eval = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(3))
    fam = generate_family(M, K, m.d, s_fam, scale_spread)
    prob = assemble_qp(m, fam, N, s_asm, threads=threads)
    sol = solve_qp(prob, tol=tol, max_iter=max_iter)
    gp = qp_portfolio(m, fam, sol)
    rep = lambda_E_estimate(m, gp, n_lambda, s_eval)
    sol.lambda_E_estimate = rep.lambda_mc
    sol.lambda_E_stderr = rep.stderr
    return fam, prob, sol, gp, rep


def bundle_dict(fam: LogAffineFamily, prob: QpProblem, sol: QpSolution,
                rep: GrowthRateReport | None = None, meta: dict | None = None) -> dict:
    """JSON-serializable record of a QP run."""
    out = {
        "meta": meta or {},
        "M": fam.M, "K": fam.K, "d": fam.d,
        "family_w": fam.w.tolist(),
        "Q": prob.Q.tolist(), "r": prob.r.tolist(),
        "C": prob.C, "C_stderr": prob.C_stderr,
        "n_samples": prob.n_samples, "assembly_seed": prob.seed,
        "mu_hat": sol.mu_hat.tolist(), "objective": sol.objective,
        "fw_gap": sol.fw_gap, "iterations": sol.iterations, "converged": sol.converged,
        "in_sample_lambda": -0.5 * sol.objective,
    }
    if rep is not None:
        out["lambda_E_estimate"] = rep.lambda_mc
        out["lambda_E_stderr"] = rep.stderr
        if isinstance(rep, QpGrowthReport):
            out["lower_bound"] = rep.lower_bound
            out["lower_bound_ok"] = rep.lower_bound_ok
    return out


def load_bundle(path) -> tuple[LogAffineFamily, np.ndarray, dict]:
    with open(path) as fh:
        data = json.load(fh)
    return LogAffineFamily(np.asarray(data["family_w"])), np.asarray(data["mu_hat"]), data
