"""Market models: covariance fields, invariant densities, the drift field and presets.

A model is the pair ``(c, p)``: a covariance field ``c(x)`` with the all-ones
vector in its kernel and an invariant density ``p`` on the open simplex.
Every model carries a *divergence potential* ``Phi`` with
``c^{-1} div c = grad log Phi``; for the product-form class
``c_ij = -f_ij f_i f_j g`` this is ``Phi = g * prod f_i``.  The worst-case
drift field is then ``ell = grad log R`` with ``R = sqrt(p * Phi)``.

All field evaluators accept a single point of shape ``(d,)`` or a batch of
shape ``(n, d)`` and return matching leading shapes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from numpy.typing import NDArray
from scipy.special import gammaln

from . import _kernels
from .errors import ConfigError, InvalidInput, InvalidParameter, NotGradientError, NumericalError
from .simplex import ambient_grad_fd, as_point, barycenter, sample_dirichlet

Array = NDArray[np.float64]
FD_STEP = 1e-6


def _batch(x) -> tuple[Array, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _unbatch(v, single: bool):
    return v[0] if single else v


# ---------------------------------------------------------------------------
# specification types


@dataclass(frozen=True)
class TractableSpec:
    """Product-form covariance ``c_ij = -f_ij(x) f_i(x^i) f_j(x^j) g(x)`` for ``i != j``.

    Parameters
    ----------
    d : int
        Number of assets.
    f : callable
        ``f(x)`` maps points ``(n, d)`` to ``(n, d)`` with column ``i`` equal to
        ``f_i(x^i)``; each column may depend only on its own coordinate.
    f_pair : ndarray or callable
        Symmetric ``(d, d)`` table of constants, or a callable returning
        ``(n, d, d)`` values of ``f_ij``.  The diagonal is ignored.
    g : callable, optional
        Positive scalar field ``(n, d) -> (n,)``; ``None`` means ``g = 1``.
    dlog_f, d2log_f : callable, optional
        First and second derivatives of ``log f_i`` evaluated columnwise.
    grad_log_g, hess_log_g : callable, optional
        Ambient derivatives of ``log g``.  Missing derivatives fall back to
        central differences.
    """

    d: int
    f: Callable[[Array], Array]
    f_pair: Any
    g: Callable[[Array], Array] | None = None
    dlog_f: Callable[[Array], Array] | None = None
    d2log_f: Callable[[Array], Array] | None = None
    grad_log_g: Callable[[Array], Array] | None = None
    hess_log_g: Callable[[Array], Array] | None = None

    def __post_init__(self):
        if self.d < 2:
            raise InvalidParameter("a market needs at least two assets")
        if not callable(self.f_pair):
            a = np.asarray(self.f_pair, dtype=float)
            if a.shape != (self.d, self.d):
                raise InvalidParameter(f"f_pair must have shape ({self.d}, {self.d})")
            if not np.allclose(a, a.T, rtol=0, atol=1e-14):
                raise InvalidParameter("f_pair must be symmetric")
            if np.any(a < 0) or not np.all(np.isfinite(a)):
                raise InvalidParameter("f_pair entries must be finite and nonnegative")
            object.__setattr__(self, "f_pair", a)
        t = np.linspace(1e-3, 1 - 1e-3, 101)
        vals = self.f(np.repeat(t[:, None], self.d, axis=1))
        if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
            raise InvalidParameter("f_i must be positive on (0, 1)")
        near0 = self.f(np.full((1, self.d), 1e-6))
        if np.any(np.abs(near0) > 1e-3):
            raise InvalidParameter("f_i must vanish at 0 (f_i(1e-6) > 1e-3)")

    def pair_values(self, x: Array) -> Array:
        if callable(self.f_pair):
            return np.asarray(self.f_pair(x), dtype=float)
        return np.broadcast_to(self.f_pair, (x.shape[0], self.d, self.d))

    def g_values(self, x: Array) -> Array:
        return np.ones(x.shape[0]) if self.g is None else np.asarray(self.g(x), dtype=float)

    def covariance(self, x: Array) -> Array:
        fx = self.f(x)
        # f_i f_j first: the product is commutative, so c is exactly symmetric
        c = -(fx[:, :, None] * fx[:, None, :]) * self.pair_values(x)
        c = c * self.g_values(x)[:, None, None]
        return _fill_diagonal(c)

    def log_potential(self, x: Array) -> Array:
        return np.log(self.g_values(x)) + np.log(self.f(x)).sum(axis=1)

    def _dlog_f(self, x: Array) -> Array:
        if self.dlog_f is not None:
            return self.dlog_f(x)
        h = FD_STEP * x.min(axis=1, keepdims=True)
        return (np.log(self.f(x + h)) - np.log(self.f(x - h))) / (2 * h)

    def _d2log_f(self, x: Array) -> Array:
        if self.d2log_f is not None:
            return self.d2log_f(x)
        h = 1e-4 * x.min(axis=1, keepdims=True)
        lf = np.log
        return (lf(self.f(x + h)) - 2 * lf(self.f(x)) + lf(self.f(x - h))) / h**2

    def grad_log_potential(self, x: Array) -> Array:
        out = self._dlog_f(x)
        if self.g is not None:
            if self.grad_log_g is not None:
                out = out + self.grad_log_g(x)
            else:
                out = out + ambient_grad_fd(lambda y: np.log(self.g(y)), x, FD_STEP * x.min())
        return out

    def hess_log_potential(self, x: Array) -> Array:
        h = np.zeros((x.shape[0], self.d, self.d))
        idx = np.arange(self.d)
        h[:, idx, idx] = self._d2log_f(x)
        if self.g is not None:
            if self.hess_log_g is not None:
                h = h + self.hess_log_g(x)
            else:
                gl = self.grad_log_g or (
                    lambda y: ambient_grad_fd(lambda z: np.log(self.g(z)), y, FD_STEP * y.min())
                )
                h = h + _jacobian_fd(gl, x, 1e-5 * x.min())
        return h


def _fill_diagonal(c: Array) -> Array:
    d = c.shape[-1]
    idx = np.arange(d)
    c[:, idx, idx] = 0.0
    c[:, idx, idx] = -c.sum(axis=2)
    return c


def _jacobian_fd(grad, x: Array, h: float) -> Array:
    """Symmetrized central-difference Jacobian of an ambient gradient field."""
    n, d = x.shape
    jac = np.empty((n, d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        jac[:, :, j] = (grad(x + e) - grad(x - e)) / (2 * h)
    return 0.5 * (jac + jac.transpose(0, 2, 1))


@dataclass(frozen=True)
class InvariantDensity:
    """Possibly unnormalized invariant density on the simplex.

    ``dirichlet_alpha`` names a Dirichlet law used for sampling: when
    ``exact`` is true the density *is* that law, otherwise the draws serve as
    an importance proposal and are returned with self-normalized weights.
    """

    log_p: Callable[[Array], Array]
    grad_log_p: Callable[[Array], Array] | None = None
    hess_log_p: Callable[[Array], Array] | None = None
    normalized: bool = False
    dirichlet_alpha: Array | None = None
    exact: bool = False

    def grad(self, x: Array) -> Array:
        if self.grad_log_p is not None:
            return self.grad_log_p(x)
        return ambient_grad_fd(self.log_p, x, FD_STEP * x.min())

    def hess(self, x: Array) -> Array:
        if self.hess_log_p is not None:
            return self.hess_log_p(x)
        return _jacobian_fd(self.grad, x, 1e-5 * x.min())

    def sample(self, n: int, seed: int, d: int | None = None) -> tuple[Array, Array | None]:
        """Return draws and importance weights (``None`` for exact draws).

        Weights are ``p/q`` up to one global constant, so weighted sums from
        different blocks can be added before normalizing.
        """
        alpha = self.dirichlet_alpha
        if alpha is None:
            if d is None:
                raise InvalidParameter("density has no proposal and d is unknown")
            alpha = np.ones(d)
        x = sample_dirichlet(alpha, n, seed)
        if self.exact:
            return x, None
        return x, importance_weights(self.log_p, alpha, x)


def dirichlet_logpdf(alpha, x: Array) -> Array:
    alpha = np.asarray(alpha, dtype=float)
    return ((alpha - 1) * np.log(x)).sum(axis=-1) + gammaln(alpha.sum()) - gammaln(alpha).sum()


def importance_weights(log_p, alpha, x: Array) -> Array:
    d = x.shape[-1]
    bary = barycenter(d)[None, :]
    offset = log_p(bary)[0] - dirichlet_logpdf(alpha, bary)[0]
    logw = log_p(x) - dirichlet_logpdf(alpha, x) - offset
    if np.any(np.isnan(logw)):
        raise NumericalError("importance weights contain NaN")
    return np.exp(logw)


@dataclass(frozen=True)
class Preset:
    """Preset metadata: ``kind`` in {'dirichlet', 'gen_vol_stab', 'logit_normal'}."""

    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ModelInputs:
    """A complete model: covariance field, divergence potential and density.

    Use :func:`from_tractable` or the preset constructors rather than filling
    these fields by hand.  ``log_phi`` is the divergence potential with
    ``c^{-1} div c = grad log_phi``; when it is ``None`` the drift field is
    not known to be a gradient.
    """

    d: int
    density: InvariantDensity
    covariance_fn: Callable[[Array], Array]
    log_phi: Callable[[Array], Array] | None = None
    grad_log_phi: Callable[[Array], Array] | None = None
    hess_log_phi: Callable[[Array], Array] | None = None
    spec: TractableSpec | None = None
    preset: Preset | None = None
    kernel: tuple | None = None
    name: str = "custom"


def from_tractable(spec: TractableSpec, density: InvariantDensity, name: str = "custom",
                   preset: Preset | None = None, kernel: tuple | None = None) -> ModelInputs:
    return ModelInputs(
        d=spec.d,
        density=density,
        covariance_fn=spec.covariance,
        log_phi=spec.log_potential,
        grad_log_phi=spec.grad_log_potential,
        hess_log_phi=spec.hess_log_potential,
        spec=spec,
        preset=preset,
        kernel=kernel,
        name=name,
    )


# ---------------------------------------------------------------------------
# field evaluators


def covariance(m: ModelInputs, x) -> Array:
    """Covariance matrix ``c(x)``; symmetric PSD with ``c(x) 1 = 0``."""
    xb, single = _batch(x)
    return _unbatch(m.covariance_fn(xb), single)


def sqrt_covariance(m: ModelInputs, x) -> Array:
    """Symmetric PSD square root of ``c(x)`` by eigendecomposition."""
    return psd_sqrt(covariance(m, x))


def psd_sqrt(c) -> Array:
    c = np.asarray(c, dtype=float)
    try:
        lam, v = np.linalg.eigh(c)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    top = np.abs(lam).max(axis=-1, keepdims=True)
    # eigenvalues at rounding level (the all-ones direction) are treated as 0
    lam = np.where(lam <= 64 * np.finfo(float).eps * top, 0.0, lam)
    s = (v * np.sqrt(lam)[..., None, :]) @ np.swapaxes(v, -1, -2)
    return 0.5 * (s + np.swapaxes(s, -1, -2))


def c_inv_div_c(m: ModelInputs, x) -> Array:
    """Solution of ``c(x) y = div c(x)``, as an ambient representative.

    Uses the divergence potential when available, otherwise solves the
    system with finite-difference ``div c`` by least squares.
    """
    xb, single = _batch(x)
    if m.grad_log_phi is not None:
        return _unbatch(m.grad_log_phi(xb), single)
    c = m.covariance_fn(xb)
    dc = div_c_fd(m, xb)
    y = np.stack([np.linalg.lstsq(ci, di, rcond=None)[0] for ci, di in zip(c, dc)])
    return _unbatch(y, single)


def div_c_fd(m: ModelInputs, x, h: float | None = None) -> Array:
    """Row divergence of ``c`` by central differences along ``e_j - e_i``.

    ``(div c)_i = sum_{j != i} (d_j - d_i) c_ij``, the intrinsic divergence
    of the rows of ``c`` on the simplex.
    """
    xb, single = _batch(x)
    d = m.d
    out = np.zeros(xb.shape)
    for k in range(xb.shape[0]):
        xk = xb[k]
        hk = FD_STEP * xk.min() if h is None else h
        for j in range(d):
            for i in range(d):
                if i == j:
                    continue
                e = np.zeros(d)
                e[j] += hk
                e[i] -= hk
                cp = m.covariance_fn((xk + e)[None])[0, i, j]
                cm = m.covariance_fn((xk - e)[None])[0, i, j]
                out[k, i] += (cp - cm) / (2 * hk)
    return _unbatch(out, single)


def log_p(m: ModelInputs, x) -> Array:
    xb, single = _batch(x)
    return _unbatch(m.density.log_p(xb), single)


def ell(m: ModelInputs, x) -> Array:
    """Drift field ``ell = (grad log p + c^{-1} div c) / 2`` (ambient representative)."""
    xb, single = _batch(x)
    return _unbatch(0.5 * (m.density.grad(xb) + c_inv_div_c(m, xb)), single)


def log_R(m: ModelInputs, x) -> Array:
    """``log R = (log p + log Phi) / 2``; ``ell = grad log R``."""
    if m.log_phi is None:
        raise NotGradientError("model has no divergence potential, so ell is not a known gradient")
    xb, single = _batch(x)
    return _unbatch(0.5 * (m.density.log_p(xb) + m.log_phi(xb)), single)


def hess_log_R(m: ModelInputs, x) -> Array:
    if m.log_phi is None:
        raise NotGradientError("model has no divergence potential, so ell is not a known gradient")
    xb, single = _batch(x)
    if m.hess_log_phi is not None:
        hp = m.hess_log_phi(xb)
    else:
        hp = _jacobian_fd(m.grad_log_phi, xb, 1e-5 * xb.min())
    return _unbatch(0.5 * (m.density.hess(xb) + hp), single)


def generator_terms(m: ModelInputs, x) -> tuple[Array, Array]:
    """Return ``(L R / R, L log R)`` with ``L u = (1/2) sum_ij c_ij d_ij u``."""
    xb, _ = _batch(x)
    c = m.covariance_fn(xb)
    h = hess_log_R(m, xb)
    g = ell(m, xb)
    l_log = 0.5 * np.einsum("nij,nij->n", c, h)
    l_ratio = l_log + 0.5 * np.einsum("ni,nij,nj->n", g, c, g)
    return l_ratio, l_log


# ---------------------------------------------------------------------------
# presets


def _vec(v, d: int, name: str) -> Array:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = np.full(d, float(arr))
    if arr.shape != (d,):
        raise InvalidParameter(f"{name} must be a scalar or have length {d}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameter(f"{name} must be finite")
    return arr


def _pair_table(alpha_pair, sigma2: float, d: int) -> Array:
    if alpha_pair is None:
        table = np.full((d, d), float(sigma2))
    else:
        table = np.asarray(alpha_pair, dtype=float)
        if table.ndim == 0:
            table = np.full((d, d), float(table))
        if table.shape != (d, d):
            raise InvalidParameter(f"alpha_pair must be a scalar or a {d}x{d} table")
    table = np.array(table, dtype=float)
    np.fill_diagonal(table, 0.0)
    return table


def _check(conditions: dict, strict: bool):
    if strict:
        bad = [k for k, ok in conditions.items() if not ok]
        if bad:
            raise InvalidParameter("violated preset condition: " + "; ".join(bad))


def dirichlet(a, b=1.0, sigma2: float = 1.0, alpha_pair=None, d: int | None = None,
              strict: bool = True) -> ModelInputs:
    """Dirichlet preset: ``f_i(x) = x^{b_i}``, ``g = 1``, ``p = Dir(a)``.

    Parameters
    ----------
    a : float or array_like
        Dirichlet parameters (scalars are broadcast to length ``d``).
    b : float or array_like
        Exponents of ``f_i``; ``b = 1`` gives the volatility-stabilized market.
    sigma2 : float
        Common value of the constants ``f_ij`` when ``alpha_pair`` is omitted.
    alpha_pair : array_like, optional
        Explicit symmetric ``(d, d)`` table of constants ``f_ij``.
    strict : bool
        Raise InvalidParameter unless ``gamma_i = a_i + b_i - 1 > 1``.
        Diagnostics load models with ``strict=False``.
    """
    if d is None:
        d = np.size(a) if np.ndim(a) else (np.size(b) if np.ndim(b) else 2)
    a = _vec(a, d, "a")
    b = _vec(b, d, "b")
    if np.any(a <= 0):
        raise InvalidParameter("a must be positive")
    if np.any(b < 1):
        raise InvalidParameter("b must be >= 1")
    if sigma2 <= 0:
        raise InvalidParameter("sigma2 must be positive")
    table = _pair_table(alpha_pair, sigma2, d)
    gamma = a + b - 1
    conds = {"gamma_i = a_i + b_i - 1 > 1": bool(np.all(gamma > 1))}
    _check(conds, strict)

    spec = TractableSpec(
        d=d,
        f=lambda x: x**b,
        f_pair=table,
        dlog_f=lambda x: b / x,
        d2log_f=lambda x: -b / x**2,
    )
    log_norm = gammaln(a.sum()) - gammaln(a).sum()
    dens = InvariantDensity(
        log_p=lambda x: ((a - 1) * np.log(x)).sum(axis=-1) + log_norm,
        grad_log_p=lambda x: (a - 1) / x,
        hess_log_p=lambda x: _diag(-(a - 1) / x**2),
        normalized=True,
        dirichlet_alpha=a,
        exact=True,
    )
    preset = Preset("dirichlet", {"a": a, "b": b, "alpha_pair": table, "gamma": gamma,
                                  "conditions": conds})
    kernel = (_kernels.dirichlet_kernel, b, gamma, np.zeros(1), table[None, :, :].copy())
    return from_tractable(spec, dens, "dirichlet", preset, kernel)


def vol_stabilized(a: float, d: int, sigma2: float = 1.0) -> ModelInputs:
    """Volatility-stabilized market: the Dirichlet preset with ``b = 1``."""
    return dirichlet(np.full(d, float(a)), 1.0, sigma2=sigma2, d=d)


def _diag(v: Array) -> Array:
    n, d = v.shape
    out = np.zeros((n, d, d))
    idx = np.arange(d)
    out[:, idx, idx] = v
    return out


def _log_qnorm(x: Array, q: float) -> Array:
    return np.log((x**q).sum(axis=-1)) / q


def _grad_log_qnorm(x: Array, q: float) -> Array:
    return x ** (q - 1) / (x**q).sum(axis=-1, keepdims=True)


def _hess_log_qnorm(x: Array, q: float) -> Array:
    s = (x**q).sum(axis=-1)
    v = x ** (q - 1)
    return _diag((q - 1) * x ** (q - 2) / s[:, None]) - q * v[:, :, None] * v[:, None, :] / (s**2)[:, None, None]


def gen_vol_stab(gamma, beta: float, sigma2: float = 1.0, K_tilde=None, d: int | None = None,
                 K_bounds: tuple[float, float] | None = None, grad_log_K=None,
                 strict: bool = True, n_bound_checks: int = 1000) -> ModelInputs:
    """Generalized volatility-stabilized preset.

    Covariance ``c_ij = -sigma2 K^2 x^i x^j (x_i^{1-2b} + x_j^{1-2b} - sum_k x_k^{2(1-b)})``
    with ``b = beta``; invariant density
    ``p ∝ |x|_{2b}^{d - |gamma|_1 - 2(d-1)b} prod x_i^{gamma_i + 2b - 2} K^{-2}``.

    ``K_tilde`` may be a positive constant (default 1) or a callable
    ``(n, d) -> (n,)``; callables need ``K_bounds=(lo, hi)``, which are
    asserted on ``n_bound_checks`` uniform points.  ``grad_log_K`` is
    optional (finite differences otherwise).  The drift field does not
    depend on ``K_tilde``.
    """
    if d is None:
        d = np.size(gamma) if np.ndim(gamma) else 2
    gamma = _vec(gamma, d, "gamma")
    if beta <= 0:
        raise InvalidParameter("beta must be positive")
    if sigma2 <= 0:
        raise InvalidParameter("sigma2 must be positive")
    q = 2.0 * beta
    b_exp = d - gamma.sum() - 2 * (d - 1) * beta
    e_phi = 2 * (1 + (d - 1) * beta) - d

    const_k = K_tilde is None or np.isscalar(K_tilde)
    if const_k:
        k0 = 1.0 if K_tilde is None else float(K_tilde)
        if not k0 > 0:
            raise InvalidParameter("K_tilde must be positive")
        k_fn = lambda x: np.full(x.shape[0], k0)  # noqa: E731
        glk = lambda x: np.zeros_like(x)  # noqa: E731
    else:
        if K_bounds is None:
            raise InvalidParameter("a K_tilde field needs declared bounds K_bounds=(lo, hi)")
        lo, hi = K_bounds
        if not 0 < lo <= hi:
            raise InvalidParameter("K_bounds must satisfy 0 < lo <= hi")
        pts = sample_dirichlet(np.ones(d), n_bound_checks, seed=0)
        kv = np.asarray(K_tilde(pts), dtype=float)
        if np.any(~np.isfinite(kv)) or kv.min() < lo or kv.max() > hi:
            raise InvalidParameter("K_tilde violates its declared bounds on sampled points")
        k_fn = K_tilde
        glk = grad_log_K or (lambda x: ambient_grad_fd(lambda y: np.log(K_tilde(y)), x, FD_STEP * x.min()))

    def cov(x):
        s2 = (x ** (2 * (1 - beta))).sum(axis=1)
        t = x ** (1 - 2 * beta)
        c = -(x[:, :, None] * x[:, None, :]) * (t[:, :, None] + t[:, None, :] - s2[:, None, None])
        c = c * (sigma2 * k_fn(x) ** 2)[:, None, None]
        return _fill_diagonal(c)

    conds = {
        "gamma_i > max(2(1 - beta), 1)": bool(np.all(gamma > max(2 * (1 - beta), 1.0))),
    }
    _check(conds, strict)

    def log_phi(x):
        return 2 * np.log(k_fn(x)) + e_phi * _log_qnorm(x, q) + 2 * (1 - beta) * np.log(x).sum(axis=-1)

    def grad_log_phi(x):
        return 2 * glk(x) + e_phi * _grad_log_qnorm(x, q) + 2 * (1 - beta) / x

    def hess_log_phi(x):
        h = e_phi * _hess_log_qnorm(x, q) + _diag(-2 * (1 - beta) / x**2)
        if not const_k:
            h = h + 2 * _jacobian_fd(glk, x, 1e-5 * x.min())
        return h

    def lp(x):
        return b_exp * _log_qnorm(x, q) + ((gamma + q - 2) * np.log(x)).sum(axis=-1) - 2 * np.log(k_fn(x))

    def glp(x):
        return b_exp * _grad_log_qnorm(x, q) + (gamma + q - 2) / x - 2 * glk(x)

    def hlp(x):
        h = b_exp * _hess_log_qnorm(x, q) + _diag(-(gamma + q - 2) / x**2)
        if not const_k:
            h = h - 2 * _jacobian_fd(glk, x, 1e-5 * x.min())
        return h

    exact = bool(abs(beta - 0.5) < 1e-15 and const_k)
    prop = gamma + q - 1
    if np.any(prop <= 0):
        prop = np.ones(d)
    dens = InvariantDensity(lp, glp, hlp, normalized=False, dirichlet_alpha=prop, exact=exact)
    kernel = None
    if const_k:
        kernel = (_kernels.gvs_kernel, gamma, np.array([beta, sigma2, k0]), np.zeros(1),
                  np.zeros((1, 1, 1)))
    preset = Preset("gen_vol_stab", {"gamma": gamma, "beta": float(beta), "sigma2": float(sigma2),
                                     "K_constant": const_k, "conditions": conds})
    return ModelInputs(d=d, density=dens, covariance_fn=cov, log_phi=log_phi,
                       grad_log_phi=grad_log_phi, hess_log_phi=hess_log_phi, preset=preset,
                       kernel=kernel, name="gen_vol_stab")


def logit_normal(mu, Sigma, a=3.0, b=3.0, sigma2: float = 1.0, alpha_pair=None,
                 d: int | None = None, proposal_alpha=None, strict: bool = True) -> ModelInputs:
    """Logit-normal preset: ``f_i(x) = x^{a_i} (1 - x)^{b_i}``, ``g = 1``.

    The density is ``p(x) ∝ prod 1/(x_i (1 - x_i)) * exp(-(L - mu)' Sigma^{-1} (L - mu) / 2)``
    with ``L = logit(x)`` coordinatewise, treated as unnormalized; integrals
    use self-normalized importance sampling from ``Dir(proposal_alpha)``
    (default all 2).
    """
    if d is None:
        d = np.size(mu)
    mu = _vec(mu, d, "mu")
    S = np.asarray(Sigma, dtype=float)
    if S.ndim == 0:
        S = float(S) * np.eye(d)
    if S.shape != (d, d) or not np.allclose(S, S.T):
        raise InvalidParameter(f"Sigma must be a symmetric {d}x{d} matrix")
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise InvalidParameter("Sigma must be positive definite") from exc
    Si = np.linalg.inv(S)
    a = _vec(a, d, "a")
    b = _vec(b, d, "b")
    if sigma2 <= 0:
        raise InvalidParameter("sigma2 must be positive")
    conds = {"a_i > 2": bool(np.all(a > 2)), "b_i > 2": bool(np.all(b > 2))}
    _check(conds, strict)
    table = _pair_table(alpha_pair, sigma2, d)

    spec = TractableSpec(
        d=d,
        f=lambda x: x**a * (1 - x) ** b,
        f_pair=table,
        dlog_f=lambda x: a / x - b / (1 - x),
        d2log_f=lambda x: -a / x**2 - b / (1 - x) ** 2,
    )

    def resid(x):
        return np.log(x) - np.log1p(-x) - mu

    def lp(x):
        r = resid(x)
        return -(np.log(x) + np.log1p(-x)).sum(axis=-1) - 0.5 * np.einsum("ni,ij,nj->n", r, Si, r)

    def glp(x):
        u = resid(x) @ Si
        return -1 / x + 1 / (1 - x) - u / (x * (1 - x))

    def hlp(x):
        u = resid(x) @ Si
        lp1 = 1 / (x * (1 - x))
        lp2 = (2 * x - 1) / (x * (1 - x)) ** 2
        h = -Si[None] * lp1[:, :, None] * lp1[:, None, :]
        return h + _diag(1 / x**2 + 1 / (1 - x) ** 2 - u * lp2)

    prop = np.full(d, 2.0) if proposal_alpha is None else _vec(proposal_alpha, d, "proposal_alpha")
    dens = InvariantDensity(lp, glp, hlp, normalized=False, dirichlet_alpha=prop, exact=False)
    kernel = (_kernels.logit_normal_kernel, a, b, mu, np.stack([table, Si]))
    preset = Preset("logit_normal", {"mu": mu, "Sigma": S, "a": a, "b": b, "alpha_pair": table,
                                     "conditions": conds})
    return from_tractable(spec, dens, "logit_normal", preset, kernel)


def preset_conditions(m: ModelInputs) -> dict[str, bool]:
    if m.preset is None:
        return {}
    return dict(m.preset.params.get("conditions", {}))


# ---------------------------------------------------------------------------
# structure checks


@dataclass(frozen=True)
class GraphReport:
    """Connectivity of the graph with edges ``{i, j}`` where ``f_ij(x) > 0``.

    ``components`` lists 0-based asset indices.  ``power_positive`` is the
    equivalent matrix test: ``(I + A)^{d-1}`` has strictly positive entries.
    """

    connected: bool
    components: list
    power_positive: bool

    def describe(self) -> str:
        if self.connected:
            return "connected"
        parts = ",".join("{" + ",".join(str(i + 1) for i in comp) + "}" for comp in self.components)
        return f"disconnected {parts}"


def adjacency(m: ModelInputs, x) -> NDArray[np.bool_]:
    x = as_point(x)
    if m.spec is not None:
        a = m.spec.pair_values(x[None])[0] > 0
    else:
        a = np.abs(m.covariance_fn(x[None])[0]) > 0
    a = a.copy()
    np.fill_diagonal(a, False)
    return a


def check_graph_connectivity(m: ModelInputs, x) -> GraphReport:
    """Union-find over the adjacency at ``x``; reports components when disconnected."""
    a = adjacency(m, x)
    d = a.shape[0]
    parent = list(range(d))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in zip(*np.nonzero(np.triu(a, 1))):
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(d):
        groups.setdefault(find(i), []).append(i)
    comps = sorted(groups.values())

    reach = a | np.eye(d, dtype=bool)
    power = np.eye(d, dtype=bool)
    steps = d - 1
    while steps:
        if steps & 1:
            power = (power.astype(int) @ reach.astype(int)) > 0
        reach = (reach.astype(int) @ reach.astype(int)) > 0
        steps >>= 1
    return GraphReport(connected=len(comps) == 1, components=comps, power_positive=bool(power.all()))


def _is_perm_invariant_preset(m: ModelInputs) -> dict[str, bool] | None:
    if m.preset is None:
        return None
    p = m.preset.params
    def same(v):
        v = np.asarray(v)
        return bool(np.all(v == v.flat[0]))

    def same_offdiag(t):
        t = np.asarray(t)
        off = t[~np.eye(t.shape[0], dtype=bool)]
        return bool(np.all(off == off[0]))

    if m.preset.kind == "dirichlet":
        return {"g permutation invariant": True, "common f_i": same(p["b"]),
                "common f_ij": same_offdiag(p["alpha_pair"]), "p permutation invariant": same(p["a"])}
    if m.preset.kind == "logit_normal":
        S = p["Sigma"]
        s_ok = bool(np.all(np.diag(S) == S[0, 0]) and same_offdiag(S)) if S.shape[0] > 1 else True
        return {"g permutation invariant": True, "common f_i": same(p["a"]) and same(p["b"]),
                "common f_ij": same_offdiag(p["alpha_pair"]),
                "p permutation invariant": same(p["mu"]) and s_ok}
    if m.preset.kind == "gen_vol_stab":
        return {"c permutation equivariant": bool(p["K_constant"]),
                "p permutation invariant": same(p["gamma"]) and bool(p["K_constant"])}
    return None


def rank_based_conditions(m: ModelInputs, n_checks: int = 20, seed: int = 0) -> dict[str, bool]:
    """Named symmetry conditions under which the model comes from a rank-based pair.

    Presets are checked structurally; other models numerically at random
    points and permutations (tolerance 1e-9, relative).
    """
    structural = _is_perm_invariant_preset(m)
    if structural is not None:
        return structural
    rng = np.random.default_rng(seed)
    xs = sample_dirichlet(np.ones(m.d), n_checks, seed)
    c_ok = p_ok = True
    for x in xs:
        perm = rng.permutation(m.d)
        c1 = m.covariance_fn(x[None])[0]
        c2 = m.covariance_fn(x[perm][None])[0]
        scale = max(1.0, np.abs(c1).max())
        c_ok &= bool(np.allclose(c2, c1[np.ix_(perm, perm)], rtol=0, atol=1e-9 * scale))
        l1, l2 = m.density.log_p(x[None])[0], m.density.log_p(x[perm][None])[0]
        p_ok &= bool(abs(l1 - l2) <= 1e-9 * max(1.0, abs(l1)))
    return {"c permutation equivariant": c_ok, "p permutation invariant": p_ok}


def is_rank_based_spec(m: ModelInputs) -> bool:
    """True when the model ``(c, p)`` is generated by a rank-based pair.

    For product-form presets this means ``g`` permutation invariant, a
    common ``f_i``, a common ``f_ij`` and a permutation-invariant density.
    """
    return all(rank_based_conditions(m).values())


# ---------------------------------------------------------------------------
# assumption diagnostics


@dataclass
class DiagnosticsReport:
    """Sampled checks of the regularity conditions on ``R = sqrt(p Phi)``.

    Advisory only: finite samples cannot certify boundedness or
    integrability.  ``checks`` maps condition names to pass/fail.
    """

    min_LR_over_R: float
    sampled_region: str
    boundary_decay: list
    integral_LR_over_R: tuple
    integral_L_log_R: tuple
    truncation_profile: dict
    checks: dict
    nan_flags: dict
    note: str = ("advisory: sampled minima and Monte Carlo integrals cannot prove "
                 "boundedness or integrability")

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def failed(self) -> list[str]:
        return [k for k, v in self.checks.items() if not v]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": self.checks,
            "failed": self.failed(),
            "min_LR_over_R": self.min_LR_over_R,
            "sampled_region": self.sampled_region,
            "boundary_decay": self.boundary_decay,
            "integral_LR_over_R": list(self.integral_LR_over_R),
            "integral_L_log_R": list(self.integral_L_log_R),
            "truncation_profile": self.truncation_profile,
            "nan_flags": self.nan_flags,
            "note": self.note,
        }


def _weighted_mean_se(v: Array, w: Array | None) -> tuple[float, float]:
    from .stats import weighted_mean_se

    return weighted_mean_se(v, w)


def assumption_diagnostics(m: ModelInputs, n_samples: int = 20000, seed: int = 0) -> DiagnosticsReport:
    """Sampled diagnostics for ``R -> 0`` at the boundary, ``LR/R`` bounded below,
    and integrability of ``|LR/R| p`` and ``|L log R| p``.

    Three sample sets are used: uniform points, density-weighted points, and a
    boundary-heavy Dirichlet(kappa) importance sample that resolves the
    truncated integrals ``I(delta) = int_{min x >= delta} |.| p`` for
    ``delta = 1e-1, ..., 1e-8``.  Divergence is flagged when the last three
    decades add at least half as much as the first three.
    """
    d = m.d
    ss = np.random.SeedSequence(seed).spawn(3)
    seeds = [int(s.generate_state(1)[0]) for s in ss]

    # boundary decay of R along rays from the barycenter to each face
    bary = barycenter(d)
    lr_bary = float(log_R(m, bary))
    decay = []
    ts = 1 - 10.0 ** -np.arange(1, 9)
    for i in range(d):
        face = np.full(d, 1.0 / (d - 1))
        face[i] = 0.0
        pts = (1 - ts)[:, None] * bary + ts[:, None] * face
        vals = np.asarray(log_R(m, pts), dtype=float)
        ok = bool(np.all(np.isfinite(vals)) and np.all(np.diff(vals[-4:]) < 0)
                  and vals[-1] < lr_bary - 1.0)
        decay.append({"face": i + 1, "log_R": vals.tolist(), "decays": ok})

    xu = sample_dirichlet(np.ones(d), n_samples, seeds[0])
    xp, wp = m.density.sample(n_samples, seeds[1], d)
    lr_u, _ = generator_terms(m, xu)
    lr_p, llog_p = generator_terms(m, xp)
    finite_p = np.isfinite(lr_p) & np.isfinite(llog_p)
    nan_flags = {"uniform": int((~np.isfinite(lr_u)).sum()), "density": int((~finite_p).sum())}
    wf = None if wp is None else wp[finite_p]
    int_ratio = _weighted_mean_se(np.abs(lr_p[finite_p]), wf)
    int_log = _weighted_mean_se(np.abs(llog_p[finite_p]), wf)
    all_lr = np.concatenate([lr_u[np.isfinite(lr_u)], lr_p[finite_p]])
    min_lr = float(all_lr.min()) if all_lr.size else float("nan")

    # boundary-heavy importance sample for truncation profiles
    alpha = m.density.dirichlet_alpha if m.density.dirichlet_alpha is not None else np.ones(d)
    kappa = min(0.2, 0.5 * float(np.min(alpha)))
    xb = sample_dirichlet(np.full(d, kappa), n_samples, seeds[2])
    keep = xb.min(axis=1) > 1e-10
    xb = xb[keep]
    lr_b, llog_b = generator_terms(m, xb)
    wb = importance_weights(m.density.log_p, np.full(d, kappa), xb)
    good = np.isfinite(lr_b) & np.isfinite(llog_b) & np.isfinite(wb)
    xb, lr_b, llog_b, wb = xb[good], lr_b[good], llog_b[good], wb[good]
    mins = xb.min(axis=1)
    deltas = 10.0 ** -np.arange(1, 9)
    tot = wb.sum()
    prof_ratio = [float((wb * np.abs(lr_b) * (mins >= dl)).sum() / tot) for dl in deltas]
    prof_log = [float((wb * np.abs(llog_b) * (mins >= dl)).sum() / tot) for dl in deltas]

    def converging(prof):
        head = prof[4] - prof[1]
        tail = prof[7] - prof[4]
        return not (tail > 0.5 * head and tail > 1e-6 * (1 + abs(prof[7])))

    shallow = lr_b[mins >= 1e-4]
    deep = lr_b[mins >= 1e-8]
    min_sh = float(shallow.min()) if shallow.size else float("nan")
    min_dp = float(deep.min()) if deep.size else float("nan")
    bounded = bool(np.isfinite(min_dp) and min_dp >= min_sh - 9 * max(abs(min_sh), 1e-12))

    checks = {
        "R -> 0 along rays to every face": all(r["decays"] for r in decay),
        "LR/R bounded below near the boundary": bounded,
        "integrability of |LR/R| p near the boundary": converging(prof_ratio),
        "integrability of |L log R| p near the boundary": converging(prof_log),
        "finite Monte Carlo integrals": bool(np.isfinite(int_ratio[0]) and np.isfinite(int_log[0])),
    }
    return DiagnosticsReport(
        min_LR_over_R=min_lr,
        sampled_region=f"{n_samples} uniform + {n_samples} density-weighted points; "
                       f"boundary sample down to min coordinate 1e-8",
        boundary_decay=decay,
        integral_LR_over_R=int_ratio,
        integral_L_log_R=int_log,
        truncation_profile={"delta": deltas.tolist(), "LR_over_R": prof_ratio, "L_log_R": prof_log,
                            "min_LR_over_R_shallow": min_sh, "min_LR_over_R_deep": min_dp},
        checks=checks,
        nan_flags=nan_flags,
    )


# ---------------------------------------------------------------------------
# model files

_PRESET_KEYS = {
    "dirichlet": {"preset", "d", "a", "b", "sigma2", "alpha_pair"},
    "gen_vol_stab": {"preset", "d", "gamma", "beta", "sigma2", "K_tilde"},
    "logit_normal": {"preset", "d", "mu", "Sigma", "a", "b", "sigma2", "alpha_pair", "proposal_alpha"},
}
_REQUIRED = {
    "dirichlet": ("d", "a"),
    "gen_vol_stab": ("d", "gamma", "beta"),
    "logit_normal": ("d", "mu", "Sigma"),
}


def model_from_dict(cfg: dict, strict: bool = True) -> ModelInputs:
    """Build a preset model from a parsed model file.

    Schema: ``{"preset": "dirichlet" | "gen_vol_stab" | "logit_normal", "d": int, ...}``
    with the preset's parameters as keys.  Errors raise ConfigError naming
    the offending key.
    """
    if not isinstance(cfg, dict):
        raise ConfigError("model file must contain a JSON object", key=None)
    kind = cfg.get("preset")
    if kind not in _PRESET_KEYS:
        raise ConfigError(f"model key 'preset': unknown or missing value {kind!r}", key="preset")
    for k in cfg:
        if k not in _PRESET_KEYS[kind]:
            raise ConfigError(f"model key '{k}': not a parameter of preset {kind}", key=k)
    for k in _REQUIRED[kind]:
        if k not in cfg:
            raise ConfigError(f"model key '{k}': required for preset {kind}", key=k)
    d = cfg["d"]
    if not isinstance(d, int) or isinstance(d, bool) or d < 2:
        raise ConfigError("model key 'd': must be an integer >= 2", key="d")

    def num(k, default=None):
        v = cfg.get(k, default)
        try:
            arr = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(f"model key '{k}': not numeric", key=k) from None
        if arr.ndim > 0 and arr.shape[0] != d:
            raise ConfigError(f"model key '{k}': expected length {d}", key=k)
        if not np.all(np.isfinite(arr)):
            raise ConfigError(f"model key '{k}': non-finite value", key=k)
        return arr if arr.ndim else float(arr)

    args = {k: num(k) for k in cfg if k not in ("preset", "d")}
    try:
        if kind == "dirichlet":
            return dirichlet(args["a"], args.get("b", 1.0), sigma2=args.get("sigma2", 1.0),
                             alpha_pair=args.get("alpha_pair"), d=d, strict=strict)
        if kind == "gen_vol_stab":
            return gen_vol_stab(args["gamma"], float(args["beta"]), sigma2=args.get("sigma2", 1.0),
                                K_tilde=args.get("K_tilde"), d=d, strict=strict)
        return logit_normal(args["mu"], args["Sigma"], args.get("a", 3.0), args.get("b", 3.0),
                            sigma2=args.get("sigma2", 1.0), alpha_pair=args.get("alpha_pair"),
                            d=d, proposal_alpha=args.get("proposal_alpha"), strict=strict)
    except InvalidParameter as exc:
        msg = str(exc)
        first = msg.split()[0] if msg else ""
        if first in cfg:
            key = first
        elif msg.startswith("violated"):
            key = {"dirichlet": "a", "gen_vol_stab": "gamma", "logit_normal": "a"}[kind]
        else:
            key = None
        raise ConfigError(f"model key '{key}': {msg}" if key else msg, key=key) from exc


def load_model(path, strict: bool = True) -> ModelInputs:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"model file not found: {path}", key="model") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file is not valid JSON: {exc}", key="model") from None
    return model_from_dict(cfg, strict=strict)


def validate_point(m: ModelInputs, x) -> Array:
    x = as_point(x)
    if x.shape[-1] != m.d:
        raise InvalidInput(f"point has dimension {x.shape[-1]}, model has d={m.d}")
    return x
