"""Compiled per-preset drift/covariance kernels and the projected Euler loop.

Every kernel has the signature ``kernel(x, v1, v2, v3, M) -> (c, drift_field)``
where ``v1, v2, v3`` are 1-D parameter arrays and ``M`` is a stack of
``(d, d)`` tables; the drift field is the zero-mean representative of ell.
"""
import numpy as np
from numba import njit

EPS_FLOOR = 1e-10


@njit(cache=True)
def _finish(c, g):
    d = c.shape[0]
    for i in range(d):
        s = 0.0
        for j in range(d):
            if j != i:
                s += c[i, j]
        c[i, i] = -s
    g -= g.mean()
    return c, g


@njit(cache=True)
def dirichlet_kernel(x, b, gamma, unused, M):
    d = x.shape[0]
    f = x**b
    c = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            c[i, j] = -M[0, i, j] * f[i] * f[j]
    g = gamma / (2.0 * x)
    return _finish(c, g)


@njit(cache=True)
def logit_normal_kernel(x, a, b, mu, M):
    d = x.shape[0]
    f = x**a * (1.0 - x) ** b
    c = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            c[i, j] = -M[0, i, j] * f[i] * f[j]
    L = np.log(x) - np.log1p(-x) - mu
    u = M[1] @ L
    g = 0.5 * ((a - 1.0) / x - (b - 1.0) / (1.0 - x) - u / (x * (1.0 - x)))
    return _finish(c, g)


@njit(cache=True)
def gvs_kernel(x, gamma, prm, unused, M):
    beta, sigma2, k = prm[0], prm[1], prm[2]
    d = x.shape[0]
    s2 = np.sum(x ** (2.0 * (1.0 - beta)))
    t = x ** (1.0 - 2.0 * beta)
    scale = sigma2 * k * k
    c = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            c[i, j] = -scale * x[i] * x[j] * (t[i] + t[j] - s2)
    q = 2.0 * beta
    xq1 = x ** (q - 1.0)
    sq = np.sum(x**q)
    g = (1.0 - 0.5 * np.sum(gamma)) * xq1 / sq + gamma / (2.0 * x)
    return _finish(c, g)


@njit(cache=True)
def project(y, eps):
    d = y.shape[0]
    u = np.sort(y)[::-1]
    css = 0.0
    tau = 0.0
    for k in range(d):
        css += u[k]
        t = (css - 1.0) / (k + 1.0)
        if u[k] - t > 0:
            tau = t
    p = np.maximum(y - tau, 0.0)
    n_low = 0
    rest = 0.0
    for i in range(d):
        if p[i] < eps:
            n_low += 1
        else:
            rest += p[i]
    if n_low > 0:
        scale = (1.0 - eps * n_low) / rest
        for i in range(d):
            if p[i] < eps:
                p[i] = eps
            else:
                p[i] *= scale
    return p


@njit(cache=True)
def psd_sqrt(c):
    d = c.shape[0]
    if d == 2:
        s = np.sqrt(max(c[0, 0], 0.0) * 0.5)
        out = np.empty((2, 2))
        out[0, 0] = s
        out[1, 1] = s
        out[0, 1] = -s
        out[1, 0] = -s
        return out
    lam, v = np.linalg.eigh(c)
    top = np.max(np.abs(lam))
    for i in range(d):
        if lam[i] <= 64 * 2.220446049250313e-16 * top:
            lam[i] = 0.0
        else:
            lam[i] = np.sqrt(lam[i])
    return (v * lam) @ v.T


_LOOPS = {}


def euler_loop(kernel, v1, v2, v3, M, x0, Z, dt, out):
    """Fill ``out[0..n]`` with the projected Euler path; returns (failed_step, boundary_hits).

    One compiled loop is built per kernel so the kernel call is inlined
    rather than dispatched through a function pointer.
    """
    loop = _LOOPS.get(kernel)
    if loop is None:
        loop = _LOOPS[kernel] = _make_loop(kernel)
    return loop(v1, v2, v3, M, x0, Z, dt, out)


def _make_loop(kernel):
    @njit
    def loop(v1, v2, v3, M, x0, Z, dt, out):
        n = Z.shape[0]
        out[0] = x0
        x = x0.copy()
        sq = np.sqrt(dt)
        hits = 0
        for k in range(n):
            c, g = kernel(x, v1, v2, v3, M)
            s = psd_sqrt(c)
            d = x.shape[0]
            y = np.empty(d)
            ok = True
            low = False
            for i in range(d):
                acc = x[i]
                for j in range(d):
                    acc += c[i, j] * g[j] * dt + s[i, j] * Z[k, j] * sq
                y[i] = acc
                if not np.isfinite(acc):
                    ok = False
                if acc < EPS_FLOOR:
                    low = True
            if not ok:
                return k, hits
            if low:
                hits += 1
                x = project(y, EPS_FLOOR)
            else:
                # interior point: the projection is a shift along (1, ..., 1)
                x = y - (np.sum(y) - 1.0) / d
            out[k + 1] = x
        return -1, hits

    return loop
