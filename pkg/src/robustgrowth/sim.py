"""Market-weight simulation under the worst-case dynamics and wealth accounting.

The state follows ``dX = c ell(X) dt + sigma(X) dW`` with ``sigma`` the PSD
square root of ``c``, discretized by a projected Euler scheme.  Relative
wealth of a portfolio ``pi`` with respect to the market accumulates as
``log(1 + sum_i (pi_i - X_i) dX_i / X_i)`` per step, which is exactly
self-financing in discrete time.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import _kernels
from . import model as mdl
from .errors import InvalidInput, InvalidParameter, NumericalError, StepSizeWarning
from .simplex import EPS_FLOOR, canonical, project_to_simplex, sample_dirichlet
from .stats import batch_means

Array = NDArray[np.float64]
GUARD = -1.0 + 1e-12


@dataclass(frozen=True)
class SimConfig:
    """Time grid and randomness of one simulated path.

    ``record_stride`` keeps every ``k``-th state (the first and last state are
    always kept); wealth is still integrated at every step.
    """

    dt: float
    T: float
    seed: int = 0
    scheme: str = "euler_project"
    record_stride: int = 1
    chunk_steps: int = 1 << 16

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameter("dt must be positive")
        if not self.T >= self.dt:
            raise InvalidParameter("T must be at least dt")
        if self.scheme != "euler_project":
            raise InvalidParameter(f"unknown scheme {self.scheme!r}")
        if self.record_stride < 1:
            raise InvalidParameter("record_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class SimPath:
    times: Array
    x: Array
    boundary_hits: int = 0


@dataclass
class WealthPath:
    """Log relative wealth (against the market) at the recorded times."""

    times: Array
    log_V: Array
    guard_trips: int = 0
    name: str = ""

    @property
    def growth(self) -> float:
        T = self.times[-1] - self.times[0]
        return float(self.log_V[-1] / T) if T > 0 else 0.0


def _kernel_for(m: mdl.ModelInputs):
    return m.kernel


def _python_step(m, x, z, dt):
    c = m.covariance_fn(x[None])[0]
    g = canonical(mdl.ell(m, x[None])[0])
    s = mdl.psd_sqrt(c)
    return x + (c @ g) * dt + (s @ z) * np.sqrt(dt)


def _run_chunk(m, x0, Z, dt, offset):
    n, d = Z.shape
    out = np.empty((n + 1, d))
    kern = _kernel_for(m)
    if kern is not None:
        fn, v1, v2, v3, M = kern
        failed, hits = _kernels.euler_loop(fn, v1, v2, v3, M, x0, np.ascontiguousarray(Z), dt, out)
        if failed >= 0:
            raise NumericalError(f"non-finite state at step {offset + failed}")
        return out, hits
    out[0] = x0
    x = x0
    hits = 0
    for k in range(n):
        y = _python_step(m, x, Z[k], dt)
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite state at step {offset + k}")
        hits += int(y.min() < EPS_FLOOR)
        x = project_to_simplex(y)
        out[k + 1] = x
    return out, hits


def _noise_chunks(cfg: SimConfig, d: int, noise: Array | None):
    n = cfg.n_steps
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != (n, d):
            raise InvalidInput(f"noise must have shape ({n}, {d})")
        for lo in range(0, n, cfg.chunk_steps):
            yield lo, noise[lo: lo + cfg.chunk_steps]
        return
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    for lo in range(0, n, cfg.chunk_steps):
        yield lo, rng.standard_normal((min(cfg.chunk_steps, n - lo), d))


def _record_index(n_steps: int, stride: int) -> Array:
    idx = np.arange(0, n_steps + 1, stride)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx


@dataclass
class SimulationResult:
    """One market path with wealth curves of several portfolios on it."""

    path: SimPath
    wealth: dict
    guard_trips: dict = field(default_factory=dict)

    def growth_rates(self, n_batches: int = 20) -> dict:
        return {k: growth_rate(w, n_batches) for k, w in self.wealth.items()}


def simulate(m: mdl.ModelInputs, x0, cfg: SimConfig, portfolios: dict | None = None,
             noise: Array | None = None, warn: bool = True) -> SimulationResult:
    """Simulate one path and integrate wealth for each portfolio along it.

    The path is generated chunk by chunk; wealth increments use every step
    while only every ``record_stride``-th state is stored.

    Parameters
    ----------
    m : ModelInputs
    x0 : array_like, shape (d,)
        Interior starting point.
    cfg : SimConfig
    portfolios : dict, optional
        Name to object with ``weights(x)`` for ``x`` of shape ``(n, d)``.
    noise : ndarray, shape (n_steps, d), optional
        Standard normal increments to use instead of drawing from ``cfg.seed``.
    """
    x0 = mdl.validate_point(m, x0)
    portfolios = portfolios or {}
    n = cfg.n_steps
    rec = _record_index(n, cfg.record_stride)
    xs = np.empty((rec.size, m.d))
    logv = {k: np.empty(rec.size) for k in portfolios}
    acc = {k: 0.0 for k in portfolios}
    trips = {k: 0 for k in portfolios}
    xs[0] = x0
    for k in portfolios:
        logv[k][0] = 0.0
    ri = 1
    hits = 0
    x = x0
    for lo, Z in _noise_chunks(cfg, m.d, noise):
        chunk, h = _run_chunk(m, x, Z, cfg.dt, lo)
        hits += h
        for name, pf in portfolios.items():
            inc, t = _log_increments(pf, chunk)
            trips[name] += t
            cum = acc[name] + np.cumsum(inc)
            sel = rec[(rec > lo) & (rec <= lo + Z.shape[0])]
            logv[name][ri: ri + sel.size] = cum[sel - lo - 1]
            acc[name] = cum[-1]
        sel = rec[(rec > lo) & (rec <= lo + Z.shape[0])]
        xs[ri: ri + sel.size] = chunk[sel - lo]
        ri += sel.size
        x = chunk[-1].copy()
    times = rec * cfg.dt
    wealth = {k: WealthPath(times, logv[k], trips[k], k) for k in portfolios}
    if warn:
        for k, t in trips.items():
            if t > 1e-3 * n:
                warnings.warn(f"{k}: log guard tripped on {t} of {n} steps; reduce dt",
                              StepSizeWarning, stacklevel=2)
    return SimulationResult(SimPath(times, xs, hits), wealth, trips)


def simulate_weights(m: mdl.ModelInputs, x0, cfg: SimConfig, noise: Array | None = None) -> SimPath:
    """Projected Euler path ``x <- proj(x + c ell dt + sigma sqrt(dt) Z)``.

    Returns the states at every ``record_stride``-th step.
    """
    return simulate(m, x0, cfg, None, noise).path


def _log_increments(pf, path: Array) -> tuple[Array, int]:
    x = path[:-1]
    pi = np.asarray(pf.weights(x))
    ret = ((pi - x) * (path[1:] - x) / x).sum(axis=1)
    low = ret <= GUARD
    if np.any(low):
        ret = np.where(low, GUARD, ret)
    return np.log1p(ret), int(low.sum())


def integrate_wealth(m: mdl.ModelInputs | None, path, portfolio, warn: bool = True) -> WealthPath:
    """Log relative wealth of ``portfolio`` along a stored path.

    Every step of ``path`` is treated as one rebalancing period, so pass a
    path recorded with ``record_stride = 1`` for full resolution.  Returns
    ``log V`` with ``log V[0] = 0``; steps whose return would be at or
    below ``-1 + 1e-12`` are capped and counted.
    """
    if isinstance(path, SimPath):
        times, xs = path.times, path.x
    else:
        xs = np.asarray(path, dtype=float)
        times = np.arange(xs.shape[0], dtype=float)
    inc, trips = _log_increments(portfolio, xs)
    logv = np.concatenate([[0.0], np.cumsum(inc)])
    if warn and trips > 1e-3 * max(1, inc.size):
        warnings.warn(f"log guard tripped on {trips} of {inc.size} steps; reduce dt",
                      StepSizeWarning, stacklevel=2)
    return WealthPath(times, logv, trips, getattr(portfolio, "name", ""))


def growth_rate(wp: WealthPath, n_batches: int = 20) -> tuple[float, float]:
    """``log V_T / T`` and its batch-means standard error.

    The recorded curve is cut into ``n_batches`` consecutive pieces of equal
    sample count; the standard error is that of the per-batch growth rates.
    A finite-horizon proxy for a limit in probability.
    """
    t = wp.times
    T = t[-1] - t[0]
    if T <= 0:
        return 0.0, 0.0
    est = float(wp.log_V[-1] / T)
    if t.size < n_batches + 1:
        return est, float("nan")
    cut = np.round(np.linspace(0, t.size - 1, n_batches + 1)).astype(int)
    rates = np.diff(wp.log_V[cut]) / np.diff(t[cut])
    return est, float(rates.std(ddof=1) / np.sqrt(n_batches))


def time_average(values, n_batches: int = 20) -> tuple[float, float]:
    """Time average of a sampled function along a path with batch-means error."""
    return batch_means(values, n_batches)


@dataclass
class CapitalCurve:
    """Per-rank statistics of Dirichlet draws sorted in descending order."""

    a: float
    d: int
    ranks: Array
    mean: Array
    quantiles: dict

    def rows(self):
        keys = sorted(self.quantiles)
        for k in range(self.d):
            yield [self.a, self.d, int(self.ranks[k]), self.mean[k]] + [self.quantiles[q][k] for q in keys]


def capital_distribution_curve(alpha, d: int, n_draws: int = 1000, seed: int = 0,
                               quantiles=(0.05, 0.5, 0.95)) -> CapitalCurve:
    """Ranked weights of ``n_draws`` Dirichlet draws: mean and quantiles per rank.

    ``alpha`` is a scalar (symmetric Dirichlet) or a length-``d`` array.
    """
    a = np.full(d, float(alpha)) if np.ndim(alpha) == 0 else np.asarray(alpha, dtype=float)
    if a.shape != (d,):
        raise InvalidParameter(f"alpha must be a scalar or have length {d}")
    x = sample_dirichlet(a, n_draws, seed)
    ranked = -np.sort(-x, axis=1)
    qs = {float(q): np.quantile(ranked, q, axis=0) for q in quantiles}
    label = float(alpha) if np.ndim(alpha) == 0 else float(np.mean(a))
    return CapitalCurve(label, d, np.arange(1, d + 1), ranked.mean(axis=0), qs)
