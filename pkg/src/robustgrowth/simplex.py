"""Simplex geometry: validation, projection, ranking, sampling and tangent differentials.

Points are stored in full ambient coordinates ``x = (x^1, ..., x^d)`` with
``x^i > 0`` and ``sum(x) = 1``.  Arrays of points have shape ``(..., d)``.
Tangent vectors are only defined modulo the all-ones vector; the canonical
representative subtracts the coordinate mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import BoundaryError, InvalidInput, InvalidParameter

EPS_FLOOR = 1e-10
SAMPLE_BLOCK = 4096


def as_point(x, renormalize: bool = True) -> NDArray[np.float64]:
    """Validate (and by default renormalize) one point or a batch of points.

    Raises InvalidInput for non-finite or non-positive coordinates.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise InvalidInput("simplex point needs at least one coordinate")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("simplex point has non-finite coordinates")
    if np.any(x <= 0):
        raise InvalidInput("simplex point must have strictly positive coordinates")
    if renormalize:
        x = x / x.sum(axis=-1, keepdims=True)
    return x


def barycenter(d: int) -> NDArray[np.float64]:
    return np.full(d, 1.0 / d)


def canonical(v) -> NDArray[np.float64]:
    """Zero-mean representative of a tangent vector (works on batches)."""
    v = np.asarray(v, dtype=float)
    return v - v.mean(axis=-1, keepdims=True)


def tangent_equal(u, v, atol: float = 1e-10) -> bool:
    """True if ``u - v`` is a constant vector up to ``atol``."""
    diff = canonical(np.asarray(u, dtype=float) - np.asarray(v, dtype=float))
    return bool(np.all(np.abs(diff) <= atol))


@dataclass(frozen=True)
class TangentVector:
    """A tangent vector of the simplex, i.e. a class modulo ``(1, ..., 1)``."""

    comps: NDArray[np.float64]

    def canonical(self) -> NDArray[np.float64]:
        return canonical(self.comps)

    def equals(self, other, atol: float = 1e-10) -> bool:
        other = other.comps if isinstance(other, TangentVector) else other
        return tangent_equal(self.comps, other, atol)


def _project_sorted(y: NDArray[np.float64]) -> NDArray[np.float64]:
    # Euclidean projection onto the closed simplex, batched over leading axes
    d = y.shape[-1]
    u = -np.sort(-y, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    k = np.arange(1, d + 1)
    cond = u - css / k > 0
    rho = d - 1 - np.argmax(cond[..., ::-1], axis=-1)
    tau = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1.0)
    return np.maximum(y - tau, 0.0)


def floor_to_open(p: NDArray[np.float64], eps: float = EPS_FLOOR) -> NDArray[np.float64]:
    """Raise coordinates below ``eps`` to ``eps`` and shrink the others to keep the sum at 1."""
    low = p < eps
    if not np.any(low):
        return p
    p = np.array(p, dtype=float, copy=True)
    n_low = low.sum(axis=-1, keepdims=True)
    rest = np.where(low, 0.0, p).sum(axis=-1, keepdims=True)
    scale = (1.0 - eps * n_low) / rest
    return np.where(low, eps, p * scale)


def project_to_simplex(y, eps: float = EPS_FLOOR) -> NDArray[np.float64]:
    """Euclidean projection onto the simplex, nudged into the open simplex.

    Parameters
    ----------
    y : array_like, shape (..., d)
        Arbitrary finite vectors.
    eps : float
        Coordinates of the projection smaller than ``eps`` are floored to
        ``eps``; the remaining mass is rescaled so the sum stays 1.

    Returns
    -------
    ndarray, shape (..., d)
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InvalidInput("project_to_simplex: non-finite input")
    return floor_to_open(_project_sorted(y), eps)


@dataclass(frozen=True)
class RankVector:
    """Descending order statistics and the 0-based index of the asset at each rank."""

    sorted: NDArray[np.float64]
    perm: NDArray[np.int64]


def rank(x) -> RankVector:
    """Rank a point in descending order; ties go to the lowest original index.

    ``perm[k]`` is the (0-based) index of the asset holding rank ``k + 1``.
    """
    x = np.asarray(x, dtype=float)
    perm = np.argsort(-x, kind="stable")
    return RankVector(sorted=x[perm], perm=perm)


def block_rngs(seed: int, n_blocks: int) -> list[np.random.Generator]:
    """Independent generators for fixed-size work blocks.

    Children of one ``SeedSequence`` depend only on their spawn index, so a
    block's stream is the same however the blocks are scheduled.
    """
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def _n_blocks(n: int, block: int) -> int:
    return (n + block - 1) // block


def sample_dirichlet(alpha, n: int, seed: int, block: int = SAMPLE_BLOCK) -> NDArray[np.float64]:
    """Draw ``n`` Dirichlet(alpha) points by normalizing gamma variates.

    Draws are produced in blocks of ``block`` rows, each with its own child
    stream of ``seed``; the result is identical however blocks are scheduled.
    Shapes below 1 are drawn in log space, and coordinates under
    ``EPS_FLOOR`` are floored so the output stays in the open simplex.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size < 1:
        raise InvalidParameter("alpha must be a non-empty 1-D array")
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise InvalidParameter("Dirichlet parameters must be positive")
    if n < 1:
        raise InvalidParameter("n must be >= 1")
    out = np.empty((n, alpha.size))
    for b, rng in enumerate(block_rngs(seed, _n_blocks(n, block))):
        lo, hi = b * block, min(n, (b + 1) * block)
        out[lo:hi] = _dirichlet_block(rng, alpha, hi - lo)
    return out


def _dirichlet_block(rng: np.random.Generator, alpha, n: int) -> NDArray[np.float64]:
    small = alpha < 1.0
    if not np.any(small):
        g = rng.standard_gamma(alpha, size=(n, alpha.size))
        return floor_to_open(g / g.sum(axis=1, keepdims=True))
    # shape augmentation in log space: Gamma(a) = Gamma(a + 1) * U^(1/a),
    # so tiny shapes do not underflow to exactly 0
    shape = np.where(small, alpha + 1.0, alpha)
    logg = np.log(rng.standard_gamma(shape, size=(n, alpha.size)))
    u = rng.random(size=(n, alpha.size))
    logg = np.where(small, logg + np.log1p(-u) / alpha, logg)
    logg -= logg.max(axis=1, keepdims=True)
    g = np.exp(logg)
    return floor_to_open(g / g.sum(axis=1, keepdims=True))


def grad_fd(f, x, h: float | None = None) -> NDArray[np.float64]:
    """Tangent gradient of a scalar field by central differences.

    Differentiates along ``e_i - e_d`` for ``i < d`` and returns an ambient
    vector whose last component is 0 (a representative of the tangent class).

    Parameters
    ----------
    f : callable
        Maps an array of points of shape ``(k, d)`` to values of shape ``(k,)``.
    x : array_like, shape (d,)
        Interior point.
    h : float, optional
        Step; defaults to ``1e-6 * min(x)``.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    if h is None:
        h = 1e-6 * x.min()
    if h <= 0:
        raise InvalidParameter("finite-difference step must be positive")
    if x.min() <= h:
        raise BoundaryError("point within one step of the simplex boundary")
    dirs = np.eye(d)[: d - 1] - np.eye(d)[d - 1]
    pts = np.concatenate([x + h * dirs, x - h * dirs])
    vals = np.asarray(f(pts), dtype=float).reshape(-1)
    out = np.zeros(d)
    out[: d - 1] = (vals[: d - 1] - vals[d - 1:]) / (2.0 * h)
    return out


def ambient_grad_fd(f, x, h: float) -> NDArray[np.float64]:
    """Central-difference gradient of ``f`` in all d ambient directions (batched x)."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    g = np.empty_like(x)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        g[..., i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g
