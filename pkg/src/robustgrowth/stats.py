"""Small Monte Carlo helpers: weighted means with standard errors and batch means."""
from __future__ import annotations

import numpy as np


def weighted_mean_se(v, w=None) -> tuple[float, float]:
    """Mean and standard error, plain or self-normalized importance sampling.

    With weights the standard error is the delta-method value
    ``sqrt(sum w^2 (v - mean)^2) / sum w``.
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    if n == 0:
        return float("nan"), float("nan")
    if w is None:
        mean = float(v.mean())
        se = float(v.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
        return mean, se
    w = np.asarray(w, dtype=float)
    sw = w.sum()
    mean = float((w * v).sum() / sw)
    se = float(np.sqrt((w**2 * (v - mean) ** 2).sum()) / sw)
    return mean, se


def effective_sample_size(w) -> float:
    w = np.asarray(w, dtype=float)
    return float(w.sum() ** 2 / (w**2).sum())


def batch_means(values, n_batches: int = 20) -> tuple[float, float]:
    """Grand mean of a time series and its batch-means standard error."""
    values = np.asarray(values, dtype=float)
    n = values.size // n_batches
    if n < 1:
        raise ValueError("series shorter than the number of batches")
    b = values[: n * n_batches].reshape(n_batches, n).mean(axis=1)
    return float(values.mean()), float(b.std(ddof=1) / np.sqrt(n_batches))
