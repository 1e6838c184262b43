"""Figures rendered next to the data files when the CLI is run with ``--plot``.

matplotlib is imported lazily so the library and the data path do not need it.
"""
from __future__ import annotations

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_weights(path, x, curves: dict, title: str = "") -> str:
    """Weight of asset 1 against the market weight ``x^1`` for each portfolio."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, pi1 in curves.items():
        ax.plot(x, pi1, label=name)
    ax.set_xlabel("market weight $x^1$")
    ax.set_ylabel(r"portfolio weight $\pi^1$")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_wealth(path, times, curves: dict, title: str = "") -> str:
    """Log relative wealth curves on one market path."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, lv in curves.items():
        ax.plot(times, lv, label=name)
    ax.set_xlabel("time")
    ax.set_ylabel("log relative wealth")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_capital_curves(path, curves) -> str:
    """Log-log ranked mean weight against rank, one line per ``(a, d)``."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for c in curves:
        ax.loglog(c.ranks, c.mean, label=f"a={c.a:g}, d={c.d}")
    ax.set_xlabel("rank")
    ax.set_ylabel("market weight")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_mixture(path, mu) -> str:
    """Bar chart of the fitted mixture weights."""
    plt = _pyplot()
    mu = np.asarray(mu)
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(np.arange(1, mu.size + 1), mu)
    ax.set_xlabel("generator m")
    ax.set_ylabel(r"$\hat\mu_m$")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
