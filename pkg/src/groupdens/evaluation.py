"""Distances between fitted and reference densities, and moment diagnostics.

``rimse`` follows the usual definition in this literature, the
``f``-weighted integrated squared error, *without* a square root, despite
the name.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .dataset import GroupedDataset
from .density_model import moment_covariance

P_POINTS = 999
X_POINTS = 2000
SUPPORT_EPS = 1e-12


def _p_grid(points: int = P_POINTS) -> np.ndarray:
    return (np.arange(points) + 0.5) / points


def _x_grid(lower: float, upper: float, points: int = X_POINTS):
    h = (upper - lower) / points
    return lower + h * (np.arange(points) + 0.5), h


def _evaluate_quantiles(q: Callable, p: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(q(p), dtype=float)
        if out.shape == p.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([q(v) for v in p], dtype=float)


def l1_quantile_distance(q_true: Callable, q_fit: Callable, points: int = P_POINTS) -> float:
    """Midpoint approximation of ``int_0^1 |Q_fit(p) - Q_true(p)| dp``.

    Quantile functions may be vectorized; scalar-only callables are mapped.
    """
    p = _p_grid(points)
    a = _evaluate_quantiles(q_true, p)
    b = _evaluate_quantiles(q_fit, p)
    return float(np.mean(np.abs(b - a)))


def rimse(f_true: Callable, f_fit: Callable, lower: float, upper: float,
          points: int = X_POINTS) -> float:
    """``int (f_fit - f_true)^2 f_true dx`` over ``[lower, upper]``."""
    x, h = _x_grid(lower, upper, points)
    ft = np.asarray(f_true(x), dtype=float)
    ff = np.asarray(f_fit(x), dtype=float)
    return float(np.sum((ff - ft) ** 2 * ft) * h)


def kl_divergence(f_true: Callable, f_fit: Callable, lower: float, upper: float,
                  points: int = X_POINTS) -> float:
    """``int f_true log(f_true / f_fit) dx`` restricted to ``f_true > 1e-12``.

    Returns ``inf`` when the fit vanishes where the reference does not.
    """
    x, h = _x_grid(lower, upper, points)
    ft = np.asarray(f_true(x), dtype=float)
    ff = np.asarray(f_fit(x), dtype=float)
    live = ft > SUPPORT_EPS
    if np.any(ff[live] <= 0):
        return float("inf")
    return float(np.sum(ft[live] * np.log(ft[live] / ff[live])) * h)


@dataclass(frozen=True)
class DensityComparison:
    l1_quantile: float
    rimse: float
    kl: float


def compare_densities(f_true, f_fit, q_true, q_fit, lower, upper) -> DensityComparison:
    return DensityComparison(
        l1_quantile=l1_quantile_distance(q_true, q_fit),
        rimse=rimse(f_true, f_fit, lower, upper),
        kl=kl_divergence(f_true, f_fit, lower, upper),
    )


def uniform_baseline_expectation(g: Callable, dataset: GroupedDataset) -> float:
    """E[g(X)] when each class's frequency is spread uniformly over the class."""
    cuts = dataset.class_cuts
    total = 0.0
    for j, nj in enumerate(dataset.freqs):
        if nj == 0:
            continue
        lo, hi = cuts[j], cuts[j + 1]
        val, _ = integrate.quad(g, lo, hi)
        total += nj / (dataset.n * (hi - lo)) * val
    return total


@dataclass(frozen=True)
class MomentDiagnostic:
    cls: int
    lower: float
    upper: float
    freq: int
    order: int
    observed: float
    fitted: float
    z: float


def moment_diagnostics(fit, dataset: GroupedDataset | None = None) -> list[MomentDiagnostic]:
    """Observed vs fitted class moments with z-scores from the moment covariance."""
    dataset = dataset if dataset is not None else fit.setup.dataset
    R = dataset.order
    if R < 1:
        return []
    mu = fit.moments.mu
    sigma = moment_covariance(fit.moments, np.maximum(dataset.freqs, 1), order=4)
    rows = []
    for j in range(dataset.J):
        if dataset.freqs[j] == 0:
            continue
        for r in range(R):
            obs, fitted = dataset.moments[j, r], mu[j, r]
            sd = np.sqrt(sigma[j, r, r])
            z = (obs - fitted) / sd if sd > 0 else 0.0
            rows.append(MomentDiagnostic(j + 1, float(dataset.class_cuts[j]),
                                         float(dataset.class_cuts[j + 1]),
                                         int(dataset.freqs[j]), r + 1, float(obs),
                                         float(fitted), float(z)))
    return rows
