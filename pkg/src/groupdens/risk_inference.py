"""Fitted density, CDF, quantiles, Value-at-Risk and their credible intervals.

All integrals are midpoint sums over the fine grid; the CDF is linear inside
each bin, so its derivative there is the bin density ``pi_i / delta``.

The derivative of a quantile with respect to the spline coefficients is::

    dQ/dtheta_k = -( int_{a0}^{Q} b_k f  -  p int b_k f ) / f(Q)

(an increase of ``F`` at fixed ``x`` lowers the quantile).  The variance of
the quantile only depends on this vector through a quadratic form.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .density_model import (
    class_central_moments,
    moment_covariance,
    moment_derivatives,
    normalize_identification,
    softmax_probabilities,
    stabilized_inverse,
)
from .grid_basis import FineGrid, SplineBasis

QUANTILE_TOL = 1e-13
QUANTILE_MAX_ITERS = 100


@dataclass(frozen=True)
class FittedDensity:
    """Continuous density ``exp(eta(x)) / Z`` on ``(a0, aJ)``."""

    theta: np.ndarray
    pivot: int
    basis: SplineBasis = field(repr=False)
    grid: FineGrid = field(repr=False)
    log_norm: float
    pi: np.ndarray = field(repr=False)
    cdf_edges: np.ndarray = field(repr=False)

    @classmethod
    def from_theta(cls, theta, basis: SplineBasis, grid: FineGrid) -> "FittedDensity":
        theta, pivot = normalize_identification(theta)
        eta = basis.B @ theta
        top = eta.max()
        log_norm = float(top + np.log(np.exp(eta - top).sum() * grid.delta))
        pi = softmax_probabilities(theta, basis.B)
        cdf = np.concatenate(([0.0], np.cumsum(pi)))
        cdf[-1] = 1.0
        return cls(theta, pivot, basis, grid, log_norm, pi, cdf)

    @classmethod
    def from_fit(cls, fit) -> "FittedDensity":
        return cls.from_theta(fit.theta, fit.setup.basis, fit.setup.grid)

    @property
    def support(self) -> tuple[float, float]:
        return self.grid.a0, self.grid.aJ

    def bin_index(self, x) -> np.ndarray:
        idx = np.floor((np.asarray(x, dtype=float) - self.grid.a0) / self.grid.delta).astype(int)
        return np.clip(idx, 0, self.grid.I - 1)


def density_at(x, fitted: FittedDensity):
    """Density at ``x``; zero outside the support."""
    x = np.asarray(x, dtype=float)
    eta = fitted.basis.evaluate(x.ravel()) @ fitted.theta
    dens = np.exp(eta - fitted.log_norm)
    a0, aJ = fitted.support
    dens[(x.ravel() < a0) | (x.ravel() > aJ)] = 0.0
    return dens.reshape(x.shape) if x.ndim else float(dens[0])


def cdf_at(x, fitted: FittedDensity, return_flag: bool = False):
    """CDF at ``x`` (linear within bins).  Points outside the support are clamped.

    With ``return_flag`` also returns a boolean array marking clamped points.
    """
    x = np.asarray(x, dtype=float)
    a0, aJ = fitted.support
    outside = (x < a0) | (x > aJ)
    xc = np.clip(x, a0, aJ)
    i = fitted.bin_index(xc)
    frac = (xc - fitted.grid.edges[i]) / fitted.grid.delta
    F = fitted.cdf_edges[i] + fitted.pi[i] * frac
    F = np.where(x <= a0, 0.0, np.where(x >= aJ, 1.0, F))
    F = F if x.ndim else float(F)
    if return_flag:
        return F, outside
    return F


def _bin_density(x: float, fitted: FittedDensity) -> float:
    return float(fitted.pi[fitted.bin_index(x)] / fitted.grid.delta)


def quantile(p, fitted: FittedDensity, tol: float = QUANTILE_TOL):
    """Invert the fitted CDF by Newton steps from the last grid edge below ``p``.

    Accepts a scalar or an array of probabilities.  Each iterate is kept
    inside the bin bracketing the root; a step leaving it is replaced by
    bisection.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr <= 0.0) | (p_arr >= 1.0)):
        raise ValueError(f"p must lie in (0, 1), got {p}")
    flat = p_arr.ravel()
    edges = fitted.grid.edges
    i0 = np.searchsorted(fitted.cdf_edges, flat, side="right") - 1
    i0 = np.clip(i0, 0, fitted.grid.I - 1)
    lo, hi = edges[i0].copy(), edges[i0 + 1].copy()
    x = lo.copy()
    active = np.ones(len(flat), dtype=bool)
    for _ in range(QUANTILE_MAX_ITERS):
        gap = flat[active] - cdf_at(x[active], fitted)
        done = np.abs(gap) < tol
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            break
        idx, gap = idx[~done], gap[~done]
        f = density_at(x[idx], fitted)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = x[idx] + np.where(f > 1e-300, gap / f, np.inf)
        outside = ~((cand >= lo[idx]) & (cand <= hi[idx]))
        cand[outside] = 0.5 * (lo[idx] + hi[idx])[outside]
        below = cdf_at(cand, fitted) < flat[idx]
        lo[idx] = np.where(below, np.maximum(lo[idx], cand), lo[idx])
        hi[idx] = np.where(below, hi[idx], np.minimum(hi[idx], cand))
        x[idx] = cand
    x = np.clip(x, fitted.grid.a0, fitted.grid.aJ)
    return x.reshape(p_arr.shape) if p_arr.ndim else float(x[0])


def quantile_gradient(p: float, fitted: FittedDensity, q: float | None = None) -> np.ndarray:
    """Gradient of ``Q(p)`` w.r.t. all ``K`` spline coefficients."""
    if q is None:
        q = quantile(p, fitted)
    i = int(fitted.bin_index(q))
    frac = (q - fitted.grid.edges[i]) / fitted.grid.delta
    weights = fitted.pi.copy()
    weights[i + 1:] = 0.0
    weights[i] *= frac
    B = fitted.basis.B
    below = weights @ B
    total = fitted.pi @ B
    return -(below - p * total) / _bin_density(q, fitted)


@dataclass(frozen=True)
class InformationMatrix:
    """Observed information and the covariance of theta without the pivot."""

    full: np.ndarray
    pivot: int
    reduced: np.ndarray
    covariance: np.ndarray
    ridged: bool = False

    def keep(self) -> np.ndarray:
        return np.delete(np.arange(len(self.full)), self.pivot)


def frequency_neg_hessian(theta, basis: SplineBasis, grid: FineGrid, freqs, lam: float,
                          P) -> np.ndarray:
    """Minus the Hessian of ``sum_j n_j log gamma_j - lam/2 theta'P theta``.

    Equal to the ungrouped multinomial information ``B'WB + lam P`` minus the
    information lost by grouping the bins into classes.
    """
    freqs = np.asarray(freqs, dtype=float)
    n = freqs.sum()
    B = basis.B
    pi = softmax_probabilities(theta, B)
    Bbar = pi @ B
    BWB = n * ((B * pi[:, None]).T @ B - np.outer(Bbar, Bbar))
    J = grid.J
    gamma = np.bincount(grid.bin_class, weights=pi, minlength=J)
    loss = np.zeros_like(BWB)
    for j in range(J):
        if freqs[j] == 0:
            continue
        sel = grid.bin_class == j
        pb = pi[sel, None] * B[sel]  # c_ji pi_i b_ik
        class_mean_b = pb.sum(axis=0) / gamma[j]
        loss += freqs[j] / gamma[j] * (pb.T @ (B[sel] - class_mean_b))
    out = BWB - loss + lam * P
    return 0.5 * (out + out.T)


def information_matrix(fit) -> InformationMatrix:
    """Observed information of a fit, reduced by deleting the pivot coefficient."""
    setup = fit.setup
    theta = fit.theta
    J_full = frequency_neg_hessian(theta, setup.basis, setup.grid, setup.dataset.freqs,
                                   fit.lam, setup.penalty.P)
    q = setup.order
    if q > 0:
        pi = softmax_probabilities(theta, setup.basis.B)
        moments = class_central_moments(pi, setup.grid)
        sigma = moment_covariance(moments, np.maximum(setup.dataset.freqs, 1), order=q)
        dmu = moment_derivatives(theta, setup.basis, setup.grid, moments, pi=pi, order=q)
        for j in np.flatnonzero(setup.moment_classes):
            J_full += dmu[j].T @ stabilized_inverse(sigma[j]) @ dmu[j]
    J_full = 0.5 * (J_full + J_full.T)
    return reduce_information(J_full, fit.pivot)


def reduce_information(J_full: np.ndarray, pivot: int) -> InformationMatrix:
    keep = np.delete(np.arange(len(J_full)), pivot)
    reduced = J_full[np.ix_(keep, keep)]
    ridged = False
    try:
        np.linalg.cholesky(reduced)
    except np.linalg.LinAlgError:
        warnings.warn("reduced information not positive definite; adding a ridge",
                      RuntimeWarning)
        reduced = reduced + 1e-8 * np.mean(np.diag(reduced)) * np.eye(len(keep))
        ridged = True
    cov = np.linalg.inv(reduced)
    return InformationMatrix(J_full, pivot, reduced, 0.5 * (cov + cov.T), ridged)


@dataclass(frozen=True)
class QuantileEstimate:
    p: float
    q_hat: float
    s_q: float
    ci_lower: float
    ci_upper: float
    alpha: float
    ridged: bool = False

    def back_transformed(self, base: float = 10.0) -> "QuantileEstimate":
        """Map point and interval through ``base ** x`` (``s_q`` stays on the fit scale)."""
        return QuantileEstimate(self.p, base ** self.q_hat, self.s_q, base ** self.ci_lower,
                                base ** self.ci_upper, self.alpha, self.ridged)

    def covers(self, value: float) -> bool:
        return self.ci_lower <= value <= self.ci_upper


def quantile_sd(p: float, fitted: FittedDensity, info: InformationMatrix,
                q: float | None = None) -> float:
    if fitted.pivot != info.pivot:
        raise ValueError("density and information matrix use different pivots")
    g = quantile_gradient(p, fitted, q)[info.keep()]
    return float(np.sqrt(max(g @ info.covariance @ g, 0.0)))


def quantile_credible_interval(p: float, alpha: float, fitted: FittedDensity,
                               info: InformationMatrix) -> QuantileEstimate:
    """Normal-approximation ``100(1-alpha)%`` interval for ``Q(p)``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    q = quantile(p, fitted)
    s = quantile_sd(p, fitted, info, q)
    half = norm.ppf(1.0 - alpha / 2.0) * s
    return QuantileEstimate(p, q, s, q - half, q + half, alpha, info.ridged)


def value_at_risk(epsilon: float, fitted: FittedDensity, info: InformationMatrix,
                  alpha: float = 0.05, back_transform: str = "none") -> QuantileEstimate:
    """``VaR_epsilon`` = ``Q(1 - epsilon)``; ``back_transform="exp10"`` maps log10 fits back."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    est = quantile_credible_interval(1.0 - epsilon, alpha, fitted, info)
    if back_transform == "exp10":
        return est.back_transformed(10.0)
    if back_transform != "none":
        raise ValueError(f"unknown back-transform {back_transform!r}")
    return est
