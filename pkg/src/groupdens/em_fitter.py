"""Penalized EM estimation of the spline coefficients from grouped summaries.

One code path covers frequencies only (order 0), frequencies and means
(order 1), and frequencies with two or four central moments.  The moment
covariance is frozen at the start of every M-step, so the M-step maximizes::

    sum_i k_i log pi_i - lam/2 |D theta|^2 - 1/2 sum_j r_j' S_j^{-1} r_j

with ``r_j`` the observed minus model moments of class ``j``.  For order 1
the block ``S_j`` is ``sigma_j^2 / n_j``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import log_softmax

from .dataset import GroupedDataset
from .density_model import (
    ClassMoments,
    EmptyClassError,
    class_central_moments,
    moment_covariance,
    moment_derivatives,
    normalize_identification,
    softmax_probabilities,
    stabilized_inverse,
)
from .grid_basis import (
    FineGrid,
    PenaltyMatrix,
    SplineBasis,
    aligned_bin_count,
    build_basis,
    build_fine_grid,
    build_penalty,
)

log = logging.getLogger(__name__)

LAMBDA_MIN = 1e-6
LAMBDA_MAX = 1e12
EDF_NUMERATOR_FLOOR = 0.1
MAX_HALVINGS = 20


class OptimizerError(RuntimeError):
    """The Newton M-step could not find a finite objective value."""


class DegenerateClassError(RuntimeError):
    """A class with observations has vanishing model probability."""


@dataclass(frozen=True)
class FitConfig:
    """Tuning knobs of :func:`fit`.

    ``lam`` is either a positive number (kept fixed) or ``"auto"``.  With
    ``align_bins`` the bin count is raised to the smallest value
    ``>= target_bins`` that puts every class cut on a bin edge.
    """

    K: int = 25
    target_bins: int = 300
    align_bins: bool = True
    penalty_order: int = 2
    ridge: float = 1e-6
    lam: float | str = "auto"
    lambda_init: float = 1.0
    em_max_iters: int = 5000
    newton_max_iters: int = 50
    theta_tol: float = 1e-6
    loglik_tol: float = 1e-8
    lambda_tol: float = 1e-4

    def __post_init__(self):
        if self.ridge <= 0:
            raise ValueError("ridge must be positive")
        for name in ("theta_tol", "loglik_tol", "lambda_tol", "lambda_init"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lam != "auto" and not float(self.lam) > 0:
            raise ValueError("lam must be 'auto' or a positive number")

    @property
    def auto_lambda(self) -> bool:
        return self.lam == "auto"


@dataclass(frozen=True)
class ModelSetup:
    """Everything that stays fixed while a dataset is fitted."""

    dataset: GroupedDataset
    grid: FineGrid
    basis: SplineBasis
    penalty: PenaltyMatrix
    moment_classes: np.ndarray  # bool (J,), classes whose moments enter the fit

    @property
    def order(self) -> int:
        return self.dataset.order

    @property
    def observed(self) -> np.ndarray:
        return self.dataset.moments[:, :self.order]


def make_setup(dataset: GroupedDataset, config: FitConfig = FitConfig()) -> ModelSetup:
    bins = config.target_bins
    if config.align_bins:
        bins = aligned_bin_count(dataset.class_cuts, bins)
    grid = build_fine_grid(dataset.class_cuts, bins)
    basis = build_basis(grid, config.K)
    penalty = build_penalty(config.K, config.penalty_order)
    use = (dataset.freqs > 0) & (dataset.order > 0)
    return ModelSetup(dataset, grid, basis, penalty, np.asarray(use))


@dataclass
class FitResult:
    """Outcome of :func:`fit`; ``theta`` is shifted so that ``theta[pivot] == 0``."""

    theta: np.ndarray
    pivot: int
    lam: float
    edf: float
    latent_freqs: np.ndarray
    loglik_trace: list
    lambda_trace: list
    moments: ClassMoments
    converged: bool
    em_iters: int
    newton_iters: int
    setup: ModelSetup = field(repr=False)
    config: FitConfig = field(repr=False)
    info: object = field(default=None, repr=False)

    @property
    def pi(self) -> np.ndarray:
        return softmax_probabilities(self.theta, self.setup.basis.B)


def e_step(theta, setup: ModelSetup) -> np.ndarray:
    """Expected bin counts given the class frequencies."""
    grid = setup.grid
    pi = softmax_probabilities(theta, setup.basis.B)
    gamma = np.bincount(grid.bin_class, weights=pi, minlength=grid.J)
    freqs = setup.dataset.freqs
    bad = np.flatnonzero((freqs > 0) & (gamma < 1e-300))
    if len(bad):
        raise DegenerateClassError(f"class {bad[0] + 1} has n={freqs[bad[0]]} but zero probability")
    ratio = np.divide(freqs, gamma, out=np.zeros(grid.J), where=gamma > 0)
    return pi * ratio[grid.bin_class]


def frozen_inverse_scales(theta, setup: ModelSetup) -> np.ndarray | None:
    """Inverse moment covariances at ``theta``, zero for classes without moments."""
    if setup.order == 0:
        return None
    q = setup.order
    pi = softmax_probabilities(theta, setup.basis.B)
    moments = class_central_moments(pi, setup.grid)
    freqs = np.maximum(setup.dataset.freqs, 1)
    sigma = moment_covariance(moments, freqs, order=q)
    out = np.zeros((setup.grid.J, q, q))
    for j in np.flatnonzero(setup.moment_classes):
        try:
            out[j] = stabilized_inverse(sigma[j])
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"moment covariance of class {j + 1} is singular") from exc
    return out


def _moment_residuals(theta, setup: ModelSetup):
    pi = softmax_probabilities(theta, setup.basis.B)
    moments = class_central_moments(pi, setup.grid)
    resid = setup.observed - moments.mu[:, :setup.order]
    resid[~setup.moment_classes] = 0.0
    return pi, moments, resid


def complete_objective(theta, k, setup: ModelSetup, lam: float, sinv=None) -> float:
    """Penalized complete log-likelihood with frozen moment scales.

    Returns ``-inf`` where a class loses all probability mass.
    """
    theta = np.asarray(theta, dtype=float)
    logpi = log_softmax(setup.basis.B @ theta)
    d = setup.penalty.D @ theta
    value = float(k @ logpi - 0.5 * lam * d @ d)
    if setup.order > 0:
        try:
            _, _, resid = _moment_residuals(theta, setup)
        except EmptyClassError:
            return -np.inf
        value -= 0.5 * float(np.einsum("ja,jab,jb->", resid, sinv, resid))
    return value


def observed_penalized_loglik(theta, setup: ModelSetup, lam: float) -> float:
    """Penalized log-likelihood of the grouped data (moment scales not frozen)."""
    theta = np.asarray(theta, dtype=float)
    freqs = setup.dataset.freqs
    pi = softmax_probabilities(theta, setup.basis.B)
    gamma = np.bincount(setup.grid.bin_class, weights=pi, minlength=setup.grid.J)
    pos = freqs > 0
    d = setup.penalty.D @ theta
    value = float(freqs[pos] @ np.log(gamma[pos]) - 0.5 * lam * d @ d)
    if setup.order > 0:
        _, moments, resid = _moment_residuals(theta, setup)
        sigma = moment_covariance(moments, np.maximum(freqs, 1), order=setup.order)
        for j in np.flatnonzero(setup.moment_classes):
            sinv = stabilized_inverse(sigma[j])
            _, logdet_inv = np.linalg.slogdet(sinv)
            value -= 0.5 * (-logdet_inv + resid[j] @ sinv @ resid[j])
    return value


def mstep_gradient_hessian(theta, k, setup: ModelSetup, lam: float, sinv=None):
    """Gradient and (approximate) negative Hessian of :func:`complete_objective`."""
    theta = np.asarray(theta, dtype=float)
    B = setup.basis.B
    P = setup.penalty.P
    n = float(k.sum())
    pi = softmax_probabilities(theta, B)
    grad = B.T @ (k - n * pi) - lam * P @ theta
    Bbar = pi @ B
    neg_hess = n * ((B * pi[:, None]).T @ B - np.outer(Bbar, Bbar)) + lam * P
    if setup.order > 0:
        moments = class_central_moments(pi, setup.grid)
        resid = setup.observed - moments.mu[:, :setup.order]
        resid[~setup.moment_classes] = 0.0
        dmu = moment_derivatives(theta, setup.basis, setup.grid, moments, pi=pi,
                                 order=setup.order)
        for j in np.flatnonzero(setup.moment_classes):
            weighted = sinv[j] @ dmu[j]  # (q, K)
            grad += weighted.T @ resid[j]
            neg_hess += dmu[j].T @ weighted
    neg_hess = 0.5 * (neg_hess + neg_hess.T)
    return grad, neg_hess


def mstep(theta0, k, setup: ModelSetup, lam: float, config: FitConfig, sinv=None):
    """Ridge-stabilized Newton-Raphson with step halving.

    Returns ``(theta, iterations, objective_trace)``.
    """
    theta = np.array(theta0, dtype=float)
    obj = complete_objective(theta, k, setup, lam, sinv)
    if not np.isfinite(obj):
        raise OptimizerError("complete log-likelihood is not finite at the start point")
    trace = [obj]
    ridge = config.ridge * np.eye(len(theta))
    iters = 0
    for iters in range(1, config.newton_max_iters + 1):
        grad, neg_hess = mstep_gradient_hessian(theta, k, setup, lam, sinv)
        step = np.linalg.solve(neg_hess + ridge, grad)
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = theta + scale * step
            value = complete_objective(cand, k, setup, lam, sinv)
            if np.isfinite(value) and value >= obj - 1e-12 * (1.0 + abs(obj)):
                break
            scale *= 0.5
        else:
            if not np.isfinite(value):
                raise OptimizerError(f"no finite objective after {MAX_HALVINGS} halvings; trace={trace}")
            break  # no ascent direction left at machine precision
        moved = scale * np.linalg.norm(step)
        theta, obj = cand, value
        trace.append(obj)
        if moved / (1.0 + np.linalg.norm(theta)) < config.theta_tol:
            break
    return theta, iters, trace


def effective_dimension(neg_hess, P, lam: float, ridge: float) -> float:
    K = len(neg_hess)
    return float(np.trace(np.linalg.solve(neg_hess + ridge * np.eye(K), neg_hess - lam * P)))


def update_lambda(theta, neg_hess, penalty: PenaltyMatrix, lam: float, ridge: float):
    """One fixed-point update ``lam <- (edf - r) / |D theta|^2``; returns ``(lam, edf)``."""
    edf = effective_dimension(neg_hess, penalty.P, lam, ridge)
    d = penalty.D @ theta
    quad = float(d @ d)
    if quad < 1e-14:
        warnings.warn("flat fit: |D theta|^2 vanishes, penalty left unchanged", RuntimeWarning)
        return lam, edf
    new = max(edf - penalty.r, EDF_NUMERATOR_FLOOR) / quad
    return float(np.clip(new, LAMBDA_MIN, LAMBDA_MAX)), edf


def fit(dataset: GroupedDataset, config: FitConfig = FitConfig(), *,
        with_information: bool = True) -> FitResult:
    """Penalized MLE of the spline coefficients by EM."""
    setup = make_setup(dataset, config)
    K = config.K
    theta = np.zeros(K)
    lam = config.lambda_init if config.auto_lambda else float(config.lam)
    trace, lam_trace = [], [lam]
    converged = False
    newton_total = 0
    edf = float("nan")
    it = 0
    for it in range(1, config.em_max_iters + 1):
        k = e_step(theta, setup)
        sinv = frozen_inverse_scales(theta, setup)
        before = observed_penalized_loglik(theta, setup, lam)
        new_theta, n_iter, _ = mstep(theta, k, setup, lam, config, sinv)
        newton_total += n_iter
        after = observed_penalized_loglik(new_theta, setup, lam)
        trace.append(after)
        lam_used = lam
        if config.auto_lambda:
            sinv_new = frozen_inverse_scales(new_theta, setup)
            _, neg_hess = mstep_gradient_hessian(new_theta, e_step(new_theta, setup), setup,
                                                 lam, sinv_new)
            lam, edf = update_lambda(new_theta, neg_hess, setup.penalty, lam, config.ridge)
            lam_trace.append(lam)
        dtheta = np.linalg.norm(new_theta - theta) / (1.0 + np.linalg.norm(new_theta))
        theta = new_theta
        dlam = abs(np.log(lam / lam_used))
        log.debug("EM %d: loglik=%.10g lambda=%.6g dtheta=%.3g", it, after, lam, dtheta)
        if (abs(after - before) < config.loglik_tol and dtheta < config.theta_tol
                and dlam < config.lambda_tol):
            converged = True
            break
    k = e_step(theta, setup)
    sinv = frozen_inverse_scales(theta, setup)
    _, neg_hess = mstep_gradient_hessian(theta, k, setup, lam, sinv)
    edf = effective_dimension(neg_hess, setup.penalty.P, lam, config.ridge)
    theta, pivot = normalize_identification(theta)
    pi = softmax_probabilities(theta, setup.basis.B)
    result = FitResult(
        theta=theta, pivot=pivot, lam=float(lam), edf=edf, latent_freqs=k,
        loglik_trace=trace, lambda_trace=lam_trace,
        moments=class_central_moments(pi, setup.grid), converged=converged,
        em_iters=it, newton_iters=newton_total, setup=setup, config=config,
    )
    if not converged:
        log.warning("EM stopped after %d iterations without converging", it)
    if with_information:
        from .risk_inference import information_matrix
        result.info = information_matrix(result)
    return result


def refit(dataset: GroupedDataset, config: FitConfig, **changes) -> FitResult:
    return fit(dataset, replace(config, **changes))
