"""Spline coefficients to bin/class probabilities and class central moments.

Moments are midpoint sums over the fine grid.  For the derivative of the
order-``r`` central moment the term ``r * mu_{r-1}`` uses the *central*
moment of order ``r - 1``; for ``r = 2`` that is the first central moment,
which is zero.  Using the class mean there instead disagrees with finite
differences, so the centred reading is the one implemented.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid_basis import FineGrid, SplineBasis

MAX_ORDER = 8
COND_LIMIT = 1e12
JITTER = 1e-10


class EmptyClassError(ValueError):
    """A class carries (numerically) no probability mass."""


class InconsistentMomentsError(ValueError):
    """Moments produce a covariance with a negative variance."""


def softmax_probabilities(theta, B: np.ndarray) -> np.ndarray:
    """Bin probabilities ``pi = softmax(B @ theta)``."""
    eta = B @ np.asarray(theta, dtype=float)
    w = np.exp(eta - eta.max())
    return w / w.sum()


def class_probabilities(pi, composition) -> np.ndarray:
    return np.asarray(composition) @ np.asarray(pi)


def _class_sums(values: np.ndarray, bin_class: np.ndarray, J: int) -> np.ndarray:
    # values: (I,) or (I, m) -> (J,) or (J, m)
    if values.ndim == 1:
        return np.bincount(bin_class, weights=values, minlength=J)
    out = np.zeros((J,) + values.shape[1:])
    np.add.at(out, bin_class, values)
    return out


@dataclass(frozen=True)
class ClassMoments:
    """``mu[j, r-1]`` is the order-``r`` moment in class ``j``.

    Column 0 holds the class conditional mean; the others are central.
    """

    mu: np.ndarray
    gamma: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.mu[:, 0]

    @property
    def variance(self) -> np.ndarray:
        return self.mu[:, 1]


def class_central_moments(pi, grid: FineGrid, max_order: int = MAX_ORDER) -> ClassMoments:
    if not 2 <= max_order <= MAX_ORDER:
        raise ValueError(f"max_order must lie in 2..{MAX_ORDER}")
    pi = np.asarray(pi, dtype=float)
    J = grid.J
    gamma = _class_sums(pi, grid.bin_class, J)
    empty = np.flatnonzero(gamma < 1e-12)
    if len(empty):
        raise EmptyClassError(f"class {int(empty[0]) + 1} has probability {gamma[empty[0]]:.3g}")
    u = grid.midpoints
    mean = _class_sums(pi * u, grid.bin_class, J) / gamma
    dev = u - mean[grid.bin_class]
    powers = dev[:, None] ** np.arange(2, max_order + 1)
    central = _class_sums(pi[:, None] * powers, grid.bin_class, J) / gamma[:, None]
    mu = np.zeros((J, MAX_ORDER))
    mu[:, 0] = mean
    mu[:, 1:max_order] = central
    return ClassMoments(mu=mu, gamma=gamma)


def moment_covariance(moments: ClassMoments, freqs, order: int = 4) -> np.ndarray:
    """Asymptotic covariance of (mean, m2, m3, m4) per class, shape ``(J, order, order)``.

    The sample central moments use the sample mean, so each ``m_r`` (r >= 2)
    has influence function ``(x-mu)^r - mu_r - r mu_{r-1} (x-mu)``; this gives::

        n cov(mean, m_s) = mu_{s+1} - s mu_{s-1} mu_2
        n cov(m_r, m_s)  = mu_{r+s} - mu_r mu_s - r mu_{r-1} mu_{s+1}
                           - s mu_{s-1} mu_{r+1} + r s mu_{r-1} mu_{s-1} mu_2

    with central moments (``mu_1 = 0``).  ``order`` < 4 returns the leading block.
    """
    mu = moments.mu
    n = np.asarray(freqs, dtype=float)
    J = len(n)
    c = np.zeros((J, MAX_ORDER + 1))  # c[:, r] = central moment of order r
    c[:, 0] = 1.0
    c[:, 2:] = mu[:, 1:MAX_ORDER]
    M = np.empty((J, 4, 4))
    M[:, 0, 0] = c[:, 2]
    for s in range(2, 5):
        M[:, 0, s - 1] = c[:, s + 1] - s * c[:, s - 1] * c[:, 2]
        for r in range(2, s + 1):
            M[:, r - 1, s - 1] = (c[:, r + s] - c[:, r] * c[:, s]
                                  - r * c[:, r - 1] * c[:, s + 1]
                                  - s * c[:, s - 1] * c[:, r + 1]
                                  + r * s * c[:, r - 1] * c[:, s - 1] * c[:, 2])
    iu = np.triu_indices(4, 1)
    M[:, iu[1], iu[0]] = M[:, iu[0], iu[1]]
    diag = np.diagonal(M, axis1=1, axis2=2)
    bad = np.argwhere(diag < -1e-10)
    if len(bad):
        j, r = bad[0]
        raise InconsistentMomentsError(
            f"class {j + 1}: covariance diagonal entry {r + 1} is {diag[j, r]:.3g}"
        )
    return M[:, :order, :order] / n[:, None, None]


def stabilized_inverse(sigma: np.ndarray) -> np.ndarray:
    """Inverse of a small covariance block, jittered when ill-conditioned."""
    s = np.array(sigma, dtype=float)
    if np.linalg.cond(s) > COND_LIMIT:
        s = s + np.eye(len(s)) * JITTER * np.trace(s) / len(s)
    return np.linalg.inv(s)


def moment_derivatives(theta, basis: SplineBasis, grid: FineGrid,
                       moments: ClassMoments, pi=None, order: int = 4) -> np.ndarray:
    """Jacobian of (mean, mu2, ..., mu_order) w.r.t. theta, shape ``(J, order, K)``."""
    if pi is None:
        pi = softmax_probabilities(theta, basis.B)
    J = grid.J
    mu = moments.mu
    dev = grid.midpoints - mu[grid.bin_class, 0]
    weight = pi / moments.gamma[grid.bin_class]
    out = np.zeros((J, order, basis.K))
    terms = np.empty((len(dev), order))
    terms[:, 0] = dev
    for r in range(2, order + 1):
        # central moment of order r-1 (zero for r = 2)
        prev = np.zeros(J) if r == 2 else mu[:, r - 2]
        terms[:, r - 1] = (dev ** r - mu[grid.bin_class, r - 1]
                           - r * prev[grid.bin_class] * dev)
    wb = weight[:, None] * basis.B  # (I, K)
    for j in range(J):
        sel = grid.bin_class == j
        out[j] = terms[sel].T @ wb[sel]
    return out


def convert_summary_to_central_moments(mean, sd, skewness=0.0, kurtosis_excess=0.0):
    """(mean, sd, skewness, excess kurtosis) -> (m1, m2, m3, m4)."""
    if sd < 0:
        raise ValueError(f"standard deviation must be non-negative, got {sd}")
    m2 = sd ** 2
    return (float(mean), float(m2), float(skewness * sd ** 3),
            float((kurtosis_excess + 3.0) * m2 ** 2))


def normalize_identification(theta) -> tuple[np.ndarray, int]:
    """Shift theta so its largest entry is 0; returns the pivot index (first max)."""
    theta = np.asarray(theta, dtype=float)
    k = int(np.argmax(theta))
    return theta - theta[k], k
