"""Fine latent grid, cubic B-spline basis and difference penalties.

The support ``[a0, aJ]`` is cut into ``I`` equal-width bins.  Class cut points
are snapped onto bin edges so that every class is an exact union of bins,
which makes the class/bin composition matrix binary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

DEGREE = 3


class GridError(ValueError):
    """Raised when a fine grid cannot represent the requested classes."""


@dataclass(frozen=True)
class FineGrid:
    """Equal-width bins over ``[a0, aJ]`` with the class composition matrix.

    ``class_cuts`` holds the snapped cut points; ``original_cuts`` the values
    the caller asked for.  ``bin_class[i]`` is the index of the class that
    contains bin ``i``.
    """

    a0: float
    aJ: float
    I: int
    delta: float
    edges: np.ndarray
    midpoints: np.ndarray
    class_cuts: np.ndarray
    original_cuts: np.ndarray
    cut_index: np.ndarray
    bin_class: np.ndarray
    composition: np.ndarray = field(repr=False)

    @property
    def J(self) -> int:
        return len(self.class_cuts) - 1

    @property
    def bins_per_class(self) -> np.ndarray:
        return np.diff(self.cut_index)


def _validate_cuts(class_cuts) -> np.ndarray:
    cuts = np.asarray(class_cuts, dtype=float)
    if cuts.ndim != 1 or len(cuts) < 2:
        raise GridError("class_cuts needs at least two values")
    if not np.all(np.isfinite(cuts)):
        raise GridError("class_cuts must be finite")
    if np.any(np.diff(cuts) <= 0):
        raise GridError("class_cuts must be strictly increasing")
    return cuts


def build_fine_grid(class_cuts, target_bins: int = 300) -> FineGrid:
    """Build ``target_bins`` equal bins on ``[cuts[0], cuts[-1]]``.

    Interior cuts are moved to the nearest bin edge; a :class:`GridError` is
    raised when two cuts would land on the same edge.
    """
    cuts = _validate_cuts(class_cuts)
    n_classes = len(cuts) - 1
    target_bins = int(target_bins)
    if target_bins < 10 * n_classes:
        raise GridError(
            f"target_bins={target_bins} is below 10 bins per class ({10 * n_classes})"
        )
    a0, aJ = float(cuts[0]), float(cuts[-1])
    delta = (aJ - a0) / target_bins
    edges = a0 + delta * np.arange(target_bins + 1)
    edges[-1] = aJ
    idx = np.rint((cuts - a0) / delta).astype(int)
    idx[0], idx[-1] = 0, target_bins
    if np.any(np.diff(idx) <= 0):
        raise GridError(
            "grid too coarse: two class cut points snap to the same bin edge; "
            "increase the number of bins"
        )
    bin_class = np.repeat(np.arange(n_classes), np.diff(idx))
    composition = np.zeros((n_classes, target_bins))
    composition[bin_class, np.arange(target_bins)] = 1.0
    return FineGrid(
        a0=a0,
        aJ=aJ,
        I=target_bins,
        delta=delta,
        edges=edges,
        midpoints=0.5 * (edges[:-1] + edges[1:]),
        class_cuts=edges[idx].copy(),
        original_cuts=cuts,
        cut_index=idx,
        bin_class=bin_class,
        composition=composition,
    )


def aligned_bin_count(class_cuts, target_bins: int = 300, max_factor: float = 2.0,
                      rtol: float = 1e-9) -> int:
    """Smallest bin count ``>= target_bins`` putting every cut on an edge.

    Falls back to ``target_bins`` (cuts are then snapped) if no count up to
    ``max_factor * target_bins`` works.
    """
    cuts = _validate_cuts(class_cuts)
    width = cuts[-1] - cuts[0]
    rel = (cuts[1:-1] - cuts[0]) / width
    for count in range(int(target_bins), int(max_factor * target_bins) + 1):
        pos = rel * count
        if np.all(np.abs(pos - np.rint(pos)) < rtol * count):
            return count
    return int(target_bins)


@dataclass(frozen=True)
class SplineBasis:
    """Cubic B-splines on equidistant knots covering ``[lower, upper]``.

    The knot sequence extends ``DEGREE`` spacings beyond each end of the
    support (P-spline layout), so all ``K`` splines have the same shape.
    """

    K: int
    knots: np.ndarray
    lower: float
    upper: float
    B: np.ndarray = field(repr=False)
    degree: int = DEGREE

    def evaluate(self, x) -> np.ndarray:
        """Basis matrix at arbitrary points; rows outside the support are 0."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros((len(x), self.K))
        inside = (x >= self.lower) & (x <= self.upper)
        if np.any(inside):
            out[inside] = BSpline.design_matrix(x[inside], self.knots, self.degree).toarray()
        return out


def build_basis(grid: FineGrid, K: int = 25) -> SplineBasis:
    """Cubic B-spline basis of size ``K`` evaluated at the bin midpoints."""
    K = int(K)
    if K < DEGREE + 1:
        raise ValueError(f"K must be at least {DEGREE + 1}, got {K}")
    if K > grid.I:
        raise ValueError(f"K={K} exceeds the number of bins I={grid.I}")
    n_seg = K - DEGREE
    dx = (grid.aJ - grid.a0) / n_seg
    knots = grid.a0 + dx * np.arange(-DEGREE, n_seg + DEGREE + 1)
    B = BSpline.design_matrix(grid.midpoints, knots, DEGREE).toarray()
    return SplineBasis(K=K, knots=knots, lower=grid.a0, upper=grid.aJ, B=B)


@dataclass(frozen=True)
class PenaltyMatrix:
    r: int
    D: np.ndarray
    P: np.ndarray


def build_penalty(K: int, r: int = 2) -> PenaltyMatrix:
    """Order-``r`` difference matrix ``D`` (``+1`` on the last diagonal) and ``D'D``."""
    K, r = int(K), int(r)
    if r >= K:
        raise ValueError(f"penalty order r={r} must be smaller than K={K}")
    if not 1 <= r <= 3:
        raise ValueError(f"penalty order must be 1, 2 or 3, got {r}")
    D = np.diff(np.eye(K), n=r, axis=0)
    return PenaltyMatrix(r=r, D=D, P=D.T @ D)
