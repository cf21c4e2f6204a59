"""Grouped data: class cut points, frequencies and observed class moments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VALID_ORDERS = (0, 1, 2, 4)


class DatasetError(ValueError):
    """Invalid grouped dataset."""


@dataclass(frozen=True)
class GroupedDataset:
    """Grouped summaries over classes ``(a_{j-1}, a_j]``.

    ``moments`` is a ``(J, 4)`` array of observed (mean, m2, m3, m4); only the
    first ``order`` columns are meaningful and rows of empty classes are NaN.
    ``transform`` tags the scale the data live on (``"none"`` or ``"log10"``).
    """

    class_cuts: np.ndarray
    freqs: np.ndarray
    moments: np.ndarray = field(default=None)
    order: int = 0
    transform: str = "none"

    def __post_init__(self):
        cuts = np.asarray(self.class_cuts, dtype=float)
        freqs = np.asarray(self.freqs)
        if cuts.ndim != 1 or len(cuts) < 2:
            raise DatasetError("need at least one class (two cut points)")
        if np.any(np.diff(cuts) <= 0):
            raise DatasetError("class cut points must be strictly increasing")
        J = len(cuts) - 1
        if freqs.shape != (J,):
            raise DatasetError(f"expected {J} frequencies, got shape {freqs.shape}")
        if np.any(freqs < 0) or np.any(freqs != np.round(freqs)):
            raise DatasetError("frequencies must be non-negative integers")
        freqs = freqs.astype(np.int64)
        if freqs.sum() < 1:
            raise DatasetError("total frequency must be at least 1")
        if self.order not in VALID_ORDERS:
            raise DatasetError(f"moment order must be one of {VALID_ORDERS}, got {self.order}")
        if self.transform not in ("none", "log10"):
            raise DatasetError(f"unknown transform {self.transform!r}")
        mom = np.full((J, 4), np.nan)
        if self.moments is not None:
            given = np.asarray(self.moments, dtype=float)
            if given.ndim != 2 or given.shape[0] != J or given.shape[1] < self.order:
                raise DatasetError(f"moments must have shape ({J}, >={self.order})")
            width = min(given.shape[1], 4)
            mom[:, :width] = given[:, :width]
        mom[:, self.order:] = np.nan
        mom[freqs == 0] = np.nan
        if self.order >= 1:
            occupied = freqs > 0
            if np.any(np.isnan(mom[occupied, :self.order])):
                raise DatasetError("missing moments for a non-empty class")
            means = mom[occupied, 0]
            lo, hi = cuts[:-1][occupied], cuts[1:][occupied]
            tol = 1e-9 * (hi - lo)
            bad = np.flatnonzero((means <= lo - tol) | (means > hi + tol))
            if len(bad):
                j = np.flatnonzero(occupied)[bad[0]]
                raise DatasetError(f"class {j + 1}: mean {mom[j, 0]} outside ({cuts[j]}, {cuts[j + 1]}]")
        if self.order >= 2 and np.any(mom[freqs > 0, 1] < 0):
            raise DatasetError("negative class variance")
        object.__setattr__(self, "class_cuts", cuts)
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "moments", mom)

    @property
    def J(self) -> int:
        return len(self.freqs)

    @property
    def n(self) -> int:
        return int(self.freqs.sum())

    def with_order(self, order: int) -> "GroupedDataset":
        """Same data keeping only the first ``order`` moments."""
        if order > self.order:
            raise DatasetError(f"dataset only carries moments up to order {self.order}")
        return GroupedDataset(self.class_cuts, self.freqs, self.moments, order, self.transform)

    def scaled(self, factor: float) -> "GroupedDataset":
        """Frequencies multiplied by ``factor`` (rounded), moments unchanged."""
        freqs = np.maximum(np.rint(self.freqs * factor), 0).astype(np.int64)
        return GroupedDataset(self.class_cuts, freqs, self.moments, self.order, self.transform)
