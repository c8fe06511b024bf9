"""Data containers shared by all generative models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class DataSet:
    """N data points of dimension D with an optional observation mask.

    mask[n, d] is True where entry (n, d) is observed. A missing mask means
    fully observed. Binary-observable models require Y entries in {0, 1}.
    """

    Y: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.ndim != 2:
            raise DataError(f"Y must be 2-d (N, D), got shape {self.Y.shape}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.Y.shape:
                raise DataError(
                    f"mask shape {self.mask.shape} != data shape {self.Y.shape}"
                )
            if not self.mask.any(axis=1).all():
                raise DataError("every data point needs at least one observed entry")
            if self.mask.all():
                # Fully observed masks take the unmasked code paths so results
                # are bit-identical to mask=None.
                self.mask = None

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def d(self) -> int:
        return self.Y.shape[1]

    def observed_counts(self) -> np.ndarray:
        """Number of observed dimensions per data point, shape (N,)."""
        if self.mask is None:
            return np.full(self.n, self.d, dtype=np.int64)
        return self.mask.sum(axis=1).astype(np.int64)

    def require_binary(self):
        ok = (self.Y == 0) | (self.Y == 1)
        if self.mask is not None:
            ok = ok | ~self.mask
        if not ok.all():
            raise DataError("binary-observable model requires data entries in {0, 1}")
