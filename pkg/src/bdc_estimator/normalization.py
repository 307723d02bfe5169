"""Min/max scaling of data columns onto [-1, 1]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Normalization:
    """Per-column min/max affine map onto [-1, 1]."""

    minimum: np.ndarray
    maximum: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray) -> "Normalization":
        return cls(np.min(data, axis=0), np.max(data, axis=0))

    @property
    def _center(self) -> np.ndarray:
        return 0.5 * (self.maximum + self.minimum)

    @property
    def _half_span(self) -> np.ndarray:
        half = 0.5 * (self.maximum - self.minimum)
        # constant columns map to 0
        return np.where(half > 0, half, 1.0)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self._center) / self._half_span

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return z * self._half_span + self._center
