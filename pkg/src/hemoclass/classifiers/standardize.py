"""Per-dimension feature standardization fitted on training data only."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hemoclass.errors import DimensionMismatchError, TrainingError


@dataclass(frozen=True)
class Standardizer:
    """Column-wise (x - mean) / sigma transform.

    Dimensions whose training standard deviation is zero pass through
    unscaled; their indices are recorded in `constant_dims`.
    """

    mean: np.ndarray            # (D,) float64
    sigma: np.ndarray           # (D,) float64, 1.0 where constant
    constant_dims: tuple        # indices of zero-variance columns

    @property
    def dim(self) -> int:
        return len(self.mean)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"standardizer expects (n, {self.dim}) input, got {x.shape}")
        return (x - self.mean) / self.sigma


def fit_standardizer(x: np.ndarray) -> Standardizer:
    """Fit column means and population standard deviations (denominator n)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise TrainingError(f"expected a 2-D feature matrix, got {x.ndim}-D")
    if x.shape[0] < 2:
        raise TrainingError("standardization needs at least 2 rows")
    mean = x.mean(axis=0)
    sigma = x.std(axis=0)          # population form, ddof=0
    constant = np.flatnonzero(sigma == 0.0)
    if constant.size:
        sigma = sigma.copy()
        sigma[constant] = 1.0
        mean = mean.copy()
        mean[constant] = 0.0       # pass constant columns through unchanged
    return Standardizer(mean=mean, sigma=sigma,
                        constant_dims=tuple(int(i) for i in constant))
