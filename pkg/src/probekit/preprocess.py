"""Per-feature standardization, fit on the training split only."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_matrix(x) -> np.ndarray:
    data = getattr(x, "data", x)
    return np.asarray(data)


@dataclass
class Standardizer:
    """Column means and stds learned from training data.

    Stds use the population convention (divide by n); the n vs n-1 choice is
    immaterial at the sample counts this pipeline runs on, and fixing one
    keeps runs reproducible. Columns with (near) zero variance keep their
    slot, clamped to ``epsilon``, so feature indices stay aligned across
    layers.
    """

    mean: np.ndarray
    std: np.ndarray
    epsilon: float

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]


def fit_standardizer(train, epsilon: float = 1e-8) -> Standardizer:
    """Fit per-column mean and population std on ``train`` (ActivationSet or matrix)."""
    X = _as_matrix(train)
    if X.shape[0] < 2:
        raise ValueError("standardizer needs at least 2 samples")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    mean = X.mean(axis=0, dtype=np.float64)
    var = np.square(X.astype(np.float64, copy=False) - mean).mean(axis=0)
    std = np.maximum(np.sqrt(var), epsilon)
    return Standardizer(mean=mean, std=std, epsilon=epsilon)


def apply_standardizer(s: Standardizer, aset) -> np.ndarray:
    """Return ``(x - mean) / std`` per column as a float64 matrix."""
    X = _as_matrix(aset)
    if X.ndim != 2 or X.shape[1] != s.n_features:
        raise ValueError(
            f"dimension mismatch: standardizer has {s.n_features} features, "
            f"input has shape {X.shape}"
        )
    return (X.astype(np.float64, copy=False) - s.mean) / s.std
