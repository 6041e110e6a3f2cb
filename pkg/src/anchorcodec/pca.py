"""Principal-axis frame of the anchor cloud and plane/axis coordinate maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray
    directions: np.ndarray  # rows are PC1, PC2, PC3
    eigenvalues: np.ndarray

    def __post_init__(self):
        for name, shape in (("mean", (3,)), ("directions", (3, 3)), ("eigenvalues", (3,))):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}")
            object.__setattr__(self, name, arr)

    def as_float32(self) -> "PcaBasis":
        """Round through fp32, the precision the container stores."""
        r = lambda a: a.astype(np.float32).astype(np.float64)  # noqa: E731
        return PcaBasis(r(self.mean), r(self.directions), r(self.eigenvalues))


@dataclass(frozen=True)
class SceneBounds:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(lo > hi):
            raise ValueError("bounds need three components with lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def of(cls, coords: np.ndarray) -> "SceneBounds":
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
        return cls(coords.min(axis=0), coords.max(axis=0))

    def as_float32(self) -> "SceneBounds":
        lo = self.lo.astype(np.float32)
        hi = np.maximum(self.hi.astype(np.float32), lo)
        return SceneBounds(lo.astype(np.float64), hi.astype(np.float64))


def fit_pca(positions) -> PcaBasis:
    """Eigendecomposition of the position covariance.

    Directions are sorted by descending eigenvalue and each one is flipped
    so that its largest-magnitude component is positive.
    """
    x = np.asarray(positions, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3 or x.shape[0] < 4:
        raise ValueError("need at least 4 points in 3D")
    if np.all(x == x[0]):
        raise DegenerateInputError("all points are identical")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / x.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")
    evals = np.clip(evals[order], 0.0, None)
    dirs = evecs[:, order].T.copy()
    for row in dirs:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaBasis(mean, dirs, evals)


def to_pca(basis: PcaBasis, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return (x - basis.mean) @ basis.directions.T


def from_pca(basis: PcaBasis, xp) -> np.ndarray:
    xp = np.asarray(xp, dtype=np.float64)
    return xp @ basis.directions + basis.mean


def normalize_coords(bounds: SceneBounds, xp) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map PCA coordinates to plane coords (u, v) in [0,1] and axis coord w in [-1,1].

    Queries outside the bounds clamp; a zero-extent axis maps to its midpoint.
    """
    xp = np.asarray(xp, dtype=np.float64)
    extent = bounds.hi - bounds.lo
    safe = np.where(extent > 0, extent, 1.0)
    t = np.where(extent > 0, (xp - bounds.lo) / safe, 0.5)
    t = np.clip(t, 0.0, 1.0)
    return t[..., 0], t[..., 1], 2.0 * t[..., 2] - 1.0


class PCAFrame(TransformerMixin, BaseEstimator):
    """Transformer wrapper: positions -> PCA coordinates."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.basis_ = fit_pca(X)
        self.bounds_ = SceneBounds.of(to_pca(self.basis_, X))
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        return to_pca(self.basis_, check_array(X, dtype=np.float64))

    def inverse_transform(self, X):
        check_is_fitted(self, "basis_")
        return from_pca(self.basis_, check_array(X, dtype=np.float64))
