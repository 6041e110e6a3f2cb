import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from anchorcodec.pca import (
    DegenerateInputError,
    PCAFrame,
    SceneBounds,
    fit_pca,
    from_pca,
    normalize_coords,
    to_pca,
)


def test_axis_aligned_cloud():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5000, 3)) * [1.0, 10.0, 3.0] + [5, -2, 1]
    b = fit_pca(x)
    np.testing.assert_allclose(np.abs(b.directions), [[0, 1, 0], [0, 0, 1], [1, 0, 0]], atol=0.02)
    assert b.eigenvalues[0] > b.eigenvalues[1] > b.eigenvalues[2]
    # sign rule: largest-magnitude component positive
    assert np.all(b.directions[np.arange(3), np.argmax(np.abs(b.directions), axis=1)] > 0)


def test_orthonormal_and_inverse():
    x = np.random.default_rng(1).normal(size=(100, 3)) @ np.random.default_rng(2).normal(size=(3, 3))
    b = fit_pca(x)
    np.testing.assert_allclose(b.directions @ b.directions.T, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(from_pca(b, to_pca(b, x)), x, atol=1e-10)


def test_eigenvalues_match_covariance():
    x = np.random.default_rng(3).normal(size=(400, 3)) * [3, 2, 1]
    b = fit_pca(x)
    np.testing.assert_allclose(b.eigenvalues, np.sort(np.linalg.eigvalsh(np.cov(x.T, bias=True)))[::-1])


def test_degenerate_inputs():
    with pytest.raises(DegenerateInputError):
        fit_pca(np.ones((10, 3)))
    with pytest.raises(ValueError):
        fit_pca(np.zeros((3, 3)))


def test_normalize_coords_ranges():
    xp = np.random.default_rng(4).normal(size=(200, 3))
    bounds = SceneBounds.of(xp)
    u, v, w = normalize_coords(bounds, xp)
    assert u.min() == 0 and u.max() == 1 and v.min() == 0 and v.max() == 1
    assert w.min() == -1 and w.max() == 1
    # outside queries clamp
    u2, _, w2 = normalize_coords(bounds, xp.max(axis=0) + 5)
    assert u2 == 1 and w2 == 1


def test_zero_extent_axis_maps_to_midpoint():
    xp = np.zeros((5, 3))
    xp[:, 0] = np.arange(5)
    u, v, w = normalize_coords(SceneBounds.of(xp), xp)
    assert np.all(v == 0.5) and np.all(w == 0.0)


def test_planar_cloud_third_eigenvalue_zero():
    rng = np.random.default_rng(5)
    x = np.c_[rng.normal(size=(50, 2)), np.zeros(50)]
    assert fit_pca(x).eigenvalues[2] == pytest.approx(0.0, abs=1e-14)


def test_transformer_api():
    x = np.random.default_rng(6).normal(size=(60, 3))
    frame = PCAFrame()
    with pytest.raises(NotFittedError):
        frame.transform(x)
    out = clone(frame).fit_transform(x)
    np.testing.assert_allclose(PCAFrame().fit(x).inverse_transform(out), x, atol=1e-12)
    assert frame.get_params() == {}
