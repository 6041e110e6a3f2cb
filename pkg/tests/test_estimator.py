import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from anchorcodec.estimator import AnchorCodec


def test_params_and_clone():
    est = AnchorCodec(lambda_r=0.02, steps=3)
    params = est.get_params()
    assert params["lambda_r"] == 0.02 and params["steps"] == 3
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    assert est.set_params(seed=4).seed == 4


def test_not_fitted(small_scene):
    with pytest.raises(NotFittedError):
        AnchorCodec().compress(small_scene)


def test_fit_rejects_arrays():
    with pytest.raises(TypeError):
        AnchorCodec().fit(np.zeros((10, 89)))


def test_fit_compress_decompress(small_scene):
    est = AnchorCodec(steps=4, seed=1).fit(small_scene)
    assert est.n_anchors_ == len(small_scene)
    data = est.compress(small_scene)
    assert AnchorCodec.decompress(data).equals(est.transform(small_scene))
    rep = est.report(small_scene)
    assert rep.total_bytes == len(data)
