import numpy as np
import pytest

from anchorcodec.mlp import MlpWeights
from anchorcodec.planecodec import (
    PlaneStreamError,
    arm_predict,
    code_all_planes,
    context_stack,
    decode_all_planes,
    decode_plane,
    encode_plane,
    extract_context,
    laplace_bin_prob,
    plane_rate_estimate,
)


@pytest.fixture(scope="module")
def arm():
    return MlpWeights.init((4, 32, 32, 2), np.random.default_rng(5), zero_last=False)


def smooth_plane(seed, ch=8, side=16):
    rng = np.random.default_rng(seed)
    x = np.cumsum(np.cumsum(rng.normal(size=(ch, side, side)), axis=1), axis=2) * 0.2
    return np.rint(x).astype(np.int64)


def test_context_at_borders():
    p = np.arange(1, 10, dtype=float).reshape(3, 3)
    assert extract_context(p, 0, 0).tolist() == [0, 0, 0, 0]
    assert extract_context(p, 1, 2).tolist() == [2, 3, 0, 5]
    assert extract_context(p, 2, 0).tolist() == [0, 4, 5, 0]


def test_context_stack_matches_pointwise():
    p = np.random.default_rng(0).normal(size=(2, 5, 6))
    ctx = context_stack(p)
    for c in range(2):
        for i in range(5):
            for j in range(6):
                np.testing.assert_array_equal(ctx[c, i, j], extract_context(p[c], i, j))


def test_laplace_bins_sum_to_one():
    n = np.arange(-4000, 4001)
    for mu, b in [(0.0, 1.0), (0.3, 0.01), (-2.7, 40.0)]:
        assert laplace_bin_prob(n, mu, b).sum() == pytest.approx(1.0, abs=1e-9)
    assert laplace_bin_prob(0, 0.0, 1.0) == pytest.approx(1 - np.exp(-0.5))


def test_arm_positive_scale(arm):
    _, b = arm_predict(arm, np.random.default_rng(1).normal(size=(50, 4)) * 100)
    assert np.all(b >= 1e-4)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_round_trip(arm, seed):
    plane = smooth_plane(seed)
    stream = encode_plane(plane, arm)
    np.testing.assert_array_equal(decode_plane(stream, arm, plane.shape), plane)


def test_all_zero_and_extreme_planes(arm):
    zero = np.zeros((8, 4, 4), dtype=np.int64)
    np.testing.assert_array_equal(decode_plane(encode_plane(zero, arm), arm, zero.shape), zero)
    wild = np.random.default_rng(3).integers(-3000, 3000, size=(2, 8, 8))
    np.testing.assert_array_equal(decode_plane(encode_plane(wild, arm), arm, wild.shape), wild)


def test_payload_close_to_estimate(arm):
    plane = smooth_plane(7, side=32)
    est = plane_rate_estimate(plane, arm) / 8
    payload = len(encode_plane(plane, arm)) - 8
    assert est <= payload <= est * 1.02 + 64


def test_corruption_detected(arm):
    plane = smooth_plane(4)
    stream = bytearray(encode_plane(plane, arm))
    with pytest.raises(PlaneStreamError):
        decode_plane(bytes(stream[:-3]), arm, plane.shape)
    stream[1] ^= 0x7F  # n_max sign flip breaks the range check
    with pytest.raises(PlaneStreamError):
        decode_plane(bytes(stream), arm, plane.shape)


def test_corrupt_stream_names_index(arm):
    planes = [smooth_plane(s, side=8) for s in range(5)]
    streams = code_all_planes(planes, arm)
    streams[3] = streams[3][:-2]
    with pytest.raises(PlaneStreamError) as info:
        decode_all_planes(streams, arm, planes[0].shape)
    assert info.value.stream_index == 3


def test_parallel_equals_serial(arm):
    planes = [smooth_plane(s, side=16) for s in range(5)]
    streams = code_all_planes(planes, arm)
    serial = decode_all_planes(streams, arm, planes[0].shape)
    parallel = decode_all_planes(streams, arm, planes[0].shape, parallel=True)
    for a, b, p in zip(serial, parallel, planes):
        np.testing.assert_array_equal(a, p)
        np.testing.assert_array_equal(b, p)


def test_out_of_range_values_rejected(arm):
    with pytest.raises(PlaneStreamError):
        encode_plane(np.full((1, 2, 2), 40000), arm)
