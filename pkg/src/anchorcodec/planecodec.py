"""Spatial autoregressive coding of the quantized hyperprior sub-planes.

Each grid point is coded with a discretized Laplace whose location and
scale come from a shared MLP over its four causal neighbors (upper-left,
upper, upper-right, left). Channels are coded one after another, raster
order inside each channel. The five sub-planes are independent streams.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor

import numba
import numpy as np

from . import _cdf, rangecoder as rc
from .mlp import MlpWeights, mlp3_row

B_MIN = 1e-4
_STREAM_HEADER = struct.Struct("<hhI")


class PlaneStreamError(ValueError):
    def __init__(self, message: str, stream_index: int | None = None):
        super().__init__(message if stream_index is None else f"plane stream {stream_index}: {message}")
        self.stream_index = stream_index


def extract_context(plane: np.ndarray, i: int, j: int) -> np.ndarray:
    """Causal neighbors of (i, j) in a 2-D plane, zero outside the grid."""
    h, w = plane.shape

    def at(a, b):
        return float(plane[a, b]) if 0 <= a < h and 0 <= b < w else 0.0

    return np.array([at(i - 1, j - 1), at(i - 1, j), at(i - 1, j + 1), at(i, j - 1)])


def context_stack(planes: np.ndarray) -> np.ndarray:
    """Contexts of every grid point of (..., H, W) planes, shape (..., H, W, 4)."""
    p = np.asarray(planes, dtype=np.float64)
    pad = np.zeros(p.shape[:-2] + (p.shape[-2] + 1, p.shape[-1] + 2))
    pad[..., 1:, 1:-1] = p
    h, w = p.shape[-2:]
    return np.stack(
        [pad[..., :h, :w], pad[..., :h, 1 : w + 1], pad[..., :h, 2 : w + 2], pad[..., 1:, :w]], axis=-1
    )


def laplace_scale_from_raw(raw):
    return np.maximum(np.logaddexp(0.0, raw), B_MIN)


def arm_predict(weights: MlpWeights, ctx) -> tuple[np.ndarray, np.ndarray]:
    """Laplace (mu, b) for one or many 4-value contexts."""
    out = weights.forward(np.atleast_2d(np.asarray(ctx, dtype=np.float64)))
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite output from the spatial model")
    return out[:, 0], laplace_scale_from_raw(out[:, 1])


def laplace_bin_prob(n, mu, b):
    """F(n + 1/2) - F(n - 1/2) for a Laplace(mu, b)."""
    d = np.abs(np.asarray(n, dtype=np.float64) - mu)
    b = np.asarray(b, dtype=np.float64)
    hi = np.exp(-(d + 0.5) / b)
    inner = 1.0 - 0.5 * np.exp(np.minimum(d - 0.5, 0.0) / b) - 0.5 * hi
    outer = 0.5 * (np.exp(-np.maximum(d - 0.5, 0.0) / b) - hi)
    return np.where(d < 0.5, inner, outer)


@numba.njit(cache=True)
def _softplus(x):
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@numba.njit(cache=True)
def _arm_params(ctx, w0, b0, w1, b1, w2, b2, h0, h1, out):
    mlp3_row(ctx, w0, b0, w1, b1, w2, b2, h0, h1, out)
    return out[0], max(_softplus(out[1]), B_MIN)


@numba.njit(cache=True)
def _encode_plane_kernel(plane, n_min, n_max, w0, b0, w1, b1, w2, b2, buf):
    st = rc._new_encoder_state()
    ch, h, w = plane.shape
    size = n_max - n_min + 2
    p = np.empty(size)
    cdf = np.zeros(size + 1, dtype=np.int64)
    ctx = np.zeros(4)
    h0 = np.empty(w0.shape[1])
    h1 = np.empty(w1.shape[1])
    out = np.empty(2)
    for k in range(ch):
        for i in range(h):
            for j in range(w):
                ctx[0] = plane[k, i - 1, j - 1] if (i > 0 and j > 0) else 0.0
                ctx[1] = plane[k, i - 1, j] if i > 0 else 0.0
                ctx[2] = plane[k, i - 1, j + 1] if (i > 0 and j + 1 < w) else 0.0
                ctx[3] = plane[k, i, j - 1] if j > 0 else 0.0
                mu, b = _arm_params(ctx, w0, b0, w1, b1, w2, b2, h0, h1, out)
                _cdf.laplace_cdf_table(mu, b, n_min, n_max, p, cdf)
                s = plane[k, i, j] - n_min
                rc.enc_freq(st, buf, cdf[s], cdf[s + 1] - cdf[s])
    rc.enc_finish(st, buf)
    return st[5]


@numba.njit(cache=True, nogil=True)
def _decode_plane_kernel(data, ch, h, w, n_min, n_max, w0, b0, w1, b1, w2, b2, plane):
    dst = rc._new_decoder_state(data)
    size = n_max - n_min + 2
    p = np.empty(size)
    cdf = np.zeros(size + 1, dtype=np.int64)
    ctx = np.zeros(4)
    h0 = np.empty(w0.shape[1])
    h1 = np.empty(w1.shape[1])
    out = np.empty(2)
    first_error = -1
    t = 0
    for k in range(ch):
        for i in range(h):
            for j in range(w):
                ctx[0] = plane[k, i - 1, j - 1] if (i > 0 and j > 0) else 0.0
                ctx[1] = plane[k, i - 1, j] if i > 0 else 0.0
                ctx[2] = plane[k, i - 1, j + 1] if (i > 0 and j + 1 < w) else 0.0
                ctx[3] = plane[k, i, j - 1] if j > 0 else 0.0
                mu, b = _arm_params(ctx, w0, b0, w1, b1, w2, b2, h0, h1, out)
                _cdf.laplace_cdf_table(mu, b, n_min, n_max, p, cdf)
                s = rc.dec_symbol(dst, data, cdf)
                if s == size - 1:
                    dst[3] = np.uint64(1)  # escape never occurs in a valid plane stream
                    s = 0
                if first_error < 0 and dst[3] != np.uint64(0):
                    first_error = t
                plane[k, i, j] = n_min + s
                t += 1
    return first_error


def _arm_arrays(weights: MlpWeights):
    if weights.dims[0] != 4 or weights.dims[-1] != 2 or len(weights.weights) != 3:
        raise ValueError("spatial model must map 4 context values to 2 outputs through 2 hidden layers")
    return [np.ascontiguousarray(a, dtype=np.float64) for a in weights.params()]


def encode_plane(plane: np.ndarray, weights: MlpWeights) -> bytes:
    """Stream = header (n_min i16, n_max i16, payload length u32) + range-coded payload."""
    plane = np.ascontiguousarray(plane, dtype=np.int64)
    if plane.ndim != 3 or plane.size == 0:
        raise ValueError("expected a non-empty (ch, H, W) plane")
    n_min = min(int(plane.min()), 0)
    n_max = max(int(plane.max()), 0)
    if n_min < -(2**15) or n_max > 2**15 - 1 or n_max - n_min + 2 >= _cdf.PROB_TOTAL:
        raise PlaneStreamError("plane values exceed the 16-bit symbol range")
    buf = np.zeros(8 * plane.size + 64, dtype=np.uint8)
    n = _encode_plane_kernel(plane, n_min, n_max, *_arm_arrays(weights), buf)
    payload = buf[:n].tobytes()
    return _STREAM_HEADER.pack(n_min, n_max, len(payload)) + payload


def stream_payload(stream: bytes) -> tuple[int, int, bytes]:
    if len(stream) < _STREAM_HEADER.size:
        raise PlaneStreamError("truncated stream header")
    n_min, n_max, length = _STREAM_HEADER.unpack_from(stream, 0)
    payload = stream[_STREAM_HEADER.size :]
    if len(payload) != length:
        raise PlaneStreamError(f"payload is {len(payload)} bytes, header says {length}")
    if not n_min <= 0 <= n_max:
        raise PlaneStreamError("corrupt symbol range")
    return n_min, n_max, payload


def decode_plane(stream: bytes, weights: MlpWeights, shape: tuple[int, int, int]) -> np.ndarray:
    if len(shape) != 3 or min(shape) <= 0:
        raise ValueError(f"bad plane shape {shape}")
    n_min, n_max, payload = stream_payload(stream)
    plane = np.zeros(shape, dtype=np.int64)
    data = np.frombuffer(payload, dtype=np.uint8)
    err = _decode_plane_kernel(data, *shape, n_min, n_max, *_arm_arrays(weights), plane)
    if err >= 0:
        raise PlaneStreamError(f"corrupt payload (first bad symbol {err})")
    return plane


def decode_plane_prefix(stream: bytes, weights: MlpWeights, shape) -> tuple[np.ndarray, int]:
    """Best-effort decode; returns the plane and the index of the first symbol read past a fault (-1 if none)."""
    n_min, n_max, _ = struct.unpack_from("<hhI", stream, 0)
    data = np.frombuffer(stream[_STREAM_HEADER.size :], dtype=np.uint8)
    plane = np.zeros(shape, dtype=np.int64)
    err = _decode_plane_kernel(data, *shape, n_min, n_max, *_arm_arrays(weights), plane)
    return plane, int(err)


def plane_rate_estimate(plane: np.ndarray, weights: MlpWeights) -> float:
    """-sum log2 p over a sub-plane with the 2**-16 floor."""
    ctx = context_stack(plane).reshape(-1, 4)
    mu, b = arm_predict(weights, ctx)
    p = laplace_bin_prob(np.asarray(plane, dtype=np.float64).reshape(-1), mu, b)
    return float(-np.log2(np.maximum(p, 2.0**-16)).sum())


def code_all_planes(sub_planes: list[np.ndarray], weights: MlpWeights) -> list[bytes]:
    streams = []
    for idx, plane in enumerate(sub_planes):
        try:
            streams.append(encode_plane(plane, weights))
        except ValueError as exc:
            raise PlaneStreamError(str(exc), idx) from exc
    return streams


def decode_all_planes(streams: list[bytes], weights: MlpWeights, shape, parallel: bool = False) -> list[np.ndarray]:
    """Decode the independent streams, optionally on a thread pool (the kernel releases the GIL)."""

    def one(idx):
        try:
            return decode_plane(streams[idx], weights, shape)
        except ValueError as exc:
            raise PlaneStreamError(str(exc), idx) from exc

    if parallel:
        with ThreadPoolExecutor(max_workers=len(streams)) as pool:
            return list(pool.map(one, range(len(streams))))
    return [one(i) for i in range(len(streams))]
