"""Range coding of the normalized anchor attributes.

The stream is group-major: chunk 1, offsets, scaling, then chunks 2..5, each
group holding every anchor in file order. Parameters for one group are
predicted for all anchors at once (the decoder has everything it needs once
the earlier groups are decoded), so the MLPs run batched on both sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from . import _cdf, rangecoder as rc
from .entropy import (
    ALPHABET_SIGMAS,
    ESCAPE_EG_ORDER,
    GROUPS,
    MAX_HALF_WIDTH,
    MIN_HALF_WIDTH,
    SYMBOL_CAP,
    N_CHUNKS,
    EntropyModelWeights,
    GroupParams,
    carm_predict,
    hyper_decode,
    per_anchor_bits,
    quantize_attr,
    symbol_bits,
)
from .hyperprior import QuantizedPlanes, query_plane_features
from .scene import ATTR_DIM

_TABLE_SIZE = 2 * MAX_HALF_WIDTH + 2


class AttributeStreamError(ValueError):
    pass


@dataclass
class AttributeCode:
    payload: bytes
    symbols: list[np.ndarray]  # per group, coding order
    params: list[GroupParams]
    recon: np.ndarray  # dequantized normalized attributes (N, 86)


@numba.njit(cache=True)
def table_half_width(sigma, q):
    h = math.ceil(ALPHABET_SIGMAS * sigma / q)
    if h < MIN_HALF_WIDTH:
        return MIN_HALF_WIDTH
    if h > MAX_HALF_WIDTH:
        return MAX_HALF_WIDTH
    return int(h)


@numba.njit(cache=True)
def _encode_overflow(st, buf, x, negative):
    """Exp-Golomb (order ESCAPE_EG_ORDER) of x >= 0, then the sign bit."""
    k = ESCAPE_EG_ORDER
    y = x + (1 << k)
    top = 0
    while (y >> (top + 1)) > 0:
        top += 1
    # prefix bits go one per call, as the decoder reads them; a single
    # multi-bit call renormalizes at different points
    for _ in range(top - k):
        rc.enc_bypass(st, buf, np.uint64(0), 1)
    rc.enc_bypass(st, buf, np.uint64(1), 1)
    rc.enc_bypass(st, buf, np.uint64(y - (1 << top)), top)
    rc.enc_bypass(st, buf, np.uint64(1 if negative else 0), 1)


@numba.njit(cache=True)
def _decode_overflow(dst, data):
    k = ESCAPE_EG_ORDER
    zeros = 0
    while rc.dec_bypass(dst, data, 1) == 0:
        zeros += 1
        if zeros > 20:
            return -1
    top = zeros + k
    y = (1 << top) + np.int64(rc.dec_bypass(dst, data, top))
    return y - (1 << k)


@numba.njit(cache=True)
def _encode_group(st, buf, symbols, sigma, q, p, cdf):
    n, d = symbols.shape
    for r in range(n):
        for c in range(d):
            h = table_half_width(sigma[r, c], q[r])
            size = _cdf.gauss_cdf_table(sigma[r, c], q[r], -h, h, p, cdf)
            s = symbols[r, c]
            if -h <= s <= h:
                k = s + h
            else:
                k = size - 1
            rc.enc_freq(st, buf, cdf[k], cdf[k + 1] - cdf[k])
            if k == size - 1:
                _encode_overflow(st, buf, abs(s) - h - 1, s < 0)


@numba.njit(cache=True)
def _decode_group(dst, data, sigma, q, out, p, cdf):
    n, d = out.shape
    for r in range(n):
        for c in range(d):
            h = table_half_width(sigma[r, c], q[r])
            size = _cdf.gauss_cdf_table(sigma[r, c], q[r], -h, h, p, cdf)
            k = rc.dec_symbol(dst, data, cdf[: size + 1])
            if k == size - 1:
                m = _decode_overflow(dst, data)
                neg = rc.dec_bypass(dst, data, 1)
                if m < 0 or h + 1 + m > SYMBOL_CAP:
                    dst[rc._ERR] = np.uint64(1)
                    m = 0
                out[r, c] = -(h + 1 + m) if neg else h + 1 + m
            else:
                out[r, c] = k - h


def hyper_context(qplanes: QuantizedPlanes, u, v) -> np.ndarray:
    """Plane features of the dequantized planes at the anchors' (u, v)."""
    return query_plane_features(qplanes.dequantize(), u, v)


def _group_params(weights: EntropyModelWeights, k: int, g, gamma, hyper_cache, recon):
    """Exact parameters of coding group ``k`` (index into GROUPS)."""
    if k < 3:
        if hyper_cache[0] is None:
            hyper_cache[0] = hyper_decode(weights.hyper, g, gamma, exact=True)
        return hyper_cache[0][k]
    i = k - 1  # chunk index 2..5
    prev = recon[:, : 10 * (i - 1)]
    return carm_predict(weights.carm[i - 2], i, g, gamma, prev, exact=True)


def _scratch():
    return np.empty(_TABLE_SIZE), np.zeros(_TABLE_SIZE + 1, dtype=np.int64)


def quantize_all(weights: EntropyModelWeights, g, gamma, attrs) -> tuple[list, list, np.ndarray]:
    """Symbols, parameters and dequantized values of every group, in coding order."""
    attrs = np.asarray(attrs, dtype=np.float64)
    recon = np.zeros_like(attrs)
    cache = [None]
    symbols, params = [], []
    for k, (_, cols) in enumerate(GROUPS):
        gp = _group_params(weights, k, g, gamma, cache, recon)
        n, a_hat = quantize_attr(attrs[:, cols], gp.mu, gp.q)
        recon[:, cols] = a_hat
        symbols.append(n)
        params.append(gp)
    return symbols, params, recon


def encode_attributes(weights: EntropyModelWeights, g, gamma, attrs) -> AttributeCode:
    attrs = np.asarray(attrs, dtype=np.float64)
    if attrs.ndim != 2 or attrs.shape[1] != ATTR_DIM:
        raise ValueError(f"attributes must be (N, {ATTR_DIM})")
    symbols, params, recon = quantize_all(weights, g, gamma, attrs)
    buf = np.zeros(8 * attrs.size + 64, dtype=np.uint8)
    st = rc._new_encoder_state()
    p, cdf = _scratch()
    for n, gp in zip(symbols, params):
        _encode_group(st, buf, np.ascontiguousarray(n), np.ascontiguousarray(gp.sigma),
                      np.ascontiguousarray(gp.q), p, cdf)
    rc.enc_finish(st, buf)
    return AttributeCode(buf[: int(st[rc._POS])].tobytes(), symbols, params, recon)


def decode_attributes(payload: bytes, weights: EntropyModelWeights, g, gamma) -> AttributeCode:
    n_anchors = np.atleast_2d(g).shape[0]
    data = np.frombuffer(payload, dtype=np.uint8)
    dst = rc._new_decoder_state(data)
    p, cdf = _scratch()
    recon = np.zeros((n_anchors, ATTR_DIM))
    cache = [None]
    symbols, params = [], []
    for k, (name, cols) in enumerate(GROUPS):
        gp = _group_params(weights, k, g, gamma, cache, recon)
        out = np.zeros((n_anchors, cols.stop - cols.start), dtype=np.int64)
        _decode_group(dst, data, np.ascontiguousarray(gp.sigma), np.ascontiguousarray(gp.q), out, p, cdf)
        if rc.decoder_failed(dst):
            raise AttributeStreamError(f"attribute stream corrupt in group {name}")
        recon[:, cols] = gp.mu + out * gp.q[:, None]
        symbols.append(out)
        params.append(gp)
    return AttributeCode(bytes(payload), symbols, params, recon)


def rate_estimate_attrs(weights: EntropyModelWeights, g, gamma, attrs, rows=None) -> float:
    """-sum log2 p (floored at 2**-16) of the quantized attributes of ``rows`` (all if None).

    Anchors are coded independently of each other, so the estimate for a
    subset is the sum over its rows.
    """
    if rows is not None:
        g, gamma, attrs = np.atleast_2d(g)[rows], np.atleast_2d(gamma)[rows], np.asarray(attrs)[rows]
    symbols, params, _ = quantize_all(weights, g, gamma, attrs)
    return symbol_bits(symbols, params)


def anchor_bits(code: AttributeCode) -> np.ndarray:
    """Estimated bits per anchor (the per-anchor bit allocation histogram source)."""
    return per_anchor_bits(code.symbols, code.params)


__all__ = [
    "AttributeCode",
    "AttributeStreamError",
    "N_CHUNKS",
    "anchor_bits",
    "decode_attributes",
    "encode_attributes",
    "hyper_context",
    "quantize_all",
    "rate_estimate_attrs",
]
